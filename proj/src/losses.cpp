#include "dlisa/losses.hpp"

#include <stdexcept>

namespace dlisa::losses {

Var loss_dyn(Var alphas) { return ad::sum(alphas); }

Var loss_ref_multi(Var probs, std::span<const int> labels) {
  std::vector<double> y(labels.begin(), labels.end());
  return ad::bce_mean(probs, y);
}

Var loss_ref_single(Tape& tape, Var logits, std::optional<std::size_t> target) {
  if (!target) return tape.constant(ad::Matrix(1, 1, 0.0));
  return ad::cross_entropy(logits, *target);
}

Var loss_contrastive(Tape& tape, std::span<const Var> objects, std::span<const Var> sentences,
                     double temperature) {
  if (objects.size() != sentences.size())
    throw std::invalid_argument("loss_contrastive: object and sentence batches differ in size");
  if (!(temperature > 0.0)) throw std::invalid_argument("loss_contrastive: temperature must be positive");
  const std::size_t b = objects.size();
  if (b < 2) return tape.constant(ad::Matrix(1, 1, 0.0));

  Var o = ad::l2_normalize_rows(ad::stack_rows(objects));
  Var s = ad::l2_normalize_rows(ad::stack_rows(sentences));
  Var logits = ad::scale(ad::matmul(o, ad::transpose(s)), 1.0 / temperature);
  Var eye = tape.constant(ad::Matrix::identity(b));
  Var rows = ad::sum(ad::mul(ad::log_softmax_rows(logits), eye));
  Var cols = ad::sum(ad::mul(ad::log_softmax_rows(ad::transpose(logits)), eye));
  return ad::scale(ad::add(rows, cols), -0.5 / static_cast<double>(b));
}

Var loss_total(Tape& tape, const LossParts& parts, const LossConfig& cfg) {
  Var total = tape.constant(ad::Matrix(1, 1, 0.0));
  if (parts.ref.valid()) total = ad::add(total, ad::scale(parts.ref, cfg.lambda_ref));
  if (parts.ctr.valid()) total = ad::add(total, ad::scale(parts.ctr, cfg.lambda_ctr));
  if (parts.dyn.valid()) total = ad::add(total, ad::scale(parts.dyn, cfg.lambda_dyn));
  return total;
}

double loss_total(double ref, double ctr, double dyn, const LossConfig& cfg) {
  return cfg.lambda_ref * ref + cfg.lambda_ctr * ctr + cfg.lambda_dyn * dyn;
}

}  // namespace dlisa::losses
