#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dlisa/autodiff.hpp"
#include "dlisa/config.hpp"

namespace dlisa::losses {

using ad::Tape;
using ad::Var;

// Sum of all M candidate gate probabilities (expected proposal count).
Var loss_dyn(Var alphas);

// Mean binary cross-entropy between proposal probabilities and 0/1 labels.
Var loss_ref_multi(Var probs, std::span<const int> labels);

// Cross-entropy of the proposal logits against the matched index; a sample
// without a match contributes a constant zero.
Var loss_ref_single(Tape& tape, Var logits, std::optional<std::size_t> target);

// Symmetric InfoNCE over a batch: cosine similarities / temperature, cross
// entropy over rows (object -> sentence) and columns (sentence -> object),
// averaged. Pair i is the positive for row i; the rest of the batch are the
// negatives. Fewer than two pairs give a constant zero.
Var loss_contrastive(Tape& tape, std::span<const Var> objects, std::span<const Var> sentences,
                     double temperature);

struct LossParts {
  Var ref;
  Var ctr;
  Var dyn;
};

// lambda_ref * ref + lambda_ctr * ctr + lambda_dyn * dyn. Missing parts count as 0.
Var loss_total(Tape& tape, const LossParts& parts, const LossConfig& cfg);
double loss_total(double ref, double ctr, double dyn, const LossConfig& cfg);

}  // namespace dlisa::losses
