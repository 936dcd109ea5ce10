#include "dlisa/config.hpp"

#include <fstream>
#include <stdexcept>

namespace dlisa {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Multi: return "multi";
    case Mode::Single: return "single";
    case Mode::GivenProposals: return "given-proposals";
  }
  return "multi";
}

Mode mode_from_string(const std::string& s) {
  if (s == "multi") return Mode::Multi;
  if (s == "single") return Mode::Single;
  if (s == "given-proposals") return Mode::GivenProposals;
  throw std::invalid_argument("unknown mode '" + s + "' (expected multi, single, given-proposals)");
}

namespace {

void require_open_unit(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0))
    throw std::invalid_argument(std::string(name) + " must lie in (0, 1), got " + std::to_string(v));
}

}  // namespace

void RunConfig::validate() const {
  require_open_unit(model.tau_f, "tau_f");
  if (!(model.tau_nms >= 0.0 && model.tau_nms <= 1.0))
    throw std::invalid_argument("tau_nms must lie in [0, 1]");
  require_open_unit(loss.tau_train, "tau_train");
  require_open_unit(tau_pred, "tau_pred");
  for (double t : tau_pred_grid) require_open_unit(t, "tau_pred_grid entry");
  if (tau_pred_grid.empty()) throw std::invalid_argument("tau_pred_grid must not be empty");
  require_open_unit(eval_iou, "eval_iou");
  if (model.d == 0 || model.d3 == 0 || model.d2 == 0 || model.layers == 0 || model.views == 0 ||
      model.render_res == 0 || model.pose_hidden == 0)
    throw std::invalid_argument("model dimensions, layer count and view count must be positive");
  if (model.heads == 0 || model.d % model.heads != 0)
    throw std::invalid_argument("heads must be positive and divide d");
  if (loss.lambda_ref < 0 || loss.lambda_ctr < 0 || loss.lambda_dyn < 0 || loss.lambda_det < 0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (!(loss.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(optim.lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (optim.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d", c.d},
       {"d3", c.d3},
       {"d2", c.d2},
       {"layers", c.layers},
       {"heads", c.heads},
       {"views", c.views},
       {"render_res", c.render_res},
       {"pose_hidden", c.pose_hidden},
       {"tau_f", c.tau_f},
       {"tau_nms", c.tau_nms},
       {"lisa", c.lisa},
       {"normalize_distance", c.normalize_distance},
       {"encoder_seed", c.encoder_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d = j.value("d", d.d);
  c.d3 = j.value("d3", d.d3);
  c.d2 = j.value("d2", d.d2);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.views = j.value("views", d.views);
  c.render_res = j.value("render_res", d.render_res);
  c.pose_hidden = j.value("pose_hidden", d.pose_hidden);
  c.tau_f = j.value("tau_f", d.tau_f);
  c.tau_nms = j.value("tau_nms", d.tau_nms);
  c.lisa = j.value("lisa", d.lisa);
  c.normalize_distance = j.value("normalize_distance", d.normalize_distance);
  c.encoder_seed = j.value("encoder_seed", d.encoder_seed);
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"lambda_det", c.lambda_det}, {"lambda_ref", c.lambda_ref},   {"lambda_ctr", c.lambda_ctr},
       {"lambda_dyn", c.lambda_dyn}, {"tau_train", c.tau_train}, {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.lambda_det = j.value("lambda_det", d.lambda_det);
  c.lambda_ref = j.value("lambda_ref", d.lambda_ref);
  c.lambda_ctr = j.value("lambda_ctr", d.lambda_ctr);
  c.lambda_dyn = j.value("lambda_dyn", d.lambda_dyn);
  c.tau_train = j.value("tau_train", d.tau_train);
  c.temperature = j.value("temperature", d.temperature);
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  OptimConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"loss", c.loss},
       {"optim", c.optim},
       {"mode", to_string(c.mode)},
       {"seed", c.seed},
       {"tau_pred", c.tau_pred},
       {"tau_pred_grid", c.tau_pred_grid},
       {"eval_iou", c.eval_iou}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c.model = j.value("model", d.model);
  c.loss = j.value("loss", d.loss);
  c.optim = j.value("optim", d.optim);
  c.mode = mode_from_string(j.value("mode", to_string(d.mode)));
  c.seed = j.value("seed", d.seed);
  c.tau_pred = j.value("tau_pred", d.tau_pred);
  c.tau_pred_grid = j.value("tau_pred_grid", d.tau_pred_grid);
  c.eval_iou = j.value("eval_iou", d.eval_iou);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed config " + path + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

}  // namespace dlisa
