#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dlisa {

enum class Mode { Multi, Single, GivenProposals };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct ModelConfig {
  std::size_t d = 128;  // fused feature width d_o == d (residual stream) and word feature width
  std::size_t d3 = 32;  // detector feature width
  std::size_t d2 = 32;  // toy image encoder width
  std::size_t layers = 2;
  std::size_t heads = 1;
  std::size_t views = 4;
  std::size_t render_res = 32;
  std::size_t pose_hidden = 16;
  double tau_f = 0.5;
  double tau_nms = 0.4;
  bool lisa = true;                 // false forces B = 0 (plain self-attention)
  bool normalize_distance = false;  // divide each row of D by its max
  std::uint64_t encoder_seed = 7;   // seeds the fixed toy image/text encoders
};

struct LossConfig {
  double lambda_det = 1.0;  // kept for completeness; no detection term is computed
  double lambda_ref = 1.0;
  double lambda_ctr = 1.0;
  double lambda_dyn = 5.0;
  double tau_train = 0.25;
  double temperature = 0.07;
};

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 4;
  std::size_t epochs = 20;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  Mode mode = Mode::Multi;
  std::uint64_t seed = 1;
  double tau_pred = 0.25;
  std::vector<double> tau_pred_grid{0.05, 0.1, 0.15, 0.2, 0.25};
  double eval_iou = 0.5;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);

}  // namespace dlisa
