#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlisa/autodiff.hpp"
#include "dlisa/config.hpp"
#include "dlisa/fusion.hpp"
#include "dlisa/metrics.hpp"
#include "dlisa/rng.hpp"
#include "dlisa/scene.hpp"
#include "dlisa/synthdata.hpp"
#include "dlisa/vision.hpp"

namespace dlisa::train {

using ad::Tape;
using geometry::Box3;

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Sample {
  const Scene* scene = nullptr;
  const QueryRecord* query = nullptr;
};

// Multi mode keeps every query; single and given-proposals keep single-target ones.
std::vector<Sample> make_samples(const std::vector<Scene>& scenes, Mode mode);

// All trainable state plus the frozen encoders.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const vision::VisionModule& vision() const { return vision_; }
  const fusion::FusionModel& fusion() const { return fusion_; }

  ad::Matrix word_features(const QueryRecord& q) const;

 private:
  RunConfig cfg_;
  ad::ParamStore params_;
  vision::VisionModule vision_;
  fusion::FusionModel fusion_;
};

// Everything about one sample that is fixed for a single optimisation step.
struct SamplePlan {
  vision::VisionPlan vision;
  geometry::DistanceMatrix dist;
  ad::Matrix words;
  std::vector<int> labels;                   // multi-target labels per proposal
  std::optional<std::size_t> single_target;  // single-target index
  std::vector<Box3> targets;
};

SamplePlan plan_sample(Model& model, const Sample& s);

struct SampleForward {
  vision::VisionOutput vision;
  fusion::FusionOutput fusion;
};

SampleForward forward_sample(Tape& tape, Model& model, const Sample& s, const SamplePlan& plan);

struct BatchLoss {
  ad::Var total;
  double ref = 0.0;
  double ctr = 0.0;
  double dyn = 0.0;
  double proposals = 0.0;   // summed over the batch
  double candidates = 0.0;  // summed over the batch
};

// Sum over samples of lambda_ref * L_ref + lambda_dyn * L_dyn, plus
// lambda_ctr * L_ctr over the batch.
BatchLoss batch_loss(Tape& tape, Model& model, std::span<const Sample> samples,
                     std::span<const SamplePlan> plans);

// Decoupled weight decay Adam: p -= lr * wd * p, then the bias-corrected Adam step.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}
  void step(ad::ParamStore& params);
  std::size_t steps() const { return step_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j, const ad::ParamStore& params);

 private:
  OptimConfig cfg_;
  std::size_t step_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ref = 0.0;
  double ctr = 0.0;
  double dyn = 0.0;
  double mean_proposals = 0.0;
  double mean_candidates = 0.0;
  std::optional<double> val_score;  // overall F1 (multi) or Acc (single, given-proposals)
};

struct TrainState {
  explicit TrainState(const RunConfig& cfg) : model(cfg), optimizer(cfg.optim), rng(mix_seed(cfg.seed, 77)) {}
  Model model;
  AdamW optimizer;
  Rng rng;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  std::size_t epochs = 0;      // 0: use config epochs
  std::size_t eval_every = 1;  // 0 disables validation
  std::function<void(const EpochRecord&)> on_epoch;
};

EpochRecord train_epoch(TrainState& state, std::span<const Sample> train);
std::vector<EpochRecord> train(TrainState& state, std::span<const Sample> train_set,
                               std::span<const Sample> val_set, const TrainOptions& opt = {});

// ---- evaluation -----------------------------------------------------------------

struct SamplePrediction {
  std::vector<double> probs;
  std::vector<Box3> proposals;
  std::size_t candidates = 0;
};

std::vector<SamplePrediction> predict(Model& model, std::span<const Sample> samples);

struct EvalReport {
  Mode mode = Mode::Multi;
  double tau_pred = 0.25;
  metrics::F1Report f1;        // multi mode
  double accuracy = 0.0;       // single / given-proposals mode
  double mean_proposals = 0.0;
  double mean_candidates = 0.0;
  std::size_t samples = 0;

  double score() const { return mode == Mode::Multi ? f1.overall : accuracy; }
  nlohmann::json to_json() const;
  std::string to_table() const;
};

EvalReport score_predictions(const Model& model, std::span<const Sample> samples,
                             std::span<const SamplePrediction> preds, double tau_pred);
EvalReport evaluate(Model& model, std::span<const Sample> samples, double tau_pred);

struct SweepResult {
  double best_tau = 0.0;
  std::vector<std::pair<double, double>> table;  // (tau_pred, overall score)
  std::vector<EvalReport> reports;
};

// Largest overall score wins; ties go to the earlier grid entry.
SweepResult sweep_tau_pred(Model& model, std::span<const Sample> samples, const std::vector<double>& grid);
SweepResult sweep_predictions(const Model& model, std::span<const Sample> samples,
                              std::span<const SamplePrediction> preds, const std::vector<double>& grid);

// ---- checkpoints ---------------------------------------------------------------------

nlohmann::json checkpoint_json(const TrainState& state);
void save_checkpoint(const std::filesystem::path& file, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& file);
TrainState state_from_json(const nlohmann::json& j);

void write_history_csv(const std::filesystem::path& file, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& file);

// ---- gradient check ---------------------------------------------------------------------

struct GradcheckSpec {
  RunConfig cfg;
  synth::SceneConfig scene;
  std::uint64_t seed = 5;
  std::size_t samples = 2;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::string fault_param;  // negative control
};

// Small instance defaults: d = 8, two layers, two views, at most six proposals.
GradcheckSpec small_gradcheck_spec(std::uint64_t seed);

// Finite-difference check of the full composite loss on frozen sample plans.
ad::FdReport gradcheck_all(const GradcheckSpec& spec);

}  // namespace dlisa::train
