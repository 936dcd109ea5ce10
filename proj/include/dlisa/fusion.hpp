#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlisa/autodiff.hpp"
#include "dlisa/config.hpp"
#include "dlisa/geometry.hpp"
#include "dlisa/rng.hpp"

namespace dlisa::fusion {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct AttentionWeights {
  Var wq, wk, wv;
};

// g = sum_j a_j t_j with a = softmax over the per-word scores words * w + b.
// words: L x d, w: d x 1, b: 1 x 1. Returns 1 x d.
Var pool_sentence(Var words, Var w, Var b);

struct SpatialScores {
  Var beta;  // N x 1, sigmoid(Linear(g (+) f_i))
  Var b;     // N x N, row i constant beta_i
};

// feats: N x d_o, g: 1 x d, w: (d + d_o) x 1, b: 1 x 1.
SpatialScores spatial_scores(Var feats, Var g, Var w, Var b);

struct LisaOptions {
  std::size_t heads = 1;
  bool normalize_distance = false;
  // Replaces the predicted B with a constant matrix (0 gives plain
  // self-attention, 1 gives pure distance attention).
  std::optional<double> force_b;
};

// softmax((1 - B) (.) Q K^T / sqrt(d_h) + B (.) D) V with Q = F Wq etc.
// With several heads the columns of Q, K, V are split evenly and the same B
// and D bias every head.
Var lisa(Var feats, Var g, const geometry::DistanceMatrix& dist, const AttentionWeights& w,
         Var beta_w, Var beta_b, const LisaOptions& opt = {}, SpatialScores* scores_out = nullptr);

// softmax(Q K^T / sqrt(d_h)) V over the words themselves. words: L x d.
Var word_self_attention(Var words, const AttentionWeights& w, std::size_t heads = 1);

// softmax(Qc Kc^T / sqrt(d_h)) Vc with Qc = Fs Wq, Kc = Ft Wk, Vc = Ft Wv.
Var cross_attention(Var fs, Var ft, const AttentionWeights& w, std::size_t heads = 1);

struct FusionOutput {
  Var logits;    // N x 1
  Var probs;     // N x 1
  Var fused;     // N x d, output of the last transformer layer
  Var sentence;  // 1 x d
  std::vector<Var> betas;  // per layer, N x 1
};

// Word self-attention, sentence pooling, `layers` x (LISA block, cross-attention
// block) with pre-normalisation and residuals, then a 2-layer GELU MLP head.
class FusionModel {
 public:
  explicit FusionModel(const ModelConfig& cfg) : cfg_(cfg) {}

  void register_params(ad::ParamStore& store, Rng& rng) const;

  FusionOutput forward(Tape& tape, ad::ParamStore& store, Var feats, Var words,
                       const geometry::DistanceMatrix& dist,
                       std::optional<double> force_b = std::nullopt) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
};

// Indices n with p_n > tau_pred, ascending.
std::vector<std::size_t> predict_multi(std::span<const double> probs, double tau_pred);
std::vector<geometry::Box3> predict_multi(std::span<const double> probs,
                                          std::span<const geometry::Box3> boxes, double tau_pred);
// argmax, lowest index on ties.
std::size_t predict_single(std::span<const double> probs);
geometry::Box3 predict_single(std::span<const double> probs, std::span<const geometry::Box3> boxes);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialiser.
Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);

}  // namespace dlisa::fusion
