#include "dlisa/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace dlisa::fusion {

namespace {

// Scaled dot-product attention with an optional per-head logit transform.
template <class MixLogits>
Var multi_head(Var q, Var k, Var v, std::size_t heads, MixLogits mix) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: heads must divide d");
  if (k.cols() != d || v.rows() != k.rows())
    throw std::invalid_argument("attention: incompatible Q/K/V shapes");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var out;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : ad::slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : ad::slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : ad::slice_cols(v, h * (v.cols() / heads), v.cols() / heads);
    Var logits = mix(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    Var head_out = ad::matmul(ad::softmax_rows(logits), vh);
    out = (h == 0) ? head_out : ad::concat_cols(out, head_out);
  }
  return out;
}

Var distance_constant(Tape& tape, const geometry::DistanceMatrix& dist, bool normalize) {
  Matrix m(dist.n, dist.n, dist.values);
  if (normalize) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, m(i, j));
      if (mx > 0.0)
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) /= mx;
    }
  }
  return tape.constant(std::move(m));
}

}  // namespace

Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return m;
}

Var pool_sentence(Var words, Var w, Var b) {
  if (words.rows() == 0) throw std::invalid_argument("pool_sentence: no words");
  Var scores = ad::linear(words, w, b);                       // L x 1
  Var weights = ad::softmax_rows(ad::transpose(scores));      // 1 x L
  return ad::matmul(weights, words);                          // 1 x d
}

SpatialScores spatial_scores(Var feats, Var g, Var w, Var b) {
  const std::size_t n = feats.rows();
  Var joint = ad::concat_cols(ad::repeat_rows(g, n), feats);  // N x (d + d_o)
  Var beta = ad::sigmoid(ad::linear(joint, w, b));            // N x 1
  return {beta, ad::repeat_cols(beta, n)};
}

Var lisa(Var feats, Var g, const geometry::DistanceMatrix& dist, const AttentionWeights& w,
         Var beta_w, Var beta_b, const LisaOptions& opt, SpatialScores* scores_out) {
  Tape& tape = *feats.tape();
  const std::size_t n = feats.rows();
  if (dist.n != n) throw std::invalid_argument("lisa: distance matrix does not match proposal count");

  Var bmat;
  if (opt.force_b) {
    bmat = tape.constant(Matrix(n, n, *opt.force_b));
  } else {
    SpatialScores s = spatial_scores(feats, g, beta_w, beta_b);
    bmat = s.b;
    if (scores_out) *scores_out = s;
  }
  Var one_minus_b = ad::affine(bmat, -1.0, 1.0);
  Var spatial = ad::mul(bmat, distance_constant(tape, dist, opt.normalize_distance));

  Var q = ad::matmul(feats, w.wq);
  Var k = ad::matmul(feats, w.wk);
  Var v = ad::matmul(feats, w.wv);
  return multi_head(q, k, v, opt.heads,
                    [&](Var scaled) { return ad::add(ad::mul(one_minus_b, scaled), spatial); });
}

Var word_self_attention(Var words, const AttentionWeights& w, std::size_t heads) {
  Var q = ad::matmul(words, w.wq);
  Var k = ad::matmul(words, w.wk);
  Var v = ad::matmul(words, w.wv);
  return multi_head(q, k, v, heads, [](Var s) { return s; });
}

Var cross_attention(Var fs, Var ft, const AttentionWeights& w, std::size_t heads) {
  if (fs.cols() != w.wq.rows() || ft.cols() != w.wk.rows())
    throw std::invalid_argument("cross_attention: feature width does not match projections");
  Var q = ad::matmul(fs, w.wq);
  Var k = ad::matmul(ft, w.wk);
  Var v = ad::matmul(ft, w.wv);
  return multi_head(q, k, v, heads, [](Var s) { return s; });
}

void FusionModel::register_params(ad::ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d;
  auto attn = [&](const std::string& prefix) {
    store.add(prefix + ".wq", uniform_init(d, d, d, rng));
    store.add(prefix + ".wk", uniform_init(d, d, d, rng));
    store.add(prefix + ".wv", uniform_init(d, d, d, rng));
  };
  auto norm = [&](const std::string& prefix) {
    store.add(prefix + ".gain", Matrix(1, d, 1.0));
    store.add(prefix + ".bias", Matrix(1, d, 0.0));
  };
  attn("fusion.words");
  store.add("fusion.pool.w", uniform_init(d, 1, d, rng));
  store.add("fusion.pool.b", uniform_init(1, 1, d, rng));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "fusion.layer" + std::to_string(l);
    norm(p + ".ln_lisa");
    attn(p + ".lisa");
    store.add(p + ".beta.w", uniform_init(2 * d, 1, 2 * d, rng));
    store.add(p + ".beta.b", uniform_init(1, 1, 2 * d, rng));
    norm(p + ".ln_cross");
    attn(p + ".cross");
  }
  norm("fusion.head.ln");
  store.add("fusion.head.w1", uniform_init(d, d, d, rng));
  store.add("fusion.head.b1", uniform_init(1, d, d, rng));
  store.add("fusion.head.w2", uniform_init(d, 1, d, rng));
  store.add("fusion.head.b2", uniform_init(1, 1, d, rng));
}

FusionOutput FusionModel::forward(Tape& tape, ad::ParamStore& store, Var feats, Var words,
                                  const geometry::DistanceMatrix& dist,
                                  std::optional<double> force_b) const {
  if (feats.cols() != cfg_.d || words.cols() != cfg_.d)
    throw std::invalid_argument("FusionModel::forward: feature width must equal d");
  if (feats.rows() == 0) throw std::invalid_argument("FusionModel::forward: no proposals");
  auto P = [&](const std::string& name) { return tape.param(store.get(name)); };
  auto attn = [&](const std::string& prefix) {
    return AttentionWeights{P(prefix + ".wq"), P(prefix + ".wk"), P(prefix + ".wv")};
  };
  auto norm = [&](Var x, const std::string& prefix) {
    return ad::layer_norm_rows(x, P(prefix + ".gain"), P(prefix + ".bias"));
  };

  FusionOutput out;
  Var text = word_self_attention(words, attn("fusion.words"), cfg_.heads);
  out.sentence = pool_sentence(words, P("fusion.pool.w"), P("fusion.pool.b"));

  LisaOptions opt;
  opt.heads = cfg_.heads;
  opt.normalize_distance = cfg_.normalize_distance;
  opt.force_b = force_b;
  if (!cfg_.lisa && !force_b) opt.force_b = 0.0;

  Var x = feats;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "fusion.layer" + std::to_string(l);
    SpatialScores scores;
    Var h = norm(x, p + ".ln_lisa");
    x = ad::add(x, lisa(h, out.sentence, dist, attn(p + ".lisa"), P(p + ".beta.w"), P(p + ".beta.b"),
                        opt, &scores));
    if (scores.beta.valid()) out.betas.push_back(scores.beta);
    Var hc = norm(x, p + ".ln_cross");
    x = ad::add(x, cross_attention(hc, text, attn(p + ".cross"), cfg_.heads));
  }
  out.fused = x;
  Var hidden = ad::gelu(ad::linear(norm(x, "fusion.head.ln"), P("fusion.head.w1"), P("fusion.head.b1")));
  out.logits = ad::linear(hidden, P("fusion.head.w2"), P("fusion.head.b2"));
  out.probs = ad::sigmoid(out.logits);
  return out;
}

std::vector<std::size_t> predict_multi(std::span<const double> probs, double tau_pred) {
  if (!(tau_pred > 0.0 && tau_pred < 1.0))
    throw std::invalid_argument("predict_multi: tau_pred must lie in (0, 1)");
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < probs.size(); ++n)
    if (probs[n] > tau_pred) idx.push_back(n);
  return idx;
}

std::vector<geometry::Box3> predict_multi(std::span<const double> probs,
                                          std::span<const geometry::Box3> boxes, double tau_pred) {
  if (probs.size() != boxes.size()) throw std::invalid_argument("predict_multi: size mismatch");
  std::vector<geometry::Box3> out;
  for (std::size_t n : predict_multi(probs, tau_pred)) out.push_back(boxes[n]);
  return out;
}

std::size_t predict_single(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("predict_single: no proposals");
  std::size_t best = 0;
  for (std::size_t n = 1; n < probs.size(); ++n)
    if (probs[n] > probs[best]) best = n;
  return best;
}

geometry::Box3 predict_single(std::span<const double> probs, std::span<const geometry::Box3> boxes) {
  if (probs.size() != boxes.size()) throw std::invalid_argument("predict_single: size mismatch");
  return boxes[predict_single(probs)];
}

}  // namespace dlisa::fusion
