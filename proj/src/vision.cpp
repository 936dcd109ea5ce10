#include "dlisa/vision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "dlisa/fusion.hpp"

namespace dlisa::vision {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

std::string pose_prefix(std::size_t j) { return "vision.pose" + std::to_string(j); }

}  // namespace

// ---- gate --------------------------------------------------------------------

Var gate_alphas(Var w, Var b, std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("gate_alphas: no candidates");
  Tape& tape = *w.tape();
  Var s = tape.constant(Matrix::column({scores.begin(), scores.end()}));
  return ad::sigmoid(ad::linear(s, w, b));
}

std::vector<double> gate_alpha_values(double w, double b, std::span<const double> scores) {
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(sigmoid(w * s + b));
  return out;
}

ProposalSet select_proposals(const CandidateSet& candidates, std::span<const double> alphas, double tau_f,
                             double tau_nms) {
  if (!(tau_f > 0.0 && tau_f < 1.0)) throw std::invalid_argument("select_proposals: tau_f must lie in (0, 1)");
  if (alphas.size() != candidates.size())
    throw std::invalid_argument("select_proposals: alpha count differs from candidate count");
  if (candidates.size() == 0) throw std::invalid_argument("select_proposals: empty candidate set");

  std::vector<std::size_t> passed;
  for (std::size_t m = 0; m < alphas.size(); ++m)
    if (alphas[m] > tau_f) passed.push_back(m);

  ProposalSet out;
  if (passed.empty()) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < alphas.size(); ++m)
      if (alphas[m] > alphas[best]) best = m;
    out.fallback = true;
    out.origin = {best};
  } else {
    std::vector<Box3> boxes;
    std::vector<double> scores;
    for (std::size_t m : passed) {
      boxes.push_back(candidates.boxes[m]);
      scores.push_back(alphas[m]);
    }
    for (std::size_t k : geometry::nms(boxes, scores, tau_nms)) out.origin.push_back(passed[k]);
  }
  for (std::size_t m : out.origin) {
    out.boxes.push_back(candidates.boxes[m]);
    out.alphas.push_back(alphas[m]);
  }
  return out;
}

Var weight_3d(Var feats, Var alphas) { return ad::scale_rows(feats, alphas); }

// ---- cameras -------------------------------------------------------------------

std::vector<CameraPose> base_poses(std::size_t views) {
  if (views == 0) throw std::invalid_argument("base_poses: need at least one view");
  std::vector<CameraPose> out;
  for (std::size_t j = 0; j < views; ++j) {
    const double az = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(views);
    out.push_back({az, kBaseElevation, kBaseDistance});
  }
  return out;
}

Vec3 mean_size(std::span<const Box3> boxes) {
  if (boxes.empty()) throw std::invalid_argument("mean_size: no boxes");
  Vec3 q{0, 0, 0};
  for (const auto& b : boxes)
    for (int k = 0; k < 3; ++k) q[k] += b.size()[k];
  for (double& v : q) v /= static_cast<double>(boxes.size());
  return q;
}

void CameraRig::register_params(ad::ParamStore& store, Rng& rng) const {
  for (std::size_t j = 0; j < views_; ++j) {
    const std::string p = pose_prefix(j);
    store.add(p + ".w1", fusion::uniform_init(3, hidden_, 3, rng));
    store.add(p + ".b1", fusion::uniform_init(1, hidden_, 3, rng));
    store.add(p + ".w2", Matrix(hidden_, 3, 0.0));
    store.add(p + ".b2", Matrix(1, 3, 0.0));
  }
}

Var CameraRig::poses(Tape& tape, ad::ParamStore& store, const Vec3& q) const {
  const auto base = base_poses(views_);
  Var qbar = tape.constant(Matrix::row({q[0], q[1], q[2]}));
  std::vector<Var> rows;
  for (std::size_t j = 0; j < views_; ++j) {
    const std::string p = pose_prefix(j);
    Var hidden = ad::tanh(ad::linear(qbar, tape.param(store.get(p + ".w1")), tape.param(store.get(p + ".b1"))));
    Var offset = ad::linear(hidden, tape.param(store.get(p + ".w2")), tape.param(store.get(p + ".b2")));
    Var pose = ad::add(tape.constant(Matrix::row({base[j].azimuth, base[j].elevation, base[j].distance})), offset);
    Var dist = ad::clamp_min(ad::slice_cols(pose, 2, 1), kMinCameraDistance);
    rows.push_back(ad::concat_cols(ad::slice_cols(pose, 0, 2), dist));
  }
  return ad::stack_rows(rows);
}

std::vector<CameraPose> CameraRig::pose_values(ad::ParamStore& store, const Vec3& q) const {
  Tape scratch;
  const Matrix m = poses(scratch, store, q).value();
  std::vector<CameraPose> out;
  for (std::size_t j = 0; j < m.rows; ++j) out.push_back({m(j, 0), m(j, 1), m(j, 2)});
  return out;
}

// ---- rendering ---------------------------------------------------------------------

std::vector<std::size_t> points_in_box(const Matrix& points, const Box3& box, double inflation) {
  const Vec3& c = box.center();
  const Vec3& s = box.size();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.rows; ++i) {
    bool inside = true;
    for (int k = 0; k < 3 && inside; ++k) inside = std::abs(points(i, k) - c[k]) <= 0.5 * s[k] * inflation;
    if (inside) out.push_back(i);
  }
  return out;
}

Image render_view(const Matrix& points, const Box3& box, const CameraPose& pose, std::size_t res) {
  const auto inside = points_in_box(points, box);
  return render_view(points, inside, box, pose, res);
}

namespace {

struct Splat {
  std::size_t pixel;  // row * res + col
  double depth;
  std::size_t point;
};

// Orthographic projection of the given points onto a res x res grid.
std::vector<Splat> project(const Matrix& points, std::span<const std::size_t> inside, const Box3& box,
                           const CameraPose& pose, std::size_t res) {
  if (!(pose.distance > 0.0)) throw std::invalid_argument("render_view: camera distance must be positive");
  if (res == 0) throw std::invalid_argument("render_view: resolution must be positive");
  std::vector<Splat> out;
  if (inside.empty()) return out;
  out.reserve(inside.size());

  const double ce = std::cos(pose.elevation), se = std::sin(pose.elevation);
  const double ca = std::cos(pose.azimuth), sa = std::sin(pose.azimuth);
  const Vec3 to_camera{ce * ca, ce * sa, se};
  const Vec3 forward{-to_camera[0], -to_camera[1], -to_camera[2]};
  Vec3 right = cross(forward, {0.0, 0.0, 1.0});
  if (norm(right) < 1e-9) {
    right = {-sa, ca, 0.0};  // looking straight down or up
  } else {
    const double n = norm(right);
    for (double& v : right) v /= n;
  }
  const Vec3 up = cross(right, forward);
  const double half = 0.5 * norm(box.size()) * kRenderInflation;
  const double rd = static_cast<double>(res);
  for (std::size_t i : inside) {
    const Vec3 rel{points(i, 0) - box.center()[0], points(i, 1) - box.center()[1], points(i, 2) - box.center()[2]};
    const double u = dot(rel, right) / half;
    const double v = dot(rel, up) / half;
    const auto col = static_cast<std::size_t>(std::clamp(std::floor(0.5 * (u + 1.0) * rd), 0.0, rd - 1.0));
    const auto row = static_cast<std::size_t>(std::clamp(std::floor(0.5 * (1.0 - v) * rd), 0.0, rd - 1.0));
    out.push_back({row * res + col, pose.distance - dot(rel, to_camera), i});
  }
  return out;
}

}  // namespace

Image render_view(const Matrix& points, std::span<const std::size_t> inside, const Box3& box,
                  const CameraPose& pose, std::size_t res) {
  const auto splats = project(points, inside, box, pose, res);
  Image img{res, std::vector<double>(kImageChannels * res * res, 0.0)};
  const std::size_t plane = res * res;
  std::vector<std::size_t> hits(plane, 0);
  for (const auto& sp : splats) {
    const std::size_t k = sp.pixel;
    if (hits[k] == 0 || sp.depth < img.data[plane + k]) img.data[plane + k] = sp.depth;
    img.data[k] = 1.0;
    for (std::size_t ch = 0; ch < 3; ++ch) img.data[(2 + ch) * plane + k] += points(sp.point, 3 + ch);
    ++hits[k];
  }
  for (std::size_t k = 0; k < plane; ++k) {
    if (hits[k] == 0) continue;
    for (std::size_t ch = 2; ch < kImageChannels; ++ch) img.data[ch * plane + k] /= static_cast<double>(hits[k]);
  }
  return img;
}

std::vector<double> render_stats(const Matrix& points, std::span<const std::size_t> inside, const Box3& box,
                                 const CameraPose& pose, std::size_t res) {
  const auto splats = project(points, inside, box, pose, res);
  // Per-pixel accumulators reused across calls; only touched pixels are reset.
  thread_local std::vector<std::size_t> hits;
  thread_local std::vector<std::array<double, kImageChannels>> acc;
  if (hits.size() < res * res) {
    hits.assign(res * res, 0);
    acc.assign(res * res, {});
  }
  std::vector<std::size_t> touched;
  for (const auto& sp : splats) {
    auto& px = acc[sp.pixel];
    if (hits[sp.pixel]++ == 0) {
      touched.push_back(sp.pixel);
      px = {1.0, sp.depth, 0.0, 0.0, 0.0};
    }
    px[1] = std::min(px[1], sp.depth);
    for (std::size_t ch = 0; ch < 3; ++ch) px[2 + ch] += points(sp.point, 3 + ch);
  }
  for (std::size_t k : touched)
    for (std::size_t ch = 2; ch < kImageChannels; ++ch) acc[k][ch] /= static_cast<double>(hits[k]);

  // The untouched pixels are zero in every channel.
  const double n = static_cast<double>(res * res);
  const double empty = n - static_cast<double>(touched.size());
  std::vector<double> out(kImageStats, 0.0);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double mean = 0.0;
    for (std::size_t k : touched) mean += acc[k][c];
    mean /= n;
    double var = empty * mean * mean;
    for (std::size_t k : touched) var += (acc[k][c] - mean) * (acc[k][c] - mean);
    out[2 * c] = mean;
    out[2 * c + 1] = std::sqrt(var / n);
  }
  for (std::size_t k : touched) hits[k] = 0;
  return out;
}

std::vector<double> image_stats(const Image& img) {
  const std::size_t n = img.res * img.res;
  std::vector<double> out(kImageStats, 0.0);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean += img.data[c * n + k];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t k = 0; k < n; ++k) var += (img.data[c * n + k] - mean) * (img.data[c * n + k] - mean);
    var /= static_cast<double>(n);
    out[2 * c] = mean;
    out[2 * c + 1] = std::sqrt(var);
  }
  return out;
}

ToyImageEncoder::ToyImageEncoder(std::size_t d2, std::uint64_t seed) : proj_(kEncoderInput, d2) {
  Rng rng(mix_seed(seed, 2));
  const double s = 2.0 / std::sqrt(static_cast<double>(kEncoderInput));
  for (double& v : proj_.data) v = s * rng.normal();
}

Var ToyImageEncoder::encode(Tape& tape, const Matrix& stats, Var pose, const Vec3& q) const {
  if (stats.cols != kImageStats) throw std::invalid_argument("ToyImageEncoder: stats width mismatch");
  const std::size_t n = stats.rows;
  Matrix qrep(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) qrep(i, static_cast<std::size_t>(k)) = q[k];
  Var x = ad::concat_cols(ad::concat_cols(tape.constant(stats), ad::repeat_rows(pose, n)), tape.constant(qrep));
  return ad::tanh(ad::matmul(x, tape.constant(proj_)));
}

std::vector<double> ToyImageEncoder::encode_values(const std::vector<double>& stats, const CameraPose& pose,
                                                   const Vec3& q) const {
  std::vector<double> x(stats);
  x.insert(x.end(), {pose.azimuth, pose.elevation, pose.distance, q[0], q[1], q[2]});
  if (x.size() != kEncoderInput) throw std::invalid_argument("ToyImageEncoder: stats width mismatch");
  std::vector<double> out(proj_.cols, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < proj_.cols; ++j) out[j] += x[i] * proj_(i, j);
  for (double& v : out) v = std::tanh(v);
  return out;
}

Var feats_2d(Tape& tape, const ToyImageEncoder& enc, const std::vector<Matrix>& view_stats, Var poses,
             const Vec3& q) {
  if (view_stats.empty() || view_stats.size() != poses.rows())
    throw std::invalid_argument("feats_2d: need one stats matrix per view");
  Var total;
  for (std::size_t j = 0; j < view_stats.size(); ++j) {
    const std::size_t row = j;
    Var e = enc.encode(tape, view_stats[j], ad::gather_rows(poses, std::span<const std::size_t>(&row, 1)), q);
    total = (j == 0) ? e : ad::add(total, e);
  }
  if (view_stats.size() == 1) return total;
  return ad::scale(total, 1.0 / static_cast<double>(view_stats.size()));
}

Var assemble_features(Var weighted3d, Var feats2d, Var w, Var b) {
  return ad::linear(ad::concat_cols(weighted3d, feats2d), w, b);
}

// ---- module --------------------------------------------------------------------------

VisionModule::VisionModule(const ModelConfig& cfg)
    : cfg_(cfg), rig_(cfg.views, cfg.pose_hidden), encoder_(cfg.d2, cfg.encoder_seed) {}

void VisionModule::register_params(ad::ParamStore& store, Rng& rng) const {
  // alpha = sigmoid(s) at start: every candidate with a positive score passes tau_f = 0.5.
  store.add("vision.gate.w", Matrix(1, 1, 1.0));
  store.add("vision.gate.b", Matrix(1, 1, 0.0));
  rig_.register_params(store, rng);
  const std::size_t in = cfg_.d3 + cfg_.d2;
  store.add("vision.assemble.w", fusion::uniform_init(in, cfg_.d, in, rng));
  store.add("vision.assemble.b", fusion::uniform_init(1, cfg_.d, in, rng));
}

VisionPlan VisionModule::plan(const Scene& scene, ad::ParamStore& store, bool given_proposals) const {
  VisionPlan p;
  p.gated = !given_proposals;
  if (given_proposals) {
    if (scene.objects.empty()) throw std::invalid_argument("VisionModule::plan: scene has no objects");
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      p.proposals.boxes.push_back(scene.objects[i].box);
      p.proposals.origin.push_back(i);
      p.proposals.alphas.push_back(1.0);
    }
  } else {
    if (scene.candidates.feats3d.cols != cfg_.d3)
      throw std::invalid_argument("VisionModule::plan: candidate feature width != d3");
    p.all_alphas = gate_alpha_values(store.get("vision.gate.w").value.data[0],
                                     store.get("vision.gate.b").value.data[0], scene.candidates.scores);
    p.proposals = select_proposals(scene.candidates, p.all_alphas, cfg_.tau_f, cfg_.tau_nms);
  }
  p.mean_box_size = mean_size(p.proposals.boxes);
  p.poses = rig_.pose_values(store, p.mean_box_size);

  const std::size_t n = p.proposals.boxes.size();
  std::vector<std::vector<std::size_t>> inside;
  inside.reserve(n);
  for (const auto& b : p.proposals.boxes) inside.push_back(points_in_box(scene.points, b));
  for (const auto& pose : p.poses) {
    Matrix stats(n, kImageStats);
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = render_stats(scene.points, inside[i], p.proposals.boxes[i], pose, cfg_.render_res);
      std::copy(s.begin(), s.end(), &stats(i, 0));
    }
    p.view_stats.push_back(std::move(stats));
  }
  return p;
}

VisionOutput VisionModule::forward(Tape& tape, ad::ParamStore& store, const Scene& scene,
                                   const VisionPlan& plan) const {
  VisionOutput out;
  const auto& origin = plan.proposals.origin;
  Var weighted;
  if (plan.gated) {
    out.all_alphas = gate_alphas(tape.param(store.get("vision.gate.w")), tape.param(store.get("vision.gate.b")),
                                 scene.candidates.scores);
    out.selected_alphas = ad::gather_rows(out.all_alphas, origin);
    Var feats = ad::gather_rows(tape.constant(scene.candidates.feats3d), origin);
    weighted = weight_3d(feats, out.selected_alphas);
  } else {
    Matrix f(origin.size(), scene.object_feats.cols);
    for (std::size_t i = 0; i < origin.size(); ++i)
      std::copy_n(scene.object_feats.data.begin() + origin[i] * f.cols, f.cols, &f(i, 0));
    weighted = tape.constant(std::move(f));
  }
  Var poses = rig_.poses(tape, store, plan.mean_box_size);
  Var f2d = feats_2d(tape, encoder_, plan.view_stats, poses, plan.mean_box_size);
  out.feats = assemble_features(weighted, f2d, tape.param(store.get("vision.assemble.w")),
                                tape.param(store.get("vision.assemble.b")));
  return out;
}

}  // namespace dlisa::vision
