#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dlisa/autodiff.hpp"
#include "dlisa/config.hpp"
#include "dlisa/geometry.hpp"
#include "dlisa/rng.hpp"
#include "dlisa/scene.hpp"

namespace dlisa::vision {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using geometry::Vec3;

// ---- proposal gate ---------------------------------------------------------

// alpha_m = sigmoid(w * s_m + b); returns M x 1.
Var gate_alphas(Var w, Var b, std::span<const double> scores);
std::vector<double> gate_alpha_values(double w, double b, std::span<const double> scores);

struct ProposalSet {
  std::vector<Box3> boxes;
  std::vector<std::size_t> origin;  // indices into the CandidateSet
  std::vector<double> alphas;       // gate values of the kept candidates
  bool fallback = false;            // nothing passed tau_f; the argmax-alpha candidate was kept
};

// Keep candidates with alpha > tau_f, then greedy NMS ranked by alpha.
ProposalSet select_proposals(const CandidateSet& candidates, std::span<const double> alphas,
                             double tau_f, double tau_nms);

// Row n of feats scaled by alpha_n (N x d3, N x 1).
Var weight_3d(Var feats, Var alphas);

// ---- cameras -----------------------------------------------------------------

struct CameraPose {
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians
  double distance = 1.0;   // metres
};

inline constexpr double kMinCameraDistance = 0.05;
inline constexpr double kBaseElevation = 0.78539816339744830962;  // 45 degrees
inline constexpr double kBaseDistance = 1.0;

// V poses at evenly spaced azimuths starting from 0, 45 degree elevation, 1 m.
std::vector<CameraPose> base_poses(std::size_t views);

// Componentwise mean of the box extents.
Vec3 mean_size(std::span<const Box3> boxes);

// Per-view pose = base + MLP_j(mean size); distance clamped to kMinCameraDistance.
class CameraRig {
 public:
  CameraRig(std::size_t views, std::size_t hidden) : views_(views), hidden_(hidden) {}

  // Output layers start at zero so initial poses equal the base poses.
  void register_params(ad::ParamStore& store, Rng& rng) const;
  Var poses(Tape& tape, ad::ParamStore& store, const Vec3& mean_box_size) const;  // V x 3
  std::vector<CameraPose> pose_values(ad::ParamStore& store, const Vec3& mean_box_size) const;

  std::size_t views() const { return views_; }

 private:
  std::size_t views_;
  std::size_t hidden_;
};

// ---- toy renderer and encoder ---------------------------------------------------

inline constexpr std::size_t kImageChannels = 5;  // occupancy, depth, r, g, b
inline constexpr double kRenderInflation = 1.1;

struct Image {
  std::size_t res = 0;
  std::vector<double> data;  // channel-major: data[(c * res + row) * res + col]

  double at(std::size_t c, std::size_t row, std::size_t col) const { return data[(c * res + row) * res + col]; }
};

std::vector<std::size_t> points_in_box(const Matrix& points, const Box3& box, double inflation = kRenderInflation);

// Orthographic splat of the points inside the inflated box onto the image
// plane of a camera looking at the box centre. Pixel value per channel:
// occupancy 1, nearest depth, mean colour of the points landing there.
Image render_view(const Matrix& points, const Box3& box, const CameraPose& pose, std::size_t res);
Image render_view(const Matrix& points, std::span<const std::size_t> inside, const Box3& box,
                  const CameraPose& pose, std::size_t res);

inline constexpr std::size_t kImageStats = 2 * kImageChannels;
// Per channel mean and standard deviation over all pixels.
std::vector<double> image_stats(const Image& img);
// image_stats(render_view(...)) without materialising the image.
std::vector<double> render_stats(const Matrix& points, std::span<const std::size_t> inside, const Box3& box,
                                 const CameraPose& pose, std::size_t res);

inline constexpr std::size_t kEncoderInput = kImageStats + 6;  // stats | pose | mean size

// Frozen stand-in for the image encoder: tanh([stats | pose | mean size] P)
// with a fixed seeded projection P (kEncoderInput x d2).
class ToyImageEncoder {
 public:
  ToyImageEncoder(std::size_t d2, std::uint64_t seed);
  const Matrix& projection() const { return proj_; }
  std::size_t width() const { return proj_.cols; }

  // stats: N x kImageStats for one view; pose: 1 x 3 row var.
  Var encode(Tape& tape, const Matrix& stats, Var pose, const Vec3& mean_box_size) const;
  std::vector<double> encode_values(const std::vector<double>& stats, const CameraPose& pose,
                                    const Vec3& mean_box_size) const;

 private:
  Matrix proj_;
};

// Mean over views of the per-view encodings. view_stats[j] is N x kImageStats.
Var feats_2d(Tape& tape, const ToyImageEncoder& enc, const std::vector<Matrix>& view_stats, Var poses,
             const Vec3& mean_box_size);

// [weighted3d | feats2d] W + b  ->  N x d.
Var assemble_features(Var weighted3d, Var feats2d, Var w, Var b);

// ---- module --------------------------------------------------------------------

// Non-differentiable decisions and renders for one sample, computed from the
// current parameter values. The differentiable forward replays against a
// fixed plan, which also freezes the rasterised images (the renderer is not
// differentiable; pose gradients reach the encoder through its pose input).
struct VisionPlan {
  ProposalSet proposals;
  std::vector<double> all_alphas;     // M gate values (empty when gating is bypassed)
  Vec3 mean_box_size{};
  std::vector<CameraPose> poses;
  std::vector<Matrix> view_stats;     // V matrices, N x kImageStats
  bool gated = true;
};

struct VisionOutput {
  Var feats;            // N x d
  Var all_alphas;       // M x 1, invalid when gating is bypassed
  Var selected_alphas;  // N x 1, invalid when gating is bypassed
};

class VisionModule {
 public:
  explicit VisionModule(const ModelConfig& cfg);

  void register_params(ad::ParamStore& store, Rng& rng) const;

  // Gated: candidates filtered by the gate and NMS. Given proposals: every
  // ground-truth object is a proposal with alpha fixed at 1.
  VisionPlan plan(const Scene& scene, ad::ParamStore& store, bool given_proposals) const;
  VisionOutput forward(Tape& tape, ad::ParamStore& store, const Scene& scene, const VisionPlan& plan) const;

  const CameraRig& rig() const { return rig_; }
  const ToyImageEncoder& encoder() const { return encoder_; }

 private:
  ModelConfig cfg_;
  CameraRig rig_;
  ToyImageEncoder encoder_;
};

}  // namespace dlisa::vision
