#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dlisa/synthdata.hpp"
#include "dlisa/vision.hpp"
#include "dlisa_oracles.hpp"

using namespace dlisa;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using geometry::Box3;

namespace {

CandidateSet make_candidates(const std::vector<Box3>& boxes) {
  CandidateSet c;
  c.boxes = boxes;
  c.scores.assign(boxes.size(), 0.5);
  c.feats3d = Matrix(boxes.size(), 2);
  return c;
}

Box3 cube(double x, double size = 1.0) { return Box3({x, 0, 0}, {size, size, size}); }

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.d3 = 6;
  cfg.d2 = 6;
  cfg.views = 2;
  cfg.render_res = 8;
  cfg.pose_hidden = 4;
  return cfg;
}

Scene small_scene(std::uint64_t seed) {
  synth::SceneConfig sc;
  sc.d3 = 6;
  sc.min_objects = 3;
  sc.max_objects = 4;
  sc.points_per_object = 40;
  return synth::gen_scene(seed, sc);
}

}  // namespace

TEST(Gate, ZeroParametersGiveHalf) {
  const std::vector<double> s{0.1, 0.9, 0.4};
  for (double a : vision::gate_alpha_values(0.0, 0.0, s)) EXPECT_EQ(a, 0.5);
  Tape t;
  const auto v = vision::gate_alphas(t.constant(Matrix(1, 1, 0.0)), t.constant(Matrix(1, 1, 0.0)), s).value();
  for (double a : v.data) EXPECT_EQ(a, 0.5);
}

TEST(Gate, MonotoneInScoreForPositiveWeight) {
  const std::vector<double> s{0.05, 0.2, 0.21, 0.6, 0.99};
  const auto a = vision::gate_alpha_values(3.0, -1.0, s);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GT(a[i], a[i - 1]);
  Tape t;
  const auto v = vision::gate_alphas(t.constant(Matrix(1, 1, 3.0)), t.constant(Matrix(1, 1, -1.0)), s).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(v.data[i], a[i], 1e-15);
}

TEST(SelectProposals, FilterThenSuppress) {
  // 0 and 1 overlap heavily; 2 is far away; 3 is below the gate threshold.
  const auto c = make_candidates({cube(0), cube(0.1), cube(5), cube(10)});
  const std::vector<double> alpha{0.7, 0.9, 0.6, 0.4};
  const auto p = vision::select_proposals(c, alpha, 0.5, 0.4);
  EXPECT_FALSE(p.fallback);
  EXPECT_EQ(p.origin, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(p.alphas, (std::vector<double>{0.9, 0.6}));
}

TEST(SelectProposals, ThresholdIsStrict) {
  const auto c = make_candidates({cube(0), cube(5)});
  const auto p = vision::select_proposals(c, std::vector<double>{0.5, 0.51}, 0.5, 0.4);
  EXPECT_EQ(p.origin, (std::vector<std::size_t>{1}));
}

TEST(SelectProposals, FallbackKeepsArgmax) {
  const auto c = make_candidates({cube(0), cube(5), cube(10)});
  const auto p = vision::select_proposals(c, std::vector<double>{0.2, 0.45, 0.45}, 0.5, 0.4);
  EXPECT_TRUE(p.fallback);
  EXPECT_EQ(p.origin, (std::vector<std::size_t>{1}));
}

TEST(SelectProposals, MatchesFilteredBruteForceNms) {
  Rng rng(31);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<Box3> boxes;
    std::vector<double> alpha;
    for (int m = 0; m < 40; ++m) {
      boxes.push_back(oracle::random_box(rng, 3.0));
      alpha.push_back(rng.uniform());
    }
    const auto p = vision::select_proposals(make_candidates(boxes), alpha, 0.5, 0.4);
    std::vector<Box3> kept_boxes;
    std::vector<double> kept_alpha;
    std::vector<std::size_t> passed;
    for (std::size_t m = 0; m < 40; ++m)
      if (alpha[m] > 0.5) {
        passed.push_back(m);
        kept_boxes.push_back(boxes[m]);
        kept_alpha.push_back(alpha[m]);
      }
    std::vector<std::size_t> expect;
    for (std::size_t k : oracle::nms_bruteforce(kept_boxes, kept_alpha, 0.4)) expect.push_back(passed[k]);
    if (passed.empty()) {
      EXPECT_TRUE(p.fallback);
    } else {
      EXPECT_EQ(p.origin, expect);
    }
  }
}

TEST(SelectProposals, RejectsBadInput) {
  const auto c = make_candidates({cube(0)});
  EXPECT_THROW(vision::select_proposals(c, std::vector<double>{0.6}, 1.0, 0.4), std::invalid_argument);
  EXPECT_THROW(vision::select_proposals(c, std::vector<double>{0.6, 0.1}, 0.5, 0.4), std::invalid_argument);
}

TEST(Weight3d, ScalesRows) {
  Tape t;
  const auto out = vision::weight_3d(t.constant(Matrix(2, 3, {1, 2, 3, 4, 5, 6})),
                                     t.constant(Matrix::column({0.5, 0.0})))
                       .value();
  EXPECT_EQ(out.data, (std::vector<double>{0.5, 1, 1.5, 0, 0, 0}));
}

TEST(Cameras, BasePoses) {
  const auto p = vision::base_poses(4);
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(p[j].azimuth, j * std::numbers::pi / 2.0, 1e-15);
    EXPECT_NEAR(p[j].elevation, std::numbers::pi / 4.0, 1e-15);
    EXPECT_EQ(p[j].distance, 1.0);
  }
  EXPECT_THROW(vision::base_poses(0), std::invalid_argument);
}

TEST(Cameras, ZeroInitialisedRigReturnsBasePoses) {
  ad::ParamStore store;
  Rng rng(32);
  vision::CameraRig rig(3, 5);
  rig.register_params(store, rng);
  const auto got = rig.pose_values(store, {0.6, 1.2, 0.9});
  const auto base = vision::base_poses(3);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(got[j].azimuth, base[j].azimuth, 1e-15);
    EXPECT_NEAR(got[j].elevation, base[j].elevation, 1e-15);
    EXPECT_NEAR(got[j].distance, base[j].distance, 1e-15);
  }
}

TEST(Cameras, DistanceIsClamped) {
  ad::ParamStore store;
  Rng rng(33);
  vision::CameraRig rig(1, 2);
  rig.register_params(store, rng);
  store.get("vision.pose0.b2").value = Matrix::row({0.0, 0.0, -5.0});
  EXPECT_EQ(rig.pose_values(store, {1, 1, 1})[0].distance, vision::kMinCameraDistance);
}

TEST(Cameras, MeanSize) {
  const std::vector<Box3> boxes{Box3({0, 0, 0}, {1, 2, 3}), Box3({5, 0, 0}, {3, 0.5, 1})};
  const auto q = vision::mean_size(boxes);
  EXPECT_DOUBLE_EQ(q[0], 2.0);
  EXPECT_DOUBLE_EQ(q[1], 1.25);
  EXPECT_DOUBLE_EQ(q[2], 2.0);
}

TEST(Render, EmptyBoxGivesZeroImage) {
  const Matrix points(1, 6, {10, 10, 10, 1, 0, 0});
  const auto img = vision::render_view(points, cube(0), vision::base_poses(1)[0], 8);
  for (double v : img.data) EXPECT_EQ(v, 0.0);
  for (double v : vision::image_stats(img)) EXPECT_EQ(v, 0.0);
}

TEST(Render, TopDownCentrePointLandsInMiddlePixel) {
  const Matrix points(1, 6, {2, 3, 1, 0.2, 0.4, 0.6});
  const Box3 box({2, 3, 1}, {1, 1, 1});
  const vision::CameraPose top{0.0, std::numbers::pi / 2.0, 1.0};
  const auto img = vision::render_view(points, box, top, 9);
  EXPECT_EQ(img.at(0, 4, 4), 1.0);
  EXPECT_DOUBLE_EQ(img.at(1, 4, 4), 1.0);
  EXPECT_DOUBLE_EQ(img.at(2, 4, 4), 0.2);
  EXPECT_DOUBLE_EQ(img.at(4, 4, 4), 0.6);
  double occupied = 0.0;
  for (std::size_t k = 0; k < 81; ++k) occupied += img.data[k];
  EXPECT_EQ(occupied, 1.0);
}

TEST(Render, Deterministic) {
  const Scene s = small_scene(4);
  const auto pose = vision::base_poses(3)[1];
  const auto a = vision::render_view(s.points, s.objects[0].box, pose, 16);
  const auto b = vision::render_view(s.points, s.objects[0].box, pose, 16);
  EXPECT_EQ(a.data, b.data);
  double occ = 0.0;
  for (std::size_t k = 0; k < 256; ++k) occ += a.data[k];
  EXPECT_GT(occ, 0.0);
}

TEST(Encoder, SingleViewAndMeanOfViews) {
  const vision::ToyImageEncoder enc(5, 3);
  Rng rng(34);
  std::vector<Matrix> stats;
  for (int j = 0; j < 4; ++j) {
    Matrix m(2, vision::kImageStats);
    for (double& v : m.data) v = rng.uniform();
    stats.push_back(m);
  }
  const vision::Vec3 q{1.0, 0.5, 0.8};
  const auto poses = vision::base_poses(4);
  Matrix pose_m(4, 3);
  for (std::size_t j = 0; j < 4; ++j) {
    pose_m(j, 0) = poses[j].azimuth;
    pose_m(j, 1) = poses[j].elevation;
    pose_m(j, 2) = poses[j].distance;
  }
  Tape t;
  const Var pv = t.constant(pose_m);
  const Matrix all = vision::feats_2d(t, enc, stats, pv, q).value();
  const Matrix one = vision::feats_2d(t, enc, {stats[0]}, ad::gather_rows(pv, std::vector<std::size_t>{0}), q).value();
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> row(stats[0].data.begin() + i * vision::kImageStats,
                            stats[0].data.begin() + (i + 1) * vision::kImageStats);
    const auto direct = enc.encode_values(row, poses[0], q);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(one(i, c), direct[c], 1e-14);
    for (std::size_t c = 0; c < 5; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> r(stats[j].data.begin() + i * vision::kImageStats,
                              stats[j].data.begin() + (i + 1) * vision::kImageStats);
        mean += enc.encode_values(r, poses[j], q)[c] / 4.0;
      }
      EXPECT_NEAR(all(i, c), mean, 1e-14);
    }
  }
}

TEST(VisionModule, PlanAndForwardShapes) {
  const ModelConfig cfg = small_model();
  const Scene s = small_scene(5);
  ad::ParamStore store;
  Rng rng(35);
  vision::VisionModule vm(cfg);
  vm.register_params(store, rng);
  const auto plan = vm.plan(s, store, false);
  EXPECT_EQ(plan.all_alphas.size(), s.candidates.size());
  EXPECT_EQ(plan.view_stats.size(), cfg.views);
  const std::size_t n = plan.proposals.boxes.size();
  ASSERT_GE(n, 1u);
  Tape t;
  const auto out = vm.forward(t, store, s, plan);
  EXPECT_EQ(out.feats.rows(), n);
  EXPECT_EQ(out.feats.cols(), cfg.d);
  EXPECT_EQ(out.selected_alphas.rows(), n);
}

TEST(VisionModule, GivenProposalsUseGroundTruth) {
  const ModelConfig cfg = small_model();
  const Scene s = small_scene(6);
  ad::ParamStore store;
  Rng rng(36);
  vision::VisionModule vm(cfg);
  vm.register_params(store, rng);
  const auto plan = vm.plan(s, store, true);
  EXPECT_FALSE(plan.gated);
  EXPECT_EQ(plan.proposals.boxes, s.object_boxes());
}

TEST(VisionModule, GradientReachesGateAndPoseNetwork) {
  const ModelConfig cfg = small_model();
  const Scene s = small_scene(7);
  ad::ParamStore store;
  Rng rng(37);
  vision::VisionModule vm(cfg);
  vm.register_params(store, rng);
  const auto plan = vm.plan(s, store, false);
  Tape t;
  const auto out = vm.forward(t, store, s, plan);
  Rng probe_rng(1);
  Matrix probe(out.feats.rows(), out.feats.cols());
  for (double& v : probe.data) v = probe_rng.normal();
  t.backward(ad::sum(ad::mul(out.feats, t.constant(probe))));
  auto nonzero = [&](const char* name) {
    for (double g : store.get(name).grad.data)
      if (g != 0.0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero("vision.gate.w"));
  EXPECT_TRUE(nonzero("vision.gate.b"));
  EXPECT_TRUE(nonzero("vision.pose0.w2"));
  EXPECT_TRUE(nonzero("vision.pose1.b2"));
}

TEST(Render, StatsShortcutMatchesFullImage) {
  const Scene s = small_scene(8);
  Rng rng(38);
  for (int rep = 0; rep < 30; ++rep) {
    const auto& box = s.objects[rng.below(s.objects.size())].box;
    const vision::CameraPose pose{rng.uniform(0.0, 6.3), rng.uniform(-1.5, 1.6), rng.uniform(0.1, 2.0)};
    const std::size_t res = 1 + rng.below(20);
    const auto inside = vision::points_in_box(s.points, box);
    const auto full = vision::image_stats(vision::render_view(s.points, inside, box, pose, res));
    const auto fast = vision::render_stats(s.points, inside, box, pose, res);
    for (std::size_t k = 0; k < full.size(); ++k) EXPECT_NEAR(fast[k], full[k], 1e-12);
  }
  const std::vector<std::size_t> none;
  for (double v : vision::render_stats(s.points, none, s.objects[0].box, vision::base_poses(1)[0], 8)) EXPECT_EQ(v, 0.0);
}
