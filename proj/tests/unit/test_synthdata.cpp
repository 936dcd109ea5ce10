#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "dlisa/synthdata.hpp"

using namespace dlisa;
using metrics::Category;

namespace {

synth::DataConfig small_data(std::uint64_t seed) {
  synth::DataConfig cfg;
  cfg.seed = seed;
  cfg.num_scenes = 12;
  cfg.queries_per_scene = 5;
  cfg.scene.d3 = 8;
  cfg.scene.points_per_object = 30;
  return cfg;
}

metrics::SampleRecord as_record(const Scene& s, const QueryRecord& q) {
  metrics::SampleRecord r;
  for (std::size_t t : q.targets) r.ground_truth.push_back(s.objects[t].box);
  r.target_class = q.target_class;
  r.scene_classes = s.object_classes();
  r.target_objects = q.targets;
  return r;
}

}  // namespace

TEST(Synth, DatasetIsDeterministic) {
  const auto a = synth::gen_dataset(small_data(3));
  const auto b = synth::gen_dataset(small_data(3));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].object_boxes(), b[i].object_boxes());
    EXPECT_EQ(a[i].candidates.boxes, b[i].candidates.boxes);
    EXPECT_EQ(a[i].candidates.feats3d.data, b[i].candidates.feats3d.data);
    EXPECT_EQ(a[i].points.data, b[i].points.data);
    ASSERT_EQ(a[i].queries.size(), b[i].queries.size());
    for (std::size_t q = 0; q < a[i].queries.size(); ++q) EXPECT_EQ(a[i].queries[q].tokens, b[i].queries[q].tokens);
  }
  const auto c = synth::gen_dataset(small_data(4));
  EXPECT_NE(a[0].candidates.boxes, c[0].candidates.boxes);
}

TEST(Synth, WriteReadRoundTrip) {
  const auto scenes = synth::gen_dataset(small_data(5));
  const auto dir = std::filesystem::temp_directory_path() / "dlisa_synth_roundtrip";
  std::filesystem::remove_all(dir);
  synth::write_dataset(dir, scenes);
  const auto back = synth::read_dataset(dir);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(back[i].id, scenes[i].id);
    EXPECT_EQ(back[i].object_boxes(), scenes[i].object_boxes());
    EXPECT_EQ(back[i].object_classes(), scenes[i].object_classes());
    EXPECT_EQ(back[i].candidates.boxes, scenes[i].candidates.boxes);
    EXPECT_EQ(back[i].candidates.scores, scenes[i].candidates.scores);
    EXPECT_EQ(back[i].candidates.feats3d.data, scenes[i].candidates.feats3d.data);
    EXPECT_EQ(back[i].object_feats.data, scenes[i].object_feats.data);
    EXPECT_EQ(back[i].points.data, scenes[i].points.data);
    ASSERT_EQ(back[i].queries.size(), scenes[i].queries.size());
    for (std::size_t q = 0; q < scenes[i].queries.size(); ++q) {
      EXPECT_EQ(back[i].queries[q].tokens, scenes[i].queries[q].tokens);
      EXPECT_EQ(back[i].queries[q].targets, scenes[i].queries[q].targets);
      EXPECT_EQ(back[i].queries[q].kind, scenes[i].queries[q].kind);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Synth, ArrayFileRejectsGarbage) {
  const auto file = std::filesystem::temp_directory_path() / "dlisa_bad_array.bin";
  {
    std::ofstream out(file, std::ios::binary);
    out << "not an array";
  }
  EXPECT_THROW(synth::read_array(file), std::runtime_error);
  std::filesystem::remove(file);
}

TEST(Synth, QueryKindAndTargetsAreConsistent) {
  std::set<Category> seen;
  for (const auto& s : synth::gen_dataset(small_data(6))) {
    for (const auto& q : s.queries) {
      EXPECT_EQ(q.targets, synth::resolve_query(s, q.tokens)) << synth::query_text(q.tokens);
      EXPECT_EQ(metrics::categorize(as_record(s, q)), q.kind) << synth::query_text(q.tokens);
      seen.insert(q.kind);
    }
  }
  EXPECT_EQ(seen.size(), metrics::kNumCategories);
}

TEST(Synth, ObjectsDoNotOverlap) {
  for (const auto& s : synth::gen_dataset(small_data(7)))
    for (std::size_t i = 0; i < s.objects.size(); ++i)
      for (std::size_t j = i + 1; j < s.objects.size(); ++j)
        EXPECT_EQ(geometry::iou(s.objects[i].box, s.objects[j].box), 0.0);
}

TEST(Detector, ZeroNoiseReproducesGroundTruth) {
  synth::SceneConfig cfg;
  cfg.d3 = 4;
  cfg.points_per_object = 10;
  cfg.detector.min_copies = cfg.detector.max_copies = 2;
  cfg.detector.false_positives = 3;
  cfg.detector.center_noise = cfg.detector.size_noise = cfg.detector.score_noise = 0.0;
  const Scene s = synth::gen_scene(9, cfg);
  const auto c = synth::simulate_detector(s, 10, cfg);
  EXPECT_EQ(c.size(), 2 * s.objects.size() + 3);
  std::size_t exact = 0;
  for (std::size_t m = 0; m < c.size(); ++m)
    for (const auto& o : s.objects)
      if (c.boxes[m] == o.box) {
        ++exact;
        EXPECT_NEAR(c.scores[m], 1.0 - 1e-3, 1e-12);
      }
  EXPECT_EQ(exact, 2 * s.objects.size());
}

TEST(Detector, EveryObjectHasAGoodCopy) {
  synth::SceneConfig cfg;
  cfg.d3 = 4;
  cfg.points_per_object = 10;
  cfg.detector.center_noise = 0.3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = synth::gen_scene(seed, cfg);
    for (const auto& o : s.objects) {
      double best = 0.0;
      for (const auto& b : s.candidates.boxes) best = std::max(best, geometry::iou(b, o.box));
      EXPECT_GE(best, 0.5);
    }
  }
}

TEST(Detector, ScoreTracksOverlap) {
  std::vector<double> iou, score;
  for (const auto& s : synth::gen_dataset(small_data(8))) {
    for (std::size_t m = 0; m < s.candidates.size(); ++m) {
      double best = 0.0;
      for (const auto& o : s.objects) best = std::max(best, geometry::iou(s.candidates.boxes[m], o.box));
      iou.push_back(best);
      score.push_back(s.candidates.scores[m]);
    }
  }
  const double n = static_cast<double>(iou.size());
  double mi = 0, ms = 0;
  for (std::size_t k = 0; k < iou.size(); ++k) {
    mi += iou[k] / n;
    ms += score[k] / n;
  }
  double cov = 0, vi = 0, vs = 0;
  for (std::size_t k = 0; k < iou.size(); ++k) {
    cov += (iou[k] - mi) * (score[k] - ms);
    vi += (iou[k] - mi) * (iou[k] - mi);
    vs += (score[k] - ms) * (score[k] - ms);
  }
  EXPECT_GT(cov / std::sqrt(vi * vs), 0.8);
}

TEST(TextEncoder, FixedUnitVectorsPerToken) {
  const std::vector<int> q{synth::token::kThe, synth::token::color(1), synth::token::cls(2), synth::token::kThe};
  const auto a = synth::toy_text_encode(q, 16, 7);
  ASSERT_EQ(a.rows, 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < 16; ++j) norm += a(i, j) * a(i, j);
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(a(0, j), a(3, j));
  double dot = 0.0;
  for (std::size_t j = 0; j < 16; ++j) dot += a(0, j) * a(1, j);
  EXPECT_LT(std::abs(dot), 0.999);
  EXPECT_EQ(a.data, synth::toy_text_encode(q, 16, 7).data);
  EXPECT_THROW(synth::toy_text_encode({synth::token::kVocabSize}, 16, 7), std::invalid_argument);
  EXPECT_THROW(synth::toy_text_encode({}, 16, 7), std::invalid_argument);
}

TEST(Queries, ResolveTemplates) {
  synth::SceneConfig cfg;
  cfg.d3 = 4;
  cfg.points_per_object = 10;
  const Scene s = synth::gen_scene(12, cfg);
  const int cls = s.objects[0].cls;
  const auto all = synth::resolve_query(s, {synth::token::kAll, synth::token::kThe, synth::token::cls(cls)});
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    EXPECT_EQ(std::find(all.begin(), all.end(), i) != all.end(), s.objects[i].cls == cls);
  EXPECT_THROW(synth::resolve_query(s, {synth::token::kNear}), std::invalid_argument);
}

TEST(Synth, DefaultLayoutsAlwaysFit) {
  synth::SceneConfig cfg;
  cfg.points_per_object = 1;
  for (std::uint64_t seed = 0; seed < 400; ++seed) EXPECT_NO_THROW(synth::gen_scene(seed, cfg)) << seed;
}
