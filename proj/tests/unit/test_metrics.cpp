#include <gtest/gtest.h>

#include "dlisa/metrics.hpp"
#include "dlisa_oracles.hpp"

using namespace dlisa;
using geometry::Box3;
using metrics::Category;

namespace {

Box3 cube(double x) { return Box3({x, 0, 0}, {1, 1, 1}); }
// Shifted along x so IoU with cube(x) is (1 - s) / (1 + s).
Box3 shifted(double x, double s) { return Box3({x + s, 0, 0}, {1, 1, 1}); }

}  // namespace

TEST(Fixture, PerSampleCategoryAndOverall) {
  const auto fx = oracle::metric_fixture();
  ASSERT_EQ(fx.records.size(), 12u);
  for (std::size_t i = 0; i < fx.records.size(); ++i)
    EXPECT_NEAR(metrics::sample_f1(fx.records[i], 0.5), fx.sample_f1[i], 1e-12) << "record " << i;
  const auto r = metrics::dataset_f1(fx.records, 0.5);
  for (std::size_t c = 0; c < metrics::kNumCategories; ++c) {
    EXPECT_EQ(r.categories[c].count, fx.category_count[c]);
    EXPECT_NEAR(r.categories[c].f1, fx.category_f1[c], 1e-12);
  }
  EXPECT_NEAR(r.overall, fx.overall, 1e-12);
  EXPECT_NEAR(r.overall, 263.0 / 450.0, 1e-12);
}

TEST(SampleF1, ZeroTargetConvention) {
  const std::vector<Box3> none;
  EXPECT_EQ(metrics::sample_f1(none, none, 0.5), 1.0);
  EXPECT_EQ(metrics::sample_f1(std::vector<Box3>{cube(0)}, none, 0.5), 0.0);
  EXPECT_EQ(metrics::sample_f1(none, std::vector<Box3>{cube(0)}, 0.5), 0.0);
}

TEST(SampleF1, ThreePredictionsTwoHits) {
  const std::vector<Box3> pred{cube(0), cube(5), cube(20)};
  const std::vector<Box3> gt{cube(0), cube(5)};
  EXPECT_NEAR(metrics::sample_f1(pred, gt, 0.5), 0.8, 1e-15);
}

TEST(SampleF1, ThresholdIsInclusive) {
  // s = 1/3 gives IoU exactly 0.5.
  const std::vector<Box3> pred{shifted(0, 1.0 / 3.0)};
  const std::vector<Box3> gt{cube(0)};
  const double iou = geometry::iou(pred[0], gt[0]);
  EXPECT_EQ(metrics::sample_f1(pred, gt, iou), 1.0);
  EXPECT_EQ(metrics::sample_f1(pred, gt, std::nextafter(iou, 1.0)), 0.0);
}

TEST(SampleF1, MonotoneInTheta) {
  Rng rng(51);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Box3> pred, gt;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) pred.push_back(oracle::random_box(rng, 2.0));
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) gt.push_back(oracle::random_box(rng, 2.0));
    double prev = 2.0;
    for (double theta : {0.1, 0.25, 0.5, 0.75, 0.9}) {
      const double f = metrics::sample_f1(pred, gt, theta);
      EXPECT_LE(f, prev);
      prev = f;
    }
  }
}

TEST(SampleF1, MatchesBruteForce) {
  Rng rng(52);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Box3> pred, gt;
    for (std::size_t i = 0, n = rng.below(5); i < n; ++i) pred.push_back(oracle::random_box(rng, 2.0));
    for (std::size_t i = 0, n = rng.below(5); i < n; ++i) gt.push_back(oracle::random_box(rng, 2.0));
    EXPECT_NEAR(metrics::sample_f1(pred, gt, 0.5), oracle::f1_bruteforce(pred, gt, 0.5), 1e-12);
  }
}

TEST(SampleF1, CrossedOverlapsAgreeWithEnumeration) {
  const std::vector<Box3> gt{cube(0), cube(0.7)};
  const std::vector<Box3> pred{cube(0.35), shifted(0, -0.1)};
  const double f = metrics::sample_f1(pred, gt, 0.5);
  EXPECT_NEAR(f, oracle::f1_bruteforce(pred, gt, 0.5), 1e-12);
}

TEST(Categorize, ByTargetCountAndDistractors) {
  metrics::SampleRecord r;
  r.scene_classes = {0, 1, 0};
  r.target_class = 1;
  EXPECT_EQ(metrics::categorize(r), Category::ZeroDistractor);
  r.target_class = 2;
  EXPECT_EQ(metrics::categorize(r), Category::ZeroNoDistractor);
  r.target_class = 1;
  r.ground_truth = {cube(0)};
  r.target_objects = {1};
  EXPECT_EQ(metrics::categorize(r), Category::SingleNoDistractor);
  r.target_class = 0;
  r.target_objects = {0};
  EXPECT_EQ(metrics::categorize(r), Category::SingleDistractor);
  r.ground_truth = {cube(0), cube(5)};
  r.target_objects = {0, 2};
  EXPECT_EQ(metrics::categorize(r), Category::Multi);
}

TEST(Categorize, NamesRoundTrip) {
  for (Category c : metrics::kAllCategories)
    EXPECT_EQ(metrics::category_from_short_name(metrics::short_name(c)), c);
  EXPECT_THROW(metrics::category_from_short_name("xx"), std::invalid_argument);
  EXPECT_EQ(metrics::label(Category::Multi), "MT");
}

TEST(AccAt, ThreeOfFive) {
  std::vector<metrics::SampleRecord> recs(5);
  for (std::size_t i = 0; i < 5; ++i) {
    recs[i].ground_truth = {cube(10.0 * i)};
    recs[i].predicted = {i < 3 ? cube(10.0 * i) : cube(10.0 * i + 3)};
  }
  EXPECT_DOUBLE_EQ(metrics::acc_at(recs, 0.25), 0.6);
  recs[0].ground_truth.push_back(cube(50));
  EXPECT_THROW(metrics::acc_at(recs, 0.25), std::invalid_argument);
}

TEST(Report, EmptyCategoriesExcludedAndTableOrder) {
  std::vector<metrics::SampleRecord> recs(2);
  recs[0].ground_truth = {cube(0)};
  recs[0].predicted = {cube(0)};
  recs[0].target_objects = {0};
  recs[0].scene_classes = {3};
  recs[0].target_class = 3;
  recs[1].ground_truth = {cube(0), cube(5)};
  recs[1].target_objects = {0, 1};
  recs[1].scene_classes = {3, 3};
  recs[1].target_class = 3;
  const auto r = metrics::dataset_f1(recs, 0.5);
  EXPECT_EQ(r.empty_categories.size(), 3u);
  EXPECT_DOUBLE_EQ(r.overall, 0.5);
  const std::string table = r.to_table();
  std::size_t last = 0;
  for (Category c : metrics::kAllCategories) {
    const auto pos = table.find(metrics::label(c));
    ASSERT_NE(pos, std::string::npos);
    EXPECT_GE(pos, last);
    last = pos;
  }
  EXPECT_NE(table.find("All"), std::string::npos);
  EXPECT_EQ(r.to_json()["overall"].get<double>(), 0.5);
}
