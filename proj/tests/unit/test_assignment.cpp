#include <gtest/gtest.h>

#include "dlisa/assignment.hpp"
#include "dlisa_oracles.hpp"

using namespace dlisa;

TEST(Hungarian, DominantDiagonal) {
  const std::vector<double> m{0.9, 0.1, 0.1, 0.9};
  const auto r = assignment::hungarian_max(m, 2, 2);
  EXPECT_EQ(r.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_NEAR(r.objective, 1.8, 1e-12);
}

TEST(Hungarian, PrefersGlobalOverGreedy) {
  // Greedy takes (0,0)=0.9 and is left with 0.0; the optimum is 0.8 + 0.8.
  const std::vector<double> m{0.9, 0.8, 0.8, 0.0};
  const auto r = assignment::hungarian_max(m, 2, 2);
  EXPECT_EQ(r.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}}));
  EXPECT_NEAR(r.objective, 1.6, 1e-12);
}

TEST(Hungarian, RectangularDropsDummies) {
  Rng rng(1);
  for (std::size_t rows : {1u, 2u, 4u, 6u})
    for (std::size_t cols : {1u, 3u, 5u}) {
      std::vector<double> m(rows * cols);
      for (double& v : m) v = rng.uniform();
      const auto r = assignment::hungarian_max(m, rows, cols);
      EXPECT_EQ(r.pairs.size(), std::min(rows, cols));
      for (const auto& [p, g] : r.pairs) {
        EXPECT_LT(p, rows);
        EXPECT_LT(g, cols);
      }
    }
}

TEST(Hungarian, MatchesBruteForceUpToSeven) {
  Rng rng(2);
  for (int t = 0; t < 150; ++t) {
    const std::size_t rows = 1 + rng.below(7), cols = 1 + rng.below(7);
    std::vector<double> m(rows * cols);
    for (double& v : m) v = rng.uniform();
    const auto got = assignment::hungarian_max(m, rows, cols);
    const auto want = oracle::assignment_bruteforce(m, rows, cols);
    EXPECT_EQ(got.pairs, want.pairs) << rows << "x" << cols;
    EXPECT_NEAR(got.objective, want.objective, 1e-12);
  }
}

TEST(Hungarian, BeatsRandomInjections) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 4, cols = 2;
    std::vector<double> m(rows * cols);
    for (double& v : m) v = rng.uniform();
    const double best = assignment::hungarian_max(m, rows, cols).objective;
    for (int k = 0; k < 20; ++k) {
      const std::size_t a = rng.below(rows);
      std::size_t b = rng.below(rows - 1);
      if (b >= a) ++b;
      EXPECT_GE(best + 1e-12, m[a * cols + 0] + m[b * cols + 1]);
    }
  }
}

TEST(DeriveLabels, ThresholdIsStrict) {
  const std::vector<double> iou{0.9, 0.0, 0.0, 0.2};
  const auto m = assignment::hungarian_max(iou, 2, 2);
  EXPECT_EQ(assignment::derive_labels(m, iou, 2, 2, 0.25), (std::vector<int>{1, 0}));
  EXPECT_EQ(assignment::derive_labels(m, iou, 2, 2, 0.1), (std::vector<int>{1, 1}));
}

TEST(DeriveLabels, UnmatchedPredictionIsZero) {
  // Three predictions, one ground truth: only the matched one can be positive.
  const std::vector<double> iou{0.9, 0.8, 0.7};
  EXPECT_EQ(assignment::multi_target_labels(iou, 3, 1, 0.25), (std::vector<int>{1, 0, 0}));
}

TEST(DeriveLabels, ZeroTargetsAllZero) {
  EXPECT_EQ(assignment::multi_target_labels({}, 4, 0, 0.25), (std::vector<int>{0, 0, 0, 0}));
}

TEST(DeriveLabels, RejectsBadThreshold) {
  const std::vector<double> iou{0.5};
  const auto m = assignment::hungarian_max(iou, 1, 1);
  EXPECT_THROW(assignment::derive_labels(m, iou, 1, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(assignment::derive_labels(m, iou, 1, 1, 1.0), std::invalid_argument);
}

TEST(DeriveLabels, MonotoneInThreshold) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 1 + rng.below(6), cols = 1 + rng.below(4);
    std::vector<double> iou(rows * cols);
    for (double& v : iou) v = rng.uniform();
    const auto m = assignment::hungarian_max(iou, rows, cols);
    auto prev = assignment::derive_labels(m, iou, rows, cols, 0.05);
    for (double tau = 0.1; tau < 0.96; tau += 0.05) {
      const auto cur = assignment::derive_labels(m, iou, rows, cols, tau);
      for (std::size_t i = 0; i < rows; ++i) EXPECT_LE(cur[i], prev[i]);
      prev = cur;
    }
  }
}

TEST(BestSingle, Cases) {
  EXPECT_EQ(assignment::best_single(std::vector<double>{0.1, 0.7, 0.3}, 0.25), std::optional<std::size_t>(1));
  EXPECT_EQ(assignment::best_single(std::vector<double>{0.1, 0.2, 0.24}, 0.25), std::nullopt);
  EXPECT_EQ(assignment::best_single(std::vector<double>{0.6, 0.2, 0.6}, 0.25), std::optional<std::size_t>(0));
  EXPECT_EQ(assignment::best_single(std::vector<double>{}, 0.25), std::nullopt);
}
