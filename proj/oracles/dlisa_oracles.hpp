#pragma once

// Slow reference implementations used to cross-check the library, plus the
// suite runner behind `dlisa oracle-suite` and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

#include "dlisa/autodiff.hpp"
#include "dlisa/geometry.hpp"
#include "dlisa/metrics.hpp"
#include "dlisa/rng.hpp"

namespace dlisa::oracle {

using ad::Matrix;
using geometry::Box3;

// Repeatedly take the highest-scoring surviving box (lowest index on ties)
// and strike every survivor overlapping it by more than `threshold`.
std::vector<std::size_t> nms_bruteforce(const std::vector<Box3>& boxes, const std::vector<double>& scores,
                                        double threshold);

// Best total benefit over every injection of the smaller side into the larger.
struct BruteAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // sorted by row
  double objective = 0.0;
};
BruteAssignment assignment_bruteforce(const std::vector<double>& benefit, std::size_t rows, std::size_t cols);

// F1 with the matching found by enumeration (maximum total IoU), TP at IoU >= theta.
double f1_bruteforce(const std::vector<Box3>& predicted, const std::vector<Box3>& ground_truth, double theta);

// Row softmax written out with loops.
Matrix softmax_rows(const Matrix& logits);

// softmax(Q K^T / sqrt(d)) V, one head.
Matrix attention_direct(const Matrix& feats, const Matrix& wq, const Matrix& wk, const Matrix& wv);

// softmax(D) (F Wv).
Matrix distance_attention_direct(const Matrix& feats, const geometry::DistanceMatrix& dist, const Matrix& wv);

// The full language-informed spatial attention, one head, per-element loops.
// beta_i = sigmoid([g | f_i] . w + b); logits_ij = (1 - beta_i) q_i.k_j / sqrt(d) + beta_i D_ij.
Matrix lisa_direct(const Matrix& feats, const Matrix& g, const geometry::DistanceMatrix& dist, const Matrix& wq,
                   const Matrix& wk, const Matrix& wv, const Matrix& beta_w, double beta_b);

// ---- fixtures ---------------------------------------------------------------------

Box3 random_box(Rng& rng, double extent = 4.0);

// Twelve samples covering all five categories with values worked out by hand.
struct MetricFixture {
  std::vector<metrics::SampleRecord> records;
  std::vector<double> sample_f1;  // per record
  double category_f1[metrics::kNumCategories];
  std::size_t category_count[metrics::kNumCategories];
  double overall = 0.0;
};
MetricFixture metric_fixture();

// ---- suite runner -------------------------------------------------------------------

struct SuiteRow {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;
  bool passed() const { return cases > 0 && failures == 0; }
};

// Suites: nms, hungarian, sample-f1, metric-fixture, lisa-b0, lisa-b1, lisa-direct.
// `corrupt` names one suite whose implementation result is perturbed before
// comparison (negative control); empty for a clean run.
std::vector<SuiteRow> run_oracle_suites(std::uint64_t seed, const std::string& corrupt = "");
std::vector<std::string> suite_names();
std::string format_suite_table(const std::vector<SuiteRow>& rows);

}  // namespace dlisa::oracle
