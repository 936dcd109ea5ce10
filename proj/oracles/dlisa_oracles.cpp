#include "dlisa_oracles.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dlisa/assignment.hpp"
#include "dlisa/fusion.hpp"

namespace dlisa::oracle {

std::vector<std::size_t> nms_bruteforce(const std::vector<Box3>& boxes, const std::vector<double>& scores,
                                        double threshold) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> kept;
  while (true) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best == boxes.size() || scores[i] > scores[best])) best = i;
    if (best == boxes.size()) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && geometry::iou(boxes[best], boxes[i]) > threshold) alive[i] = false;
  }
  return kept;
}

BruteAssignment assignment_bruteforce(const std::vector<double>& benefit, std::size_t rows, std::size_t cols) {
  BruteAssignment best;
  best.objective = -std::numeric_limits<double>::infinity();
  const bool by_rows = rows <= cols;
  const std::size_t small = by_rows ? rows : cols;
  const std::size_t large = by_rows ? cols : rows;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  do {
    // Small side element i goes to perm[i].
    double total = 0.0;
    for (std::size_t i = 0; i < small; ++i)
      total += by_rows ? benefit[i * cols + perm[i]] : benefit[perm[i] * cols + i];
    if (total > best.objective) {
      best.objective = total;
      best.pairs.clear();
      for (std::size_t i = 0; i < small; ++i)
        best.pairs.emplace_back(by_rows ? i : perm[i], by_rows ? perm[i] : i);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::sort(best.pairs.begin(), best.pairs.end());
  if (small == 0) best.objective = 0.0;
  return best;
}

double f1_bruteforce(const std::vector<Box3>& predicted, const std::vector<Box3>& ground_truth, double theta) {
  if (ground_truth.empty()) return predicted.empty() ? 1.0 : 0.0;
  if (predicted.empty()) return 0.0;
  std::vector<double> iou;
  for (const auto& p : predicted)
    for (const auto& g : ground_truth) iou.push_back(geometry::iou(p, g));
  const auto m = assignment_bruteforce(iou, predicted.size(), ground_truth.size());
  double tp = 0.0;
  for (const auto& [p, g] : m.pairs)
    if (iou[p * ground_truth.size() + g] >= theta) tp += 1.0;
  return 2.0 * tp / static_cast<double>(predicted.size() + ground_truth.size());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
    for (std::size_t j = 0; j < logits.cols; ++j) out(i, j) = std::exp(logits(i, j) - mx) / z;
  }
  return out;
}

namespace {

Matrix project(const Matrix& x, const Matrix& w) {
  Matrix out(x.rows, w.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += x(i, k) * w(k, j);
      out(i, j) = s;
    }
  return out;
}

Matrix mix(const Matrix& weights, const Matrix& v) { return project(weights, v); }

Matrix scaled_scores(const Matrix& q, const Matrix& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  Matrix s(q.rows, k.rows);
  for (std::size_t i = 0; i < q.rows; ++i)
    for (std::size_t j = 0; j < k.rows; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q.cols; ++c) dot += q(i, c) * k(j, c);
      s(i, j) = dot * scale;
    }
  return s;
}

}  // namespace

Matrix attention_direct(const Matrix& feats, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  return mix(softmax_rows(scaled_scores(project(feats, wq), project(feats, wk))), project(feats, wv));
}

Matrix distance_attention_direct(const Matrix& feats, const geometry::DistanceMatrix& dist, const Matrix& wv) {
  Matrix d(dist.n, dist.n, dist.values);
  return mix(softmax_rows(d), project(feats, wv));
}

Matrix lisa_direct(const Matrix& feats, const Matrix& g, const geometry::DistanceMatrix& dist, const Matrix& wq,
                   const Matrix& wk, const Matrix& wv, const Matrix& beta_w, double beta_b) {
  const std::size_t n = feats.rows;
  const Matrix s = scaled_scores(project(feats, wq), project(feats, wk));
  Matrix logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = beta_b;
    for (std::size_t c = 0; c < g.cols; ++c) z += g(0, c) * beta_w(c, 0);
    for (std::size_t c = 0; c < feats.cols; ++c) z += feats(i, c) * beta_w(g.cols + c, 0);
    const double beta = 1.0 / (1.0 + std::exp(-z));
    for (std::size_t j = 0; j < n; ++j) logits(i, j) = (1.0 - beta) * s(i, j) + beta * dist(i, j);
  }
  return mix(softmax_rows(logits), project(feats, wv));
}

// ---- fixtures -------------------------------------------------------------------------

Box3 random_box(Rng& rng, double extent) {
  return Box3({rng.uniform(0.0, extent), rng.uniform(0.0, extent), rng.uniform(0.0, 1.0)},
              {rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)});
}

MetricFixture metric_fixture() {
  using metrics::Category;
  auto cube = [](double x) { return Box3({x, 0.0, 0.0}, {1.0, 1.0, 1.0}); };
  const Box3 a = cube(0.0), b = cube(5.0), c = cube(10.0), d = cube(15.0);
  const Box3 a_near = cube(0.2);  // IoU with a: 0.8 / 1.2 = 2/3
  const Box3 b_far = cube(5.5);
  const Box3 c_far = cube(10.5);

  // Scene: a, c of class 0, b of class 1, d of class 2.
  const std::vector<int> classes{0, 1, 0, 2};
  auto rec = [&](std::vector<Box3> pred, std::vector<std::size_t> targets, int target_class) {
    metrics::SampleRecord r;
    r.predicted = std::move(pred);
    const Box3 objects[] = {a, b, c, d};
    for (std::size_t t : targets) r.ground_truth.push_back(objects[t]);
    r.target_objects = std::move(targets);
    r.target_class = target_class;
    r.scene_classes = classes;
    return r;
  };

  MetricFixture f;
  // ZT w/o D: the referred class (3) is absent.
  f.records.push_back(rec({}, {}, 3));
  f.records.push_back(rec({a}, {}, 3));
  f.records.push_back(rec({}, {}, 3));
  // ZT w/D: class 0 is present but the description matches nothing.
  f.records.push_back(rec({}, {}, 0));
  f.records.push_back(rec({b, c}, {}, 0));
  // ST w/o D: target b, the only class-1 object.
  f.records.push_back(rec({b}, {1}, 1));
  f.records.push_back(rec({b, d}, {1}, 1));
  f.records.push_back(rec({b_far}, {1}, 1));
  // ST w/D: target a, c is a distractor.
  f.records.push_back(rec({a_near}, {0}, 0));
  f.records.push_back(rec({c}, {0}, 0));
  // MT: targets a and c.
  f.records.push_back(rec({a, c}, {0, 2}, 0));
  f.records.push_back(rec({a, b, c_far}, {0, 2}, 0));

  f.sample_f1 = {1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 2.0 / 3.0, 0.0, 1.0, 0.0, 1.0, 0.4};
  const double cat[] = {2.0 / 3.0, 0.5, 5.0 / 9.0, 0.5, 0.7};
  const std::size_t count[] = {3, 2, 3, 2, 2};
  for (std::size_t i = 0; i < metrics::kNumCategories; ++i) {
    f.category_f1[i] = cat[i];
    f.category_count[i] = count[i];
  }
  f.overall = 263.0 / 450.0;
  return f;
}

// ---- suites -------------------------------------------------------------------------------

namespace {

constexpr double kAttentionTol = 1e-12;

std::string describe(std::size_t instance, const std::string& what) {
  return "instance " + std::to_string(instance) + ": " + what;
}

void fail(SuiteRow& row, std::size_t instance, const std::string& what) {
  if (row.failures++ == 0) row.first_failure = describe(instance, what);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal(0.0, scale);
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

SuiteRow nms_suite(Rng& rng, bool corrupt) {
  SuiteRow row{"nms"};
  for (std::size_t t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const bool coarse = t % 4 == 0;  // repeated scores exercise the tie rule
    std::vector<Box3> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
      boxes.push_back(random_box(rng, 3.0));
      const double s = rng.uniform();
      scores.push_back(coarse ? std::floor(s * 5.0) / 5.0 : s);
    }
    const double thr = rng.uniform(0.1, 0.7);
    auto got = geometry::nms(boxes, scores, thr);
    if (corrupt && !got.empty()) got.pop_back();
    const auto want = nms_bruteforce(boxes, scores, thr);
    ++row.cases;
    if (got != want) fail(row, t, "kept {" + join(got) + "} expected {" + join(want) + "}");
  }
  return row;
}

SuiteRow hungarian_suite(Rng& rng, bool corrupt) {
  SuiteRow row{"hungarian"};
  for (std::size_t t = 0; t < 100; ++t) {
    const std::size_t rows = 1 + rng.below(7), cols = 1 + rng.below(7);
    std::vector<double> benefit(rows * cols);
    for (double& v : benefit) v = rng.uniform();
    auto got = assignment::hungarian_max(benefit, rows, cols);
    if (corrupt) {
      if (got.pairs.size() >= 2) std::swap(got.pairs[0].second, got.pairs[1].second);
      else got.pairs.clear();
    }
    double objective = 0.0;
    for (const auto& [r, c] : got.pairs) objective += benefit[r * cols + c];
    const auto want = assignment_bruteforce(benefit, rows, cols);
    ++row.cases;
    if (got.pairs != want.pairs || std::abs(objective - want.objective) > 1e-12) {
      std::ostringstream os;
      os << rows << "x" << cols << " objective " << std::setprecision(17) << objective << " expected "
         << want.objective;
      fail(row, t, os.str());
    }
  }
  return row;
}

SuiteRow f1_suite(Rng& rng, bool corrupt) {
  SuiteRow row{"sample-f1"};
  for (std::size_t t = 0; t < 100; ++t) {
    std::vector<Box3> gt, pred;
    const std::size_t k = rng.below(5);
    for (std::size_t i = 0; i < k; ++i) gt.push_back(Box3({4.0 * static_cast<double>(i), 0.0, 0.5}, {1.0, 1.0, 1.0}));
    const std::size_t jittered = rng.below(k + 1);
    for (std::size_t i = 0; i < jittered; ++i) {
      const auto& src = gt[rng.below(k)];
      auto c = src.center();
      for (double& x : c) x += rng.normal(0.0, 0.2);
      pred.emplace_back(c, src.size());
    }
    const std::size_t extra = rng.below(3);
    for (std::size_t i = 0; i < extra; ++i) pred.push_back(random_box(rng, 12.0));
    double got = metrics::sample_f1(pred, gt, 0.5);
    if (corrupt) got += 0.1;
    const double want = f1_bruteforce(pred, gt, 0.5);
    ++row.cases;
    if (std::abs(got - want) > 1e-12) {
      std::ostringstream os;
      os << "|P|=" << pred.size() << " |G|=" << gt.size() << " f1 " << got << " expected " << want;
      fail(row, t, os.str());
    }
  }
  return row;
}

SuiteRow fixture_suite(bool corrupt) {
  SuiteRow row{"metric-fixture"};
  auto f = metric_fixture();
  const auto want = metric_fixture();
  if (corrupt) f.records[0].predicted.push_back(Box3({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}));
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    ++row.cases;
    const double got = metrics::sample_f1(f.records[i], 0.5);
    if (std::abs(got - want.sample_f1[i]) > 1e-12)
      fail(row, i, "sample f1 " + std::to_string(got) + " expected " + std::to_string(want.sample_f1[i]));
  }
  const auto report = metrics::dataset_f1(f.records, 0.5);
  for (std::size_t c = 0; c < metrics::kNumCategories; ++c) {
    ++row.cases;
    const auto& s = report.categories[c];
    if (s.count != want.category_count[c] || std::abs(s.f1 - want.category_f1[c]) > 1e-12)
      fail(row, 100 + c, metrics::label(metrics::kAllCategories[c]) + " f1 " + std::to_string(s.f1));
  }
  ++row.cases;
  if (std::abs(report.overall - want.overall) > 1e-12) fail(row, 200, "overall " + std::to_string(report.overall));
  return row;
}

enum class LisaCheck { B0, B1, Direct };

SuiteRow lisa_suite(Rng& rng, LisaCheck which, bool corrupt) {
  static const char* names[] = {"lisa-b0", "lisa-b1", "lisa-direct"};
  SuiteRow row{names[static_cast<int>(which)]};
  for (std::size_t t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t d = (t % 2) ? 8 : 4;
    std::vector<Box3> boxes;
    for (std::size_t i = 0; i < n; ++i) boxes.push_back(random_box(rng, 5.0));
    const auto dist = geometry::distance_matrix(boxes);
    const Matrix feats = random_matrix(rng, n, d);
    const Matrix g = random_matrix(rng, 1, d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    const Matrix wq = random_matrix(rng, d, d, s), wk = random_matrix(rng, d, d, s), wv = random_matrix(rng, d, d, s);
    const Matrix bw = random_matrix(rng, 2 * d, 1, s);
    const double bb = rng.normal(0.0, 0.5);

    ad::Tape tape;
    fusion::AttentionWeights w{tape.constant(wq), tape.constant(wk), tape.constant(wv)};
    fusion::LisaOptions opt;
    Matrix want;
    if (which == LisaCheck::B0) {
      opt.force_b = 0.0;
      want = attention_direct(feats, wq, wk, wv);
    } else if (which == LisaCheck::B1) {
      opt.force_b = 1.0;
      want = distance_attention_direct(feats, dist, wv);
    } else {
      want = lisa_direct(feats, g, dist, wq, wk, wv, bw, bb);
    }
    Matrix got = fusion::lisa(tape.constant(feats), tape.constant(g), dist, w, tape.constant(bw),
                              tape.constant(Matrix(1, 1, bb)), opt)
                     .value();
    if (corrupt) got.data[0] += 1e-9;
    ++row.cases;
    const double err = max_abs_diff(got, want);
    if (!(err <= kAttentionTol)) {
      std::ostringstream os;
      os << "N=" << n << " d=" << d << " max abs diff " << std::setprecision(3) << err;
      fail(row, t, os.str());
    }
  }
  return row;
}

}  // namespace

std::vector<std::string> suite_names() {
  return {"nms", "hungarian", "sample-f1", "metric-fixture", "lisa-b0", "lisa-b1", "lisa-direct"};
}

std::vector<SuiteRow> run_oracle_suites(std::uint64_t seed, const std::string& corrupt) {
  const auto names = suite_names();
  if (!corrupt.empty() && std::find(names.begin(), names.end(), corrupt) == names.end())
    throw std::invalid_argument("unknown suite '" + corrupt + "'");
  auto rng_for = [&](std::uint64_t tag) { return Rng(mix_seed(seed, tag)); };
  std::vector<SuiteRow> rows;
  {
    auto r = rng_for(1);
    rows.push_back(nms_suite(r, corrupt == "nms"));
  }
  {
    auto r = rng_for(2);
    rows.push_back(hungarian_suite(r, corrupt == "hungarian"));
  }
  {
    auto r = rng_for(3);
    rows.push_back(f1_suite(r, corrupt == "sample-f1"));
  }
  rows.push_back(fixture_suite(corrupt == "metric-fixture"));
  {
    auto r = rng_for(4);
    rows.push_back(lisa_suite(r, LisaCheck::B0, corrupt == "lisa-b0"));
  }
  {
    auto r = rng_for(5);
    rows.push_back(lisa_suite(r, LisaCheck::B1, corrupt == "lisa-b1"));
  }
  {
    auto r = rng_for(6);
    rows.push_back(lisa_suite(r, LisaCheck::Direct, corrupt == "lisa-direct"));
  }
  return rows;
}

std::string format_suite_table(const std::vector<SuiteRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "suite" << std::right << std::setw(7) << "cases" << std::setw(10) << "failures"
     << "  result\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.name << std::right << std::setw(7) << r.cases << std::setw(10)
       << r.failures << "  " << (r.passed() ? "PASS" : "FAIL");
    if (!r.first_failure.empty()) os << "  (" << r.first_failure << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace dlisa::oracle
