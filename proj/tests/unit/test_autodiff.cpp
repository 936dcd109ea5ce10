#include <cmath>

#include <gtest/gtest.h>

#include "dlisa/autodiff.hpp"
#include "dlisa/rng.hpp"

using namespace dlisa;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix randn(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal(0.0, s);
  return m;
}

// Contracts an op output with a fixed random matrix so every output entry matters.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, tape.constant(randn(rng, out.rows(), out.cols()))));
}

struct OpCase {
  const char* name;
  std::function<Var(Tape&, ad::ParamStore&)> build;
};

}  // namespace

TEST(Matrix, MatmulIdentityAndZero) {
  Rng rng(1);
  const Matrix b = randn(rng, 3, 2);
  EXPECT_EQ(ad::matmul(Matrix::identity(3), b).data, b.data);
  EXPECT_EQ(ad::matmul(Matrix(4, 3, 0.0), b).data, Matrix(4, 2, 0.0).data);
}

TEST(FdCheck, QuadraticIsNearlyExact) {
  Rng rng(2);
  ad::ParamStore store;
  store.add("theta", randn(rng, 5, 1));
  const auto r = ad::fd_check(
      store, [&](Tape& t) { Var x = t.param(store.get("theta")); return ad::sum(ad::mul(x, x)); }, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(FdCheck, CorruptedGradientIsCaught) {
  Rng rng(3);
  ad::ParamStore store;
  store.add("theta", randn(rng, 3, 1));
  auto f = [&](Tape& t) { Var x = t.param(store.get("theta")); return ad::sum(ad::mul(x, x)); };
  const auto r = ad::fd_check(store, f, 1e-5, 1e-4, [](Tape& t) { t.inject_gradient_fault("theta", 1.5); });
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 1e-4);
}

TEST(Ops, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  ad::ParamStore store;
  store.add("a", randn(rng, 3, 4));
  store.add("b", randn(rng, 4, 2));
  store.add("c", randn(rng, 3, 4));
  store.add("row", randn(rng, 1, 4));
  store.add("col", randn(rng, 3, 1));
  store.add("sq", randn(rng, 4, 4));
  store.add("gain", randn(rng, 1, 4));
  store.add("bias", randn(rng, 1, 4));
  auto P = [&](Tape& t, const char* n) { return t.param(store.get(n)); };
  const std::vector<OpCase> cases = {
      {"matmul", [&](Tape& t, auto&) { return ad::matmul(P(t, "a"), P(t, "b")); }},
      {"transpose", [&](Tape& t, auto&) { return ad::transpose(P(t, "a")); }},
      {"add", [&](Tape& t, auto&) { return ad::add(P(t, "a"), P(t, "c")); }},
      {"sub", [&](Tape& t, auto&) { return ad::sub(P(t, "a"), P(t, "c")); }},
      {"mul", [&](Tape& t, auto&) { return ad::mul(P(t, "a"), P(t, "c")); }},
      {"scale", [&](Tape& t, auto&) { return ad::scale(P(t, "a"), -2.5); }},
      {"affine", [&](Tape& t, auto&) { return ad::affine(P(t, "a"), 0.3, 1.0); }},
      {"add_row", [&](Tape& t, auto&) { return ad::add_row(P(t, "a"), P(t, "row")); }},
      {"scale_rows", [&](Tape& t, auto&) { return ad::scale_rows(P(t, "a"), P(t, "col")); }},
      {"linear", [&](Tape& t, auto&) { return ad::linear(P(t, "a"), P(t, "sq"), P(t, "row")); }},
      {"sum", [&](Tape& t, auto&) { return ad::sum(P(t, "a")); }},
      {"mean", [&](Tape& t, auto&) { return ad::mean(P(t, "a")); }},
      {"mean_rows", [&](Tape& t, auto&) { return ad::mean_rows(P(t, "a")); }},
      {"sigmoid", [&](Tape& t, auto&) { return ad::sigmoid(P(t, "a")); }},
      {"tanh", [&](Tape& t, auto&) { return ad::tanh(P(t, "a")); }},
      {"gelu", [&](Tape& t, auto&) { return ad::gelu(P(t, "a")); }},
      {"clamp_min", [&](Tape& t, auto&) { return ad::clamp_min(P(t, "a"), 0.05); }},
      {"softmax_rows", [&](Tape& t, auto&) { return ad::softmax_rows(P(t, "a")); }},
      {"log_softmax_rows", [&](Tape& t, auto&) { return ad::log_softmax_rows(P(t, "a")); }},
      {"layer_norm_rows", [&](Tape& t, auto&) { return ad::layer_norm_rows(P(t, "a"), P(t, "gain"), P(t, "bias")); }},
      {"l2_normalize_rows", [&](Tape& t, auto&) { return ad::l2_normalize_rows(P(t, "a")); }},
      {"concat_cols", [&](Tape& t, auto&) { return ad::concat_cols(P(t, "a"), P(t, "col")); }},
      {"slice_cols", [&](Tape& t, auto&) { return ad::slice_cols(P(t, "a"), 1, 2); }},
      {"repeat_rows", [&](Tape& t, auto&) { return ad::repeat_rows(P(t, "row"), 3); }},
      {"repeat_cols", [&](Tape& t, auto&) { return ad::repeat_cols(P(t, "col"), 5); }},
      {"gather_rows",
       [&](Tape& t, auto&) {
         const std::vector<std::size_t> idx{2, 0, 2};
         return ad::gather_rows(P(t, "a"), idx);
       }},
      {"stack_rows",
       [&](Tape& t, auto&) {
         const std::vector<std::size_t> second{1};
         std::vector<Var> rows{P(t, "row"), ad::tanh(P(t, "row")), ad::gather_rows(P(t, "a"), second)};
         return ad::stack_rows(rows);
       }},
      {"pick", [&](Tape& t, auto&) { return ad::pick(P(t, "a"), 1, 2); }},
      {"bce_mean",
       [&](Tape& t, auto&) {
         const std::vector<double> y{1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 0};
         return ad::bce_mean(ad::sigmoid(P(t, "a")), y);
       }},
      {"cross_entropy", [&](Tape& t, auto&) { return ad::cross_entropy(P(t, "col"), 2); }},
  };
  for (const auto& c : cases) {
    SCOPED_TRACE(c.name);
    const auto r = ad::fd_check(store, [&](Tape& t) {
      Var out = c.build(t, store);
      return out.rows() == 1 && out.cols() == 1 ? out : probe(t, out, 99);
    }, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << c.name << " max rel error " << r.max_rel_error;
  }
}

TEST(Ops, TrivialIdentities) {
  Rng rng(5);
  Tape t;
  const Matrix x = randn(rng, 3, 4);
  Var v = t.constant(x);
  EXPECT_EQ(ad::mul(v, t.constant(Matrix(3, 4, 1.0))).value().data, x.data);
  EXPECT_DOUBLE_EQ(ad::mean(t.constant(Matrix(2, 5, 3.25))).scalar(), 3.25);
  EXPECT_EQ(ad::linear(v, t.constant(Matrix(4, 2, 0.0)), t.constant(Matrix(1, 2, 0.0))).value().data,
            Matrix(3, 2, 0.0).data);
  EXPECT_EQ(ad::linear(v, t.constant(Matrix::identity(4)), t.constant(Matrix(1, 4, 0.0))).value().data, x.data);
  const auto cat = ad::concat_cols(t.constant(Matrix(1, 2, 1.0)), t.constant(Matrix(1, 3, 2.0)));
  EXPECT_EQ(cat.cols(), 5u);
  EXPECT_EQ(cat.value().data, (std::vector<double>{1, 1, 2, 2, 2}));
}

TEST(Ops, ConcatOfEmptiesIsEmpty) {
  Tape t;
  const auto cat = ad::concat_cols(t.constant(Matrix(1, 0)), t.constant(Matrix(1, 0)));
  EXPECT_EQ(cat.cols(), 0u);
}

TEST(Ops, SigmoidSaturatesWithoutOverflow) {
  Tape t;
  const auto s = ad::sigmoid(t.constant(Matrix::row({0.0, 30.0, -30.0, 800.0, -800.0}))).value().data;
  EXPECT_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 1.0, 1e-9);
  EXPECT_NEAR(s[2], 0.0, 1e-9);
  EXPECT_EQ(s[3], 1.0);
  EXPECT_EQ(s[4], 0.0);
}

TEST(Ops, SoftmaxRowsStochasticForLargeInputs) {
  Rng rng(6);
  Tape t;
  const auto s = ad::softmax_rows(t.constant(randn(rng, 6, 7, 1e4))).value();
  for (std::size_t i = 0; i < s.rows; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) z += s(i, j);
    EXPECT_NEAR(z, 1.0, 1e-12);
  }
  const auto u = ad::softmax_rows(t.constant(Matrix(1, 4, 7.0))).value().data;
  for (double v : u) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto h = ad::softmax_rows(t.constant(Matrix::row({0.0, 100.0, 0.0}))).value().data;
  EXPECT_NEAR(h[1], 1.0, 1e-12);
}

TEST(Ops, BceEdgeValues) {
  Tape t;
  const std::vector<double> y{1, 0, 1};
  EXPECT_NEAR(ad::bce_mean(t.constant(Matrix::column({0.5, 0.5, 0.5})), y).scalar(), std::log(2.0), 1e-15);
  EXPECT_LE(ad::bce_mean(t.constant(Matrix::column({1.0, 0.0, 1.0})), y).scalar(), -std::log(1.0 - ad::kProbClamp) + 1e-15);
}

TEST(Ops, CrossEntropyUniformIsLogN) {
  Tape t;
  EXPECT_NEAR(ad::cross_entropy(t.constant(Matrix::column({0.3, 0.3, 0.3, 0.3})), 1).scalar(), std::log(4.0), 1e-15);
  EXPECT_THROW(ad::cross_entropy(t.constant(Matrix::column({0.3, 0.3})), 2), std::invalid_argument);
}

TEST(Ops, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 3))), std::invalid_argument);
  EXPECT_THROW(ad::add(t.constant(Matrix(2, 3)), t.constant(Matrix(3, 2))), std::invalid_argument);
}

TEST(Tape, ParameterUsedTwiceAccumulates) {
  // f = sum(x * w) + sum(x * x): df/dx = w + 2x.
  Rng rng(7);
  ad::ParamStore store;
  auto& x = store.add("x", randn(rng, 2, 3));
  const Matrix w = randn(rng, 2, 3);
  Tape t;
  Var a = t.param(x), b = t.param(x);
  Var f = ad::add(ad::sum(ad::mul(a, t.constant(w))), ad::sum(ad::mul(b, a)));
  t.backward(f);
  for (std::size_t k = 0; k < w.data.size(); ++k) EXPECT_NEAR(x.grad.data[k], w.data[k] + 2.0 * x.value.data[k], 1e-14);
}

TEST(Tape, RepeatedRunsGiveIdenticalGradients) {
  Rng rng(8);
  ad::ParamStore store;
  store.add("a", randn(rng, 4, 4));
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    store.zero_grad();
    Tape t;
    Var a = t.param(store.get("a"));
    Var f = ad::sum(ad::softmax_rows(ad::matmul(a, ad::transpose(ad::tanh(a)))));
    t.backward(ad::mul(f, f));
    if (run == 0) first = store.get("a").grad.data;
    else EXPECT_EQ(first, store.get("a").grad.data);
  }
}

TEST(Tape, BackwardOnlyOnce) {
  ad::ParamStore store;
  auto& x = store.add("x", Matrix(1, 1, 2.0));
  Tape t;
  Var f = ad::mul(t.param(x), t.param(x));
  t.backward(f);
  EXPECT_THROW(t.backward(f), std::logic_error);
}

TEST(ParamStore, KeepsRegistrationOrderAndRejectsDuplicates) {
  ad::ParamStore store;
  store.add("z", Matrix(1, 1));
  store.add("a", Matrix(2, 2));
  EXPECT_EQ(store.params()[0]->name, "z");
  EXPECT_EQ(store.params()[1]->name, "a");
  EXPECT_EQ(store.num_scalars(), 5u);
  EXPECT_THROW(store.add("a", Matrix(1, 1)), std::invalid_argument);
  EXPECT_THROW(store.get("missing"), std::out_of_range);
}
