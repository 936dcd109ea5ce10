#include "dlisa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dlisa::ad {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(op + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                              std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                              std::to_string(b.cols) + ")");
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op applied to an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("op mixes Vars from different tapes");
  return tape_of(a);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Matrix ----------------------------------------------------------------

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw std::invalid_argument("Matrix: value count != rows * cols");
}

Matrix Matrix::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(1, n, std::move(values));
}

Matrix Matrix::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(n, 1, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) shape_error("matmul", a, b);
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* orow = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.data[i * a.cols + k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

// ---- ParamStore ------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix(init.rows, init.cols);
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return *params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

ParamStore::ParamStore(const ParamStore& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

// ---- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value_of(id_); }
const Matrix& Var::grad() const { return tape_->grad_ref(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("Var::scalar on a non-1x1 value");
  return v.data[0];
}

Var Tape::constant(Matrix m) {
  auto n = std::make_unique<Node>();
  n->value = std::move(m);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  auto n = std::make_unique<Node>();
  n->value = p.value;
  n->grad = Matrix(p.value.rows, p.value.cols);
  n->needs_grad = true;
  n->param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs,
                 std::function<void(Tape&, std::size_t)> backward) {
  auto n = std::make_unique<Node>();
  n->needs_grad = std::any_of(inputs.begin(), inputs.end(),
                              [&](std::size_t i) { return nodes_[i]->needs_grad; });
  if (n->needs_grad) {
    n->grad = Matrix(value.rows, value.cols);
    n->backward = std::move(backward);
  }
  n->value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_of(std::size_t id) {
  Node& n = *nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::inject_gradient_fault(std::string param_name, double factor) {
  fault_param_ = std::move(param_name);
  fault_factor_ = factor;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (backward_done_) throw std::logic_error("backward: tape already replayed");
  if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  backward_done_ = true;
  if (!nodes_[loss.id()]->needs_grad) return;
  grad_of(loss.id()).data[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = *nodes_[id];
    if (n.needs_grad && n.backward) n.backward(*this, id);
  }
  for (auto& np : nodes_) {
    if (np->param == nullptr) continue;
    const double f = (!fault_param_.empty() && np->param->name == fault_param_) ? fault_factor_ : 1.0;
    auto& dst = np->param->grad.data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += f * np->grad.data[k];
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    if (t.needs_grad(ia)) {
      Matrix ga = matmul(g, transpose(t.value_of(ib)));
      auto& dst = t.grad_of(ia).data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += ga.data[k];
    }
    if (t.needs_grad(ib)) {
      Matrix gb = matmul(transpose(t.value_of(ia)), g);
      auto& dst = t.grad_of(ib).data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gb.data[k];
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(transpose(a.value()), {ia}, [ia](Tape& t, std::size_t self) {
    Matrix g = transpose(t.grad_ref(self));
    auto& dst = t.grad_of(ia).data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[k];
  });
}

namespace {

template <class Fwd, class Bwd>
Var binary_elementwise(const char* name, Var a, Var b, Fwd fwd, Bwd bwd) {
  Tape& t = tape_of(a, b);
  if (!a.value().same_shape(b.value())) shape_error(name, a.value(), b.value());
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = fwd(a.value().data[k], b.value().data[k]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, bwd](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& av = t.value_of(ia);
    const Matrix& bv = t.value_of(ib);
    const bool na = t.needs_grad(ia), nb = t.needs_grad(ib);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto [da, db] = bwd(av.data[k], bv.data[k]);
      if (na) t.grad_of(ia).data[k] += g.data[k] * da;
      if (nb) t.grad_of(ib).data[k] += g.data[k] * db;
    }
  });
}

// Elementwise unary op whose derivative is a function of (x, y).
template <class Fwd, class Deriv>
Var unary_elementwise(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = fwd(a.value().data[k]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, deriv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& x = t.value_of(ia);
    const Matrix& y = t.value_of(self);
    auto& dst = t.grad_of(ia).data;
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g.data[k] * deriv(x.data[k], y.data[k]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Var scale(Var a, double s) {
  return unary_elementwise(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var affine(Var a, double s, double shift) {
  return unary_elementwise(
      a, [s, shift](double x) { return s * x + shift; }, [s](double, double) { return s; });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.value(), row.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += row.value()(0, j);
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    if (t.needs_grad(ia)) {
      auto& dst = t.grad_of(ia).data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[k];
    }
    if (t.needs_grad(ir)) {
      auto& dst = t.grad_of(ir);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) dst(0, j) += g(i, j);
    }
  });
}

Var scale_rows(Var a, Var col) {
  Tape& t = tape_of(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("scale_rows", a.value(), col.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) *= col.value()(i, 0);
  const std::size_t ia = a.id(), ic = col.id();
  return t.record(std::move(out), {ia, ic}, [ia, ic](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& av = t.value_of(ia);
    const Matrix& cv = t.value_of(ic);
    const bool na = t.needs_grad(ia), nc = t.needs_grad(ic);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        if (na) t.grad_of(ia)(i, j) += g(i, j) * cv(i, 0);
        if (nc) t.grad_of(ic)(i, 0) += g(i, j) * av(i, j);
      }
    }
  });
}

Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self).data[0];
    for (double& d : t.grad_of(ia).data) d += g;
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows == 0) throw std::invalid_argument("mean_rows: no rows");
  Matrix out(1, av.cols);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) out(0, j) += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows);
  for (double& v : out.data) v *= inv;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < dst.rows; ++i)
      for (std::size_t j = 0; j < dst.cols; ++j) dst(i, j) += g(0, j) * inv;
  });
}

Var sigmoid(Var a) {
  return unary_elementwise(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  return unary_elementwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Var clamp_min(Var a, double lo) {
  return unary_elementwise(
      a, [lo](double x) { return x > lo ? x : lo; },
      [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) z += (y(i, j) = std::exp(x(i, j) - mx));
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) /= z;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& y = t.value_of(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols; ++j) dst(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) z += std::exp(x(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = x(i, j) - lse;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& y = t.value_of(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) gs += g(i, j);
      for (std::size_t j = 0; j < y.cols; ++j) dst(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  Tape& t = tape_of(a, gain);
  tape_of(a, bias);
  const Matrix& x = a.value();
  if (gain.rows() != 1 || gain.cols() != x.cols) shape_error("layer_norm_rows", x, gain.value());
  if (bias.rows() != 1 || bias.cols() != x.cols) shape_error("layer_norm_rows", x, bias.value());
  const std::size_t c = x.cols;
  Matrix xhat(x.rows, c), y(x.rows, c);
  std::vector<double> inv_std(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (x(i, j) - mu) * inv_std[i];
      y(i, j) = xhat(i, j) * gain.value()(0, j) + bias.value()(0, j);
    }
  }
  const std::size_t ia = a.id(), ig = gain.id(), ib = bias.id();
  return t.record(std::move(y), {ia, ig, ib},
                  [ia, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& t, std::size_t self) {
                    const Matrix& g = t.grad_ref(self);
                    const Matrix& gv = t.value_of(ig);
                    const std::size_t c = g.cols;
                    for (std::size_t i = 0; i < g.rows; ++i) {
                      if (t.needs_grad(ig) || t.needs_grad(ib)) {
                        for (std::size_t j = 0; j < c; ++j) {
                          if (t.needs_grad(ig)) t.grad_of(ig)(0, j) += g(i, j) * xhat(i, j);
                          if (t.needs_grad(ib)) t.grad_of(ib)(0, j) += g(i, j);
                        }
                      }
                      if (!t.needs_grad(ia)) continue;
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g(i, j) * gv(0, j);
                        s1 += dxh;
                        s2 += dxh * xhat(i, j);
                      }
                      const double cn = static_cast<double>(c);
                      Matrix& dst = t.grad_of(ia);
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g(i, j) * gv(0, j);
                        dst(i, j) += inv_std[i] / cn * (cn * dxh - s1 - xhat(i, j) * s2);
                      }
                    }
                  });
}

Var l2_normalize_rows(Var a, double eps) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  std::vector<double> norms(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) ss += x(i, j) * x(i, j);
    norms[i] = std::sqrt(ss + eps);
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = x(i, j) / norms[i];
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {ia}, [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    const Matrix& y = t.value_of(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) gy += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols; ++j) dst(i, j) += (g(i, j) - y(i, j) * gy) / norms[i];
    }
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows != bv.rows) shape_error("concat_cols", av, bv);
  Matrix out(av.rows, av.cols + bv.cols);
  for (std::size_t i = 0; i < av.rows; ++i) {
    for (std::size_t j = 0; j < av.cols; ++j) out(i, j) = av(i, j);
    for (std::size_t j = 0; j < bv.cols; ++j) out(i, av.cols + j) = bv(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id(), ac = av.cols;
  return t.record(std::move(out), {ia, ib}, [ia, ib, ac](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        if (j < ac) {
          if (t.needs_grad(ia)) t.grad_of(ia)(i, j) += g(i, j);
        } else if (t.needs_grad(ib)) {
          t.grad_of(ib)(i, j - ac) += g(i, j);
        }
      }
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (start + count > av.cols) throw std::invalid_argument("slice_cols: range out of bounds");
  Matrix out(av.rows, count);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, start](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) dst(i, start + j) += g(i, j);
  });
}

Var repeat_rows(Var row, std::size_t n) {
  Tape& t = tape_of(row);
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expects a 1 x c row");
  Matrix out(n, row.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) = row.value()(0, j);
  const std::size_t ir = row.id();
  return t.record(std::move(out), {ir}, [ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    Matrix& dst = t.grad_of(ir);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) dst(0, j) += g(i, j);
  });
}

Var repeat_cols(Var col, std::size_t m) {
  Tape& t = tape_of(col);
  if (col.cols() != 1) throw std::invalid_argument("repeat_cols: expects an n x 1 column");
  Matrix out(col.rows(), m);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = col.value()(i, 0);
  const std::size_t ic = col.id();
  return t.record(std::move(out), {ic}, [ic](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    Matrix& dst = t.grad_of(ic);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) dst(i, 0) += g(i, j);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows) throw std::invalid_argument("gather_rows: index out of range");
    for (std::size_t j = 0; j < av.cols; ++j) out(i, j) = av(rows[i], j);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    Matrix& dst = t.grad_of(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols; ++j) dst(idx[i], j) += g(i, j);
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  Tape& t = tape_of(rows[0]);
  const std::size_t c = rows[0].cols();
  Matrix out(rows.size(), c);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tape_of(rows[0], rows[i]);
    if (rows[i].rows() != 1 || rows[i].cols() != c)
      shape_error("stack_rows", rows[0].value(), rows[i].value());
    for (std::size_t j = 0; j < c; ++j) out(i, j) = rows[i].value()(0, j);
    ids.push_back(rows[i].id());
  }
  std::vector<std::size_t> inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      Matrix& dst = t.grad_of(ids[i]);
      for (std::size_t j = 0; j < g.cols; ++j) dst(0, j) += g(i, j);
    }
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  Tape& t = tape_of(a);
  if (r >= a.rows() || c >= a.cols()) throw std::invalid_argument("pick: index out of range");
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, a.value()(r, c)), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    t.grad_of(ia)(r, c) += t.grad_ref(self).data[0];
  });
}

Var bce_mean(Var p, std::span<const double> labels) {
  Tape& t = tape_of(p);
  const Matrix& pv = p.value();
  if (pv.size() != labels.size() || pv.size() == 0)
    throw std::invalid_argument("bce_mean: probabilities and labels differ in length");
  const double n = static_cast<double>(pv.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const double q = std::clamp(pv.data[k], kProbClamp, 1.0 - kProbClamp);
    loss -= labels[k] * std::log(q) + (1.0 - labels[k]) * std::log(1.0 - q);
  }
  const std::size_t ip = p.id();
  std::vector<double> y(labels.begin(), labels.end());
  return t.record(Matrix(1, 1, loss / n), {ip}, [ip, n, y = std::move(y)](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self).data[0];
    const Matrix& pv = t.value_of(ip);
    auto& dst = t.grad_of(ip).data;
    for (std::size_t k = 0; k < dst.size(); ++k) {
      const double q = pv.data[k];
      if (q < kProbClamp || q > 1.0 - kProbClamp) continue;
      dst[k] += g * (-(y[k] / q) + (1.0 - y[k]) / (1.0 - q)) / n;
    }
  });
}

Var cross_entropy(Var logits, std::size_t target) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  if (z.rows != 1 && z.cols != 1) throw std::invalid_argument("cross_entropy: logits must be a vector");
  if (target >= z.size()) throw std::invalid_argument("cross_entropy: target out of range");
  const double mx = *std::max_element(z.data.begin(), z.data.end());
  double s = 0.0;
  for (double v : z.data) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const std::size_t iz = logits.id();
  return t.record(Matrix(1, 1, lse - z.data[target]), {iz}, [iz, target, lse](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self).data[0];
    const Matrix& z = t.value_of(iz);
    auto& dst = t.grad_of(iz).data;
    for (std::size_t k = 0; k < dst.size(); ++k)
      dst[k] += g * (std::exp(z.data[k] - lse) - (k == target ? 1.0 : 0.0));
  });
}

// ---- finite differences ----------------------------------------------------

FdReport fd_check(ParamStore& store, const std::function<Var(Tape&)>& build, double h,
                  double tol, const std::function<void(Tape&)>& configure) {
  store.zero_grad();
  {
    Tape tape;
    if (configure) configure(tape);
    Var loss = build(tape);
    tape.backward(loss);
  }
  FdReport report;
  report.tolerance = tol;
  auto evaluate = [&] {
    Tape tape;
    return build(tape).scalar();
  };
  for (auto& p : store.params()) {
    ParamCheck check;
    check.name = p->name;
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double saved = p->value.data[k];
      p->value.data[k] = saved + h;
      const double up = evaluate();
      p->value.data[k] = saved - h;
      const double down = evaluate();
      p->value.data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data[k];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel >= check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = k;
        check.analytic = analytic;
        check.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace dlisa::ad
