#pragma once

// Eager reverse-mode differentiation over dense row-major double matrices.
//
// A Tape records every op as it executes; backward() replays the records in
// reverse. Trainable tensors live in a ParamStore and enter a tape through
// Tape::param(); their gradients are accumulated into the store when the tape
// runs backward, so one store can collect gradients from several tapes.
// A tape and the Vars it hands out belong to a single thread.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dlisa::ad {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix row(std::vector<double> values);
  static Matrix column(std::vector<double> values);
  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Ordered registry of trainable tensors. Registration order is the
// serialization order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad();
  std::size_t num_scalars() const;

  std::vector<std::unique_ptr<Parameter>>& params() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& params() const { return params_; }

  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  Var param(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 on a 1x1 var, replays the tape in reverse and
  // adds leaf gradients into their Parameters. One call per recording.
  void backward(Var loss);

  // Negative-control hook for gradient checks: the gradient flushed into the
  // named parameter is multiplied by `factor`.
  void inject_gradient_fault(std::string param_name, double factor);

  std::size_t size() const { return nodes_.size(); }

  // Op construction (used by the free functions below).
  Var record(Matrix value, std::vector<std::size_t> inputs,
             std::function<void(Tape&, std::size_t self)> backward);
  Matrix& value_of(std::size_t id) { return nodes_[id]->value; }
  Matrix& grad_of(std::size_t id);
  const Matrix& value_of(std::size_t id) const { return nodes_[id]->value; }
  const Matrix& grad_ref(std::size_t id) const { return nodes_[id]->grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id]->needs_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, std::size_t)> backward;
  };
  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
  std::string fault_param_;
  double fault_factor_ = 1.0;
};

// ---- ops -----------------------------------------------------------------
// Shapes are checked; mismatches throw std::invalid_argument.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                      // elementwise
Var scale(Var a, double s);
Var affine(Var a, double s, double shift);  // s * a + shift, elementwise
Var add_row(Var a, Var row);                // a (n x c) + row (1 x c) broadcast over rows
Var scale_rows(Var a, Var col);             // row i of a times col(i, 0)
Var linear(Var x, Var w, Var b);            // x w + b, b broadcast as a row

Var sum(Var a);        // 1 x 1
Var mean(Var a);       // 1 x 1
Var mean_rows(Var a);  // 1 x c, column-wise mean over rows

Var sigmoid(Var a);
Var tanh(Var a);
Var gelu(Var a);
Var clamp_min(Var a, double lo);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
Var l2_normalize_rows(Var a, double eps = 1e-12);

Var concat_cols(Var a, Var b);  // [a | b]; for 1 x p and 1 x q rows this is vector concatenation
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var repeat_rows(Var row, std::size_t n);  // 1 x c -> n x c
Var repeat_cols(Var col, std::size_t m);  // n x 1 -> n x m
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var stack_rows(std::span<const Var> rows);  // k vars of 1 x c -> k x c
Var pick(Var a, std::size_t r, std::size_t c);  // 1 x 1

// Mean binary cross-entropy; p is clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-7;
Var bce_mean(Var p, std::span<const double> labels);
// Cross-entropy of a logit vector (1 x n or n x 1) against a class index.
Var cross_entropy(Var logits, std::size_t target);

// ---- finite-difference checking -------------------------------------------

struct ParamCheck {
  std::string name;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct FdReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central differences (f(t + h) - f(t - h)) / 2h for every coordinate of every
// parameter in `store`; relative error |a - n| / max(1, |a|, |n|).
// `build` records the scalar objective on the given tape from `store`.
// `configure`, when set, is applied to the analytic tape before recording.
FdReport fd_check(ParamStore& store, const std::function<Var(Tape&)>& build, double h,
                  double tol, const std::function<void(Tape&)>& configure = {});

}  // namespace dlisa::ad
