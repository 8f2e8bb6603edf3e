// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every tensor in the model is stored as a 2-D matrix whose rows
// enumerate (batch, time, node) positions and whose columns are features.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace testam::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Owns named parameters with stable addresses.
class ParameterSet {
public:
  Parameter &add(const std::string &name, Index rows, Index cols);

  Parameter *find(std::string_view name);
  const Parameter *find(std::string_view name) const;
  Parameter &at(std::string_view name);
  const Parameter &at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  /// Scalar count of parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const;

  void zero_grad();
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix> &values);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
  Var() = default;

  const Matrix &value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape *tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *tape, int id) : tape_(tape), id_(id) {}
  Tape *tape_ = nullptr;
  int id_ = -1;
};

class Tape {
public:
  /// Receives the gradient flowing into the result and the result itself.
  using Backward =
      std::function<void(Tape &, const Matrix &grad, const Matrix &out)>;

  /// With `record == false` only values are computed; nothing is retained for
  /// a backward pass.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var parameter(Parameter &p);

  /// Records an op result. The closure receives the gradient flowing into the
  /// result and must push gradients into its inputs with `accumulate`.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward bw);
  Var record(Matrix value, std::span<const Var> inputs, Backward bw);

  bool requires_grad(const Var &v) const { return nodes_[v.id_].requires_grad; }
  const Matrix &value(int id) const { return nodes_[id].value; }

  template <class Expr> void accumulate(const Var &v, const Expr &g) {
    Node &n = nodes_[v.id_];
    if (!n.requires_grad)
      return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Back-propagates from a 1x1 root. Parameter gradients are added into
  /// `Parameter::grad`.
  void backward(const Var &root);

private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter *param = nullptr;
  };
  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter *, int> param_ids_;
};

inline const Matrix &Var::value() const { return tape_->value(id_); }

// Linear algebra.
Var matmul(const Var &a, const Var &b);
/// a * b^T
Var matmul_nt(const Var &a, const Var &b);
/// x * w + b with b broadcast over rows.
Var affine(const Var &x, const Var &w, const Var &b);

// Element-wise.
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var scale(const Var &a, double s);
/// a * x + c
Var affine_scalar(const Var &x, double a, double c);
Var add_row(const Var &x, const Var &row);
Var relu(const Var &x);
Var sin(const Var &x);

// Row-wise.
Var softmax_rows(const Var &x);
Var layer_norm(const Var &x, const Var &gain, const Var &bias, double eps);
Var row_sum(const Var &x);

// Structural.
Var gather_rows(const Var &x, std::span<const int> rows);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var &x, Index start, Index count);

// Reductions.
Var sum_all(const Var &x);
Var mean_all(const Var &x);

/// Inverted dropout; identity when `rate == 0`.
Var dropout(const Var &x, double rate, std::mt19937_64 &rng);

/// Glorot/Xavier uniform fill, limit sqrt(6 / (fan_in + fan_out)) with
/// fan_in = rows and fan_out = cols.
void xavier_uniform(Parameter &p, std::mt19937_64 &rng);

/// Row-wise softmax of a plain matrix.
Matrix softmax_rows(const Matrix &x);

} // namespace testam::ad
