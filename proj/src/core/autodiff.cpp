// SPDX-License-Identifier: Apache-2.0
#include "core/autodiff.hpp"

#include "core/errors.hpp"

#include <cmath>
#include <cstdint>

namespace testam::ad {

Parameter &ParameterSet::add(const std::string &name, Index rows, Index cols) {
  require(!index_.contains(name), "duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  Parameter &p = params_.emplace_back();
  p.name = name;
  p.value = Matrix::Zero(rows, cols);
  p.grad = Matrix::Zero(rows, cols);
  return p;
}

Parameter *ParameterSet::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter *ParameterSet::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter &ParameterSet::at(std::string_view name) {
  Parameter *p = find(name);
  require(p != nullptr, "unknown parameter: " + std::string(name));
  return *p;
}

const Parameter &ParameterSet::at(std::string_view name) const {
  const Parameter *p = find(name);
  require(p != nullptr, "unknown parameter: " + std::string(name));
  return *p;
}

std::size_t ParameterSet::scalar_count() const { return scalar_count(""); }

std::size_t ParameterSet::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto &p : params_)
    if (p.name.starts_with(prefix))
      n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto &p : params_)
    p.grad.setZero();
}

std::vector<Matrix> ParameterSet::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto &p : params_)
    out.push_back(p.value);
  return out;
}

void ParameterSet::restore(const std::vector<Matrix> &values) {
  require(values.size() == params_.size(), "snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    params_[i].value = values[i];
}

Var Tape::constant(Matrix value) {
  Node &n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter &p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end())
    return Var(this, it->second);
  Node &n = nodes_.emplace_back();
  n.value = p.value;
  n.requires_grad = record_;
  n.param = &p;
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward bw) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(bw));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward bw) {
  bool needs = false;
  if (record_)
    for (const Var &v : inputs)
      needs = needs || nodes_[v.id_].requires_grad;
  Node &n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs)
    n.backward = std::move(bw);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Var &root) {
  require(root.tape_ == this, "backward root belongs to another tape");
  require(root.rows() == 1 && root.cols() == 1, "backward root must be scalar");
  if (!nodes_[root.id_].requires_grad)
    return;
  nodes_[root.id_].grad = Matrix::Ones(1, 1);
  for (int i = root.id_; i >= 0; --i) {
    Node &n = nodes_[i];
    if (n.grad.size() == 0)
      continue;
    if (n.backward)
      n.backward(*this, n.grad, n.value);
    if (n.param)
      n.param->grad += n.grad;
  }
}

namespace {

void check_same_shape(const Var &a, const Var &b, const char *op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch");
}

} // namespace

Var matmul(const Var &a, const Var &b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape &t = *a.tape();
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
    if (t.requires_grad(a))
      t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b))
      t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var &a, const Var &b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape &t = *a.tape();
  Matrix out = a.value() * b.value().transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
    if (t.requires_grad(a))
      t.accumulate(a, g * b.value());
    if (t.requires_grad(b))
      t.accumulate(b, g.transpose() * a.value());
  });
}

Var affine(const Var &x, const Var &w, const Var &b) {
  require(x.cols() == w.rows(), "affine: inner dimension mismatch");
  require(b.rows() == 1 && b.cols() == w.cols(), "affine: bias shape mismatch");
  Tape &t = *x.tape();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return t.record(std::move(out), {x, w, b},
                  [x, w, b](Tape &t, const Matrix &g, const Matrix &) {
                    if (t.requires_grad(x))
                      t.accumulate(x, g * w.value().transpose());
                    if (t.requires_grad(w))
                      t.accumulate(w, x.value().transpose() * g);
                    if (t.requires_grad(b))
                      t.accumulate(b, g.colwise().sum());
                  });
}

Var add(const Var &a, const Var &b) {
  check_same_shape(a, b, "add");
  Tape &t = *a.tape();
  return t.record(a.value() + b.value(), {a, b},
                  [a, b](Tape &t, const Matrix &g, const Matrix &) {
                    t.accumulate(a, g);
                    t.accumulate(b, g);
                  });
}

Var sub(const Var &a, const Var &b) {
  check_same_shape(a, b, "sub");
  Tape &t = *a.tape();
  return t.record(a.value() - b.value(), {a, b},
                  [a, b](Tape &t, const Matrix &g, const Matrix &) {
                    t.accumulate(a, g);
                    t.accumulate(b, -g);
                  });
}

Var mul(const Var &a, const Var &b) {
  check_same_shape(a, b, "mul");
  Tape &t = *a.tape();
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
    if (t.requires_grad(a))
      t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b))
      t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var &a, double s) { return affine_scalar(a, s, 0.0); }

Var affine_scalar(const Var &x, double a, double c) {
  Tape &t = *x.tape();
  Matrix out = (x.value() * a).array() + c;
  return t.record(std::move(out), {x},
                  [x, a](Tape &t, const Matrix &g, const Matrix &) { t.accumulate(x, g * a); });
}

Var add_row(const Var &x, const Var &row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch");
  Tape &t = *x.tape();
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), {x, row},
                  [x, row](Tape &t, const Matrix &g, const Matrix &) {
                    t.accumulate(x, g);
                    if (t.requires_grad(row))
                      t.accumulate(row, g.colwise().sum());
                  });
}

Var relu(const Var &x) {
  Tape &t = *x.tape();
  Matrix out = x.value().cwiseMax(0.0);
  return t.record(std::move(out), {x}, [x](Tape &t, const Matrix &g, const Matrix &) {
    t.accumulate(x, (x.value().array() > 0.0).select(g, 0.0));
  });
}

Var sin(const Var &x) {
  Tape &t = *x.tape();
  Matrix out = x.value().array().sin().matrix();
  return t.record(std::move(out), {x}, [x](Tape &t, const Matrix &g, const Matrix &) {
    t.accumulate(x, g.cwiseProduct(x.value().array().cos().matrix()));
  });
}

Matrix softmax_rows(const Matrix &x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var softmax_rows(const Var &x) {
  Tape &t = *x.tape();
  return t.record(softmax_rows(x.value()), {x},
                  [x](Tape &t, const Matrix &g, const Matrix &p) {
                    Matrix dot = g.cwiseProduct(p).rowwise().sum();
                    t.accumulate(x, p.cwiseProduct(g - dot.replicate(1, g.cols())));
                  });
}

Var layer_norm(const Var &x, const Var &gain, const Var &bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 &&
              bias.cols() == x.cols(),
          "layer_norm: parameter shape mismatch");
  Tape &t = *x.tape();
  const Index rows = x.rows(), cols = x.cols();
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  const Matrix &xv = x.value();
  for (Index r = 0; r < rows; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(gain))
          t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(bias))
          t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(x))
          return;
        Matrix dxhat = g;
        dxhat.array().rowwise() *= gain.value().row(0).array();
        const double n = static_cast<double>(g.cols());
        Matrix dx(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r) {
          const double s1 = dxhat.row(r).sum() / n;
          const double s2 = dxhat.row(r).dot(xhat.row(r)) / n;
          dx.row(r) = ((dxhat.row(r).array() - s1 - xhat.row(r).array() * s2) *
                       inv_std(r))
                          .matrix();
        }
        t.accumulate(x, dx);
      });
}

Var row_sum(const Var &x) {
  Tape &t = *x.tape();
  Matrix out = x.value().rowwise().sum();
  const Index cols = x.cols();
  return t.record(std::move(out), {x}, [x, cols](Tape &t, const Matrix &g, const Matrix &) {
    t.accumulate(x, g.replicate(1, cols));
  });
}

Var gather_rows(const Var &x, std::span<const int> rows) {
  Tape &t = *x.tape();
  const Matrix &xv = x.value();
  Matrix out(static_cast<Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < xv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = xv.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const Index src_rows = xv.rows();
  return t.record(std::move(out), {x},
                  [x, idx = std::move(idx), src_rows](Tape &t, const Matrix &g, const Matrix &) {
                    Matrix dx = Matrix::Zero(src_rows, g.cols());
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      dx.row(idx[i]) += g.row(static_cast<Index>(i));
                    t.accumulate(x, dx);
                  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape &t = *parts[0].tape();
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var &p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var &p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts,
                  [inputs](Tape &t, const Matrix &g, const Matrix &) {
                    Index at = 0;
                    for (const Var &p : inputs) {
                      if (t.requires_grad(p))
                        t.accumulate(p, g.middleCols(at, p.cols()));
                      at += p.cols();
                    }
                  });
}

Var slice_cols(const Var &x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(),
          "slice_cols: range out of bounds");
  Tape &t = *x.tape();
  Matrix out = x.value().middleCols(start, count);
  const Index cols = x.cols();
  return t.record(std::move(out), {x},
                  [x, start, count, cols](Tape &t, const Matrix &g, const Matrix &) {
                    Matrix dx = Matrix::Zero(g.rows(), cols);
                    dx.middleCols(start, count) = g;
                    t.accumulate(x, dx);
                  });
}

Var sum_all(const Var &x) {
  Tape &t = *x.tape();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Index r = x.rows(), c = x.cols();
  return t.record(std::move(out), {x}, [x, r, c](Tape &t, const Matrix &g, const Matrix &) {
    t.accumulate(x, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean_all(const Var &x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum_all(x), 1.0 / n);
}

Var dropout(const Var &x, double rate, std::mt19937_64 &rng) {
  if (rate <= 0.0)
    return x;
  require(rate < 1.0, "dropout rate must be < 1");
  Tape &t = *x.tape();
  // Four 16-bit uniforms per 64-bit draw.
  const auto cut = static_cast<std::uint64_t>(std::llround(rate * 65536.0));
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  std::uint64_t bits = 0;
  for (Index i = 0; i < mask.size(); ++i) {
    if (i % 4 == 0)
      bits = rng();
    mask.data()[i] = (bits & 0xffffU) >= cut ? scale : 0.0;
    bits >>= 16;
  }
  Matrix out = x.value().cwiseProduct(mask);
  return t.record(std::move(out), {x},
                  [x, mask = std::move(mask)](Tape &t, const Matrix &g, const Matrix &) {
                    t.accumulate(x, g.cwiseProduct(mask));
                  });
}

void xavier_uniform(Parameter &p, std::mt19937_64 &rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = dist(rng);
}

} // namespace testam::ad
