// SPDX-License-Identifier: Apache-2.0
#include "core/temporal_embedding.hpp"

#include "core/errors.hpp"

#include <cmath>
#include <numbers>

namespace testam {

using ad::Index;
using ad::Matrix;

Time2VecParams make_time2vec(ad::ParameterSet &params, const std::string &prefix,
                             int dim, std::mt19937_64 &rng) {
  require(dim >= 2, "time2vec width must be >= 2");
  Time2VecParams p;
  p.w = &params.add(prefix + ".w", 1, dim);
  p.phi = &params.add(prefix + ".phi", 1, dim);
  ad::xavier_uniform(*p.w, rng);
  ad::xavier_uniform(*p.phi, rng);
  // Periodic frequencies are drawn in cycles per day, up to ~0.4 * dim.
  for (Index i = 1; i < dim; ++i)
    p.w->value(0, i) *= 2.0 * std::numbers::pi * static_cast<double>(dim);
  return p;
}

std::vector<double> time2vec_at(double v, std::span<const double> w,
                                std::span<const double> phi) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double z = w[i] * v + phi[i];
    out[i] = i == 0 ? z : std::sin(z);
  }
  return out;
}

std::vector<double> time2vec(int tau, const Time2VecParams &p, int steps_per_day) {
  require(tau >= 0, "tau must be non-negative");
  const auto &w = p.w->value;
  const auto &phi = p.phi->value;
  return time2vec_at(static_cast<double>(tau) / steps_per_day,
                     std::span<const double>(w.data(), w.size()),
                     std::span<const double>(phi.data(), phi.size()));
}

ad::Var time2vec(ad::Tape &tape, std::span<const int> tau,
                 const Time2VecParams &p, int steps_per_day) {
  ad::Var w = tape.parameter(*p.w);
  ad::Var phi = tape.parameter(*p.phi);
  const Index len = static_cast<Index>(tau.size());
  const Index h = p.w->value.cols();
  Eigen::VectorXd v(len);
  for (Index r = 0; r < len; ++r) {
    require(tau[r] >= 0, "tau must be non-negative");
    v(r) = static_cast<double>(tau[r]) / steps_per_day;
  }
  Matrix pre = v * w.value().row(0);
  pre.rowwise() += phi.value().row(0);
  Matrix out = pre;
  out.rightCols(h - 1) = pre.rightCols(h - 1).array().sin().matrix();
  return tape.record(
      std::move(out), {w, phi},
      [w, phi, v, pre = std::move(pre), h](ad::Tape &t, const Matrix &g,
                                           const Matrix &) {
        Matrix dpre = g;
        dpre.rightCols(h - 1) = g.rightCols(h - 1).cwiseProduct(
            pre.rightCols(h - 1).array().cos().matrix());
        t.accumulate(w, v.transpose() * dpre);
        t.accumulate(phi, dpre.colwise().sum());
      });
}

TemporalEncoder TemporalEncoder::time2vec(ad::ParameterSet &params,
                                          const std::string &prefix, int dim,
                                          int steps_per_day,
                                          std::mt19937_64 &rng) {
  TemporalEncoder e;
  e.t2v_ = make_time2vec(params, prefix, dim, rng);
  e.steps_per_day_ = steps_per_day;
  e.dim_ = dim;
  return e;
}

TemporalEncoder TemporalEncoder::table(ad::ParameterSet &params,
                                       const std::string &prefix, int dim,
                                       int steps_per_day, std::mt19937_64 &rng) {
  TemporalEncoder e;
  e.table_ = &params.add(prefix + ".table", steps_per_day, dim);
  ad::xavier_uniform(*e.table_, rng);
  e.steps_per_day_ = steps_per_day;
  e.dim_ = dim;
  return e;
}

ad::Var TemporalEncoder::encode(ad::Tape &tape, std::span<const int> tau) const {
  if (table_ == nullptr)
    return testam::time2vec(tape, tau, t2v_, steps_per_day_);
  for (int v : tau)
    require(v >= 0 && v < steps_per_day_, "tau out of range");
  return ad::gather_rows(tape.parameter(*table_), tau);
}

InputProjection make_input_projection(ad::ParameterSet &params,
                                      const std::string &prefix, int in_dim,
                                      int hidden, std::mt19937_64 &rng) {
  InputProjection p;
  p.weight = &params.add(prefix + ".weight", in_dim, hidden);
  p.bias = &params.add(prefix + ".bias", 1, hidden);
  ad::xavier_uniform(*p.weight, rng);
  return p;
}

ad::Var embed_inputs(ad::Tape &tape, const ad::Var &x, const ad::Var &tim,
                     int num_nodes, const InputProjection &proj) {
  require(x.rows() == tim.rows() * num_nodes,
          "embed_inputs: x rows must equal steps * nodes");
  require(x.cols() + tim.cols() == proj.weight->value.rows(),
          "embed_inputs: feature width does not match projection");
  std::vector<int> step_of_row(static_cast<std::size_t>(x.rows()));
  for (std::size_t r = 0; r < step_of_row.size(); ++r)
    step_of_row[r] = static_cast<int>(r) / num_nodes;
  const ad::Var parts[] = {x, ad::gather_rows(tim, step_of_row)};
  return ad::affine(ad::concat_cols(parts), tape.parameter(*proj.weight),
                    tape.parameter(*proj.bias));
}

} // namespace testam
