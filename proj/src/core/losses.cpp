// SPDX-License-Identifier: Apache-2.0
#include "core/losses.hpp"

#include "core/errors.hpp"

#include <algorithm>
#include <cmath>

namespace testam {

using ad::Index;
using ad::Matrix;
using ad::Var;

MaeResult masked_mae(const Matrix &y, const Matrix &y_hat) {
  require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(),
          "masked_mae: shape mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0)
      continue;
    sum += std::abs(y.data()[i] - y_hat.data()[i]);
    ++count;
  }
  if (count == 0)
    return {0.0, true};
  return {sum / static_cast<double>(count), false};
}

Var masked_mae(const Var &y_hat, const Matrix &y) {
  require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(),
          "masked_mae: shape mismatch");
  ad::Tape &tape = *y_hat.tape();
  const Matrix mask = (y.array() != 0.0).cast<double>().matrix();
  const double count = mask.sum();
  if (count == 0.0)
    return tape.constant(Matrix::Zero(1, 1));
  const Matrix diff = y_hat.value() - y;
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().cwiseProduct(mask).sum() / count;
  return tape.record(std::move(out), {y_hat},
                     [y_hat, diff, mask, count](ad::Tape &t, const Matrix &g,
                                                const Matrix &) {
                       const Matrix sign = diff.array().sign().matrix();
                       t.accumulate(y_hat,
                                    sign.cwiseProduct(mask) * (g(0, 0) / count));
                     });
}

Matrix pointwise_error(const Matrix &y, const Matrix &y_hat) {
  require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(),
          "pointwise_error: shape mismatch");
  return ((y - y_hat).array().abs() * (y.array() != 0.0).cast<double>()).matrix();
}

double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile of an empty set");
  require(q >= 0.0 && q <= 1.0, "quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double quantile_threshold(const Matrix &errors, const Matrix &y, double q) {
  require(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
  std::vector<double> kept;
  kept.reserve(static_cast<std::size_t>(errors.size()));
  for (Index i = 0; i < errors.size(); ++i)
    if (y.data()[i] != 0.0)
      kept.push_back(errors.data()[i]);
  return quantile(std::move(kept), q);
}

void fill_label(Matrix &labels, Index row, int selected, bool correct) {
  const Index e = labels.cols();
  if (correct) {
    labels.row(row).setZero();
    labels(row, selected) = 1.0;
  } else {
    labels.row(row).setConstant(1.0 / static_cast<double>(e - 1));
    labels(row, selected) = 0.0;
  }
}

Matrix worst_route_labels(const Matrix &errors, const Matrix &y,
                          std::span<const int> selected, int experts, double q,
                          double *threshold) {
  require(experts >= 2, "routing labels need at least two experts");
  require(static_cast<Index>(selected.size()) == errors.rows(),
          "worst_route_labels: selection length mismatch");
  const double thr = quantile_threshold(errors, y, q);
  Matrix labels(errors.rows(), experts);
  for (Index r = 0; r < errors.rows(); ++r)
    fill_label(labels, r, selected[r], errors(r, 0) < thr);
  if (threshold != nullptr)
    *threshold = thr;
  return labels;
}

Matrix node_time_mean(const Matrix &values, const Matrix &weight,
                      const Layout &l, Matrix *node_weight) {
  require(values.rows() == l.rows() && weight.rows() == l.rows(),
          "node_time_mean: layout mismatch");
  const Index groups = static_cast<Index>(l.batch) * l.nodes;
  Matrix sum = Matrix::Zero(groups, values.cols());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(groups);
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.steps; ++t)
      for (int n = 0; n < l.nodes; ++n) {
        const int r = l.row(b, t, n);
        if (weight(r, 0) == 0.0)
          continue;
        const Index g = static_cast<Index>(b) * l.nodes + n;
        sum.row(g) += values.row(r);
        count(g) += 1.0;
      }
  if (node_weight != nullptr)
    node_weight->resize(groups, 1);
  for (Index g = 0; g < groups; ++g) {
    if (count(g) > 0.0)
      sum.row(g) /= count(g);
    if (node_weight != nullptr)
      (*node_weight)(g, 0) = count(g) > 0.0 ? 1.0 : 0.0;
  }
  return sum;
}

Var node_time_mean(const Var &values, const Layout &l) {
  require(values.rows() == l.rows(), "node_time_mean: layout mismatch");
  const Index groups = static_cast<Index>(l.batch) * l.nodes;
  const double inv = 1.0 / l.steps;
  Matrix out = Matrix::Zero(groups, values.cols());
  const Matrix &v = values.value();
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.steps; ++t)
      out.middleRows(static_cast<Index>(b) * l.nodes, l.nodes) +=
          v.middleRows(l.row(b, t, 0), l.nodes) * inv;
  return values.tape()->record(
      std::move(out), {values}, [values, l, inv](ad::Tape &t, const Matrix &g, const Matrix &) {
        Matrix d(values.rows(), values.cols());
        for (int b = 0; b < l.batch; ++b)
          for (int s = 0; s < l.steps; ++s)
            d.middleRows(l.row(b, s, 0), l.nodes) =
                g.middleRows(static_cast<Index>(b) * l.nodes, l.nodes) * inv;
        t.accumulate(values, d);
      });
}

Matrix best_route_labels(const Matrix &node_errors, const Matrix &node_weight,
                         const Matrix &node_p, double q,
                         std::vector<int> *selected, double *threshold) {
  require(node_p.cols() >= 2, "routing labels need at least two experts");
  require(node_errors.rows() == node_p.rows() &&
              node_weight.rows() == node_p.rows(),
          "best_route_labels: row mismatch");
  // The weight matrix doubles as the mask for the quantile population.
  const double thr = quantile_threshold(node_errors, node_weight, 1.0 - q);
  Matrix normalized = node_p;
  for (Index r = 0; r < normalized.rows(); ++r)
    normalized.row(r) /= normalized.row(r).sum();
  const std::vector<int> sel = argmax_rows(normalized);
  Matrix labels(node_p.rows(), node_p.cols());
  for (Index r = 0; r < node_p.rows(); ++r)
    fill_label(labels, r, sel[r], node_errors(r, 0) < thr);
  if (selected != nullptr)
    *selected = sel;
  if (threshold != nullptr)
    *threshold = thr;
  return labels;
}

double routing_ce(const Matrix &p, const Matrix &labels, const Matrix &weight) {
  require(p.rows() == labels.rows() && p.cols() == labels.cols() &&
              weight.rows() == p.rows(),
          "routing_ce: shape mismatch");
  const double count = weight.sum();
  if (count == 0.0)
    return 0.0;
  const double e = static_cast<double>(p.cols());
  double total = 0.0;
  for (Index r = 0; r < p.rows(); ++r) {
    if (weight(r, 0) == 0.0)
      continue;
    for (Index c = 0; c < p.cols(); ++c)
      total -= weight(r, 0) * labels(r, c) *
               std::log(std::max(p(r, c), kProbabilityFloor));
  }
  return total / (e * count);
}

Var routing_ce(const Var &p, const Matrix &labels, const Matrix &weight) {
  ad::Tape &tape = *p.tape();
  const double count = weight.sum();
  if (count == 0.0)
    return tape.constant(Matrix::Zero(1, 1));
  Matrix out(1, 1);
  out(0, 0) = routing_ce(p.value(), labels, weight);
  const double e = static_cast<double>(p.cols());
  return tape.record(
      std::move(out), {p},
      [p, labels, weight, count, e](ad::Tape &t, const Matrix &g, const Matrix &) {
        const Matrix &pv = p.value();
        Matrix d = Matrix::Zero(pv.rows(), pv.cols());
        const double s = -g(0, 0) / (e * count);
        for (Index r = 0; r < pv.rows(); ++r) {
          if (weight(r, 0) == 0.0)
            continue;
          for (Index c = 0; c < pv.cols(); ++c)
            if (pv(r, c) > kProbabilityFloor)
              d(r, c) = s * weight(r, 0) * labels(r, c) / pv(r, c);
        }
        t.accumulate(p, d);
      });
}

LossResult total_loss(const ForecastBundle &bundle, const Batch &batch, double q,
                      const LossWeights &w) {
  require(q > 0.0 && q < 1.0, "q must be in (0, 1)");
  LossResult res;
  const Matrix &y = batch.y;

  Var regression;
  if (bundle.y_hat_ensemble.valid()) {
    regression = masked_mae(bundle.y_hat_ensemble, y);
  } else {
    int ran = 0;
    for (const Var &yh : bundle.y_hat_expert) {
      if (!yh.valid())
        continue;
      const Var term = masked_mae(yh, y);
      regression = regression.valid() ? ad::add(regression, term) : term;
      ++ran;
    }
    regression = ad::scale(regression, 1.0 / ran);
  }
  res.regression = regression.scalar();
  res.all_masked = masked_mae(y, bundle.y_hat).all_masked;
  Var total = ad::scale(regression, w.regression);

  const bool routing = bundle.gating && !bundle.y_hat_ensemble.valid() &&
                       !res.all_masked && (w.worst != 0.0 || w.best != 0.0);
  if (routing) {
    const Matrix errors = pointwise_error(y, bundle.y_hat);
    const Matrix observed = (y.array() != 0.0).cast<double>().matrix();
    RoutingLabels &lab = res.labels;
    lab.worst = worst_route_labels(errors, y, bundle.selected, kNumExperts, q,
                                   &lab.worst_threshold);
    lab.worst_weight = observed;
    const Var worst = routing_ce(bundle.p, lab.worst, observed);
    res.worst = worst.scalar();
    if (w.worst != 0.0)
      total = ad::add(total, ad::scale(worst, w.worst));

    if (w.best != 0.0) {
      const Matrix node_err = node_time_mean(errors, observed, batch.out, &lab.best_weight);
      const Var node_p = node_time_mean(bundle.p, batch.out);
      lab.best = best_route_labels(node_err, lab.best_weight, node_p.value(), q,
                                   &lab.best_selected, &lab.best_threshold);
      const Var best = routing_ce(node_p, lab.best, lab.best_weight);
      res.best = best.scalar();
      total = ad::add(total, ad::scale(best, w.best));
    }
  }
  res.total = total;
  return res;
}

} // namespace testam
