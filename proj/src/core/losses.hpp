// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/attention.hpp"
#include "core/autodiff.hpp"
#include "core/experts_moe.hpp"

#include <span>
#include <vector>

namespace testam {

inline constexpr double kProbabilityFloor = 1e-12;

struct MaeResult {
  double value = 0.0;
  bool all_masked = false;
};

/// Mean |y - y_hat| over entries where y != 0.
MaeResult masked_mae(const ad::Matrix &y, const ad::Matrix &y_hat);
/// Differentiable variant; a zero constant when every target is masked.
ad::Var masked_mae(const ad::Var &y_hat, const ad::Matrix &y);

/// |y - y_hat| with masked entries set to 0.
ad::Matrix pointwise_error(const ad::Matrix &y, const ad::Matrix &y_hat);

/// Linear-interpolation quantile (numpy "linear" method).
double quantile(std::vector<double> values, double q);

/// q-quantile of the errors at entries where y != 0. Throws on an empty set.
double quantile_threshold(const ad::Matrix &errors, const ad::Matrix &y, double q);

/// Two-case label: all mass on `selected` when `correct`, otherwise spread
/// uniformly over the other experts.
void fill_label(ad::Matrix &labels, ad::Index row, int selected, bool correct);

struct RoutingLabels {
  ad::Matrix worst;          ///< [B*T*N, E]
  ad::Matrix worst_weight;   ///< [B*T*N, 1], 1 where the target is observed
  double worst_threshold = 0.0;
  ad::Matrix best;           ///< [B*N, E]
  ad::Matrix best_weight;    ///< [B*N, 1], 1 where the node has observations
  std::vector<int> best_selected;
  double best_threshold = 0.0;
};

/// Point-wise labels: correct when error < q-quantile of the observed errors.
ad::Matrix worst_route_labels(const ad::Matrix &errors, const ad::Matrix &y,
                              std::span<const int> selected, int experts,
                              double q, double *threshold = nullptr);

/// Node-wise labels from time-mean errors and time-mean probabilities:
/// correct when the node error < (1 - q)-quantile of node errors.
/// `node_errors` and `node_weight` are [B*N, 1]; `node_p` is [B*N, E].
ad::Matrix best_route_labels(const ad::Matrix &node_errors,
                             const ad::Matrix &node_weight,
                             const ad::Matrix &node_p, double q,
                             std::vector<int> *selected = nullptr,
                             double *threshold = nullptr);

/// Per (b, n) mean of `values` over the output steps, counting only rows with
/// a non-zero `weight`. Returns [B*N, cols] and fills `node_weight` with 1
/// for nodes that had at least one counted row.
ad::Matrix node_time_mean(const ad::Matrix &values, const ad::Matrix &weight,
                          const Layout &layout, ad::Matrix *node_weight = nullptr);
/// Unweighted differentiable mean over output steps per (b, n).
ad::Var node_time_mean(const ad::Var &values, const Layout &layout);

/// mean over weighted rows of -(1/E) * sum_e labels_e * log(max(p_e, floor)).
double routing_ce(const ad::Matrix &p, const ad::Matrix &labels,
                  const ad::Matrix &weight);
ad::Var routing_ce(const ad::Var &p, const ad::Matrix &labels,
                   const ad::Matrix &weight);

struct LossWeights {
  double regression = 1.0;
  double worst = 1.0;
  double best = 1.0;
  bool operator==(const LossWeights &) const = default;
};

struct LossResult {
  ad::Var total;
  double regression = 0.0;
  double worst = 0.0;
  double best = 0.0;
  bool all_masked = false;
  RoutingLabels labels;
};

/// Regression term over every expert that ran (or the ensemble output) plus the
/// two routing terms, whose labels come from detached composite errors.
LossResult total_loss(const ForecastBundle &bundle, const Batch &batch, double q,
                      const LossWeights &w);

} // namespace testam
