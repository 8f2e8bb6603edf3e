// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "core/data_io.hpp"
#include "core/training.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace testam {

/// Masked point metrics. `count == 0` means every target was masked and the
/// metrics are absent.
struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0; ///< percent
  std::size_t count = 0;
  bool present() const { return count > 0; }
};

Metrics metrics(const ad::Matrix &y, const ad::Matrix &y_hat);

/// Output-step indices (1-based) for forecast lead times in minutes. Lead
/// times that are not a whole number of steps or exceed `out_steps` are
/// dropped.
std::vector<int> horizon_steps(int interval_minutes, const std::vector<int> &minutes,
                               int out_steps);

/// 15/30/60 minutes, or 10/30/60 for 10-minute data.
std::vector<int> default_horizon_minutes(int interval_minutes);

struct HorizonRow {
  std::string label; ///< e.g. "15min" or "average"
  int minutes = 0;
  int step = 0;      ///< 1-based; 0 for the all-step average
  Metrics m;
};

struct HorizonReport {
  std::vector<Metrics> per_step; ///< one per output step
  std::vector<HorizonRow> rows;  ///< requested horizons then the average
  Metrics average;
};

/// Metrics per output step of a [S, T, N] prediction set.
HorizonReport horizon_report(const ad::Matrix &y, const ad::Matrix &y_hat,
                             const Layout &layout, int interval_minutes,
                             const std::vector<int> &horizon_minutes);
HorizonReport horizon_report(const Predictions &pred, int interval_minutes,
                             const std::vector<int> &horizon_minutes);

struct ShareRow {
  std::string group;
  std::size_t count = 0;
  std::array<double, kNumExperts> share{};
};

struct RoutingReport {
  bool gating = true;
  std::array<std::string, kNumExperts> experts;
  ShareRow overall;
  std::vector<ShareRow> per_node;
  std::vector<ShareRow> per_hour; ///< 24 rows, hour of the target step
  std::vector<ShareRow> per_class; ///< connected / isolated, when tagged
  std::vector<ShareRow> per_event; ///< event / non_event, when tagged
};

/// Aggregates top-1 selections. `samples` must be the set `pred` was made
/// from; `tags` index the series the samples were cut from.
RoutingReport routing_report(const Predictions &pred,
                             const std::vector<WindowedSample> &samples,
                             const TestamModel &model, int steps_per_day,
                             const std::optional<ScenarioTags> &tags);

/// Columns: horizon,minutes,step,count,mae,rmse,mape_pct. Absent metrics are
/// written as NA.
void write_horizon_csv(const HorizonReport &report, const std::filesystem::path &path);
/// Columns: step,count,mae,rmse,mape_pct.
void write_step_csv(const HorizonReport &report, const std::filesystem::path &path);
Json to_json(const HorizonReport &report);
Json to_json(const RoutingReport &report);

/// Static SVG: observed speed, composite prediction and every expert's
/// prediction at the first output step for one node, with the selected expert
/// drawn as a colour strip.
void write_speed_plot(const Predictions &pred, const std::vector<WindowedSample> &samples,
                      int node, const std::array<std::string, kNumExperts> &names,
                      const std::filesystem::path &path);

/// Static SVG bar chart of expert shares per group.
void write_share_plot(const std::vector<ShareRow> &rows,
                      const std::array<std::string, kNumExperts> &names,
                      const std::string &title, const std::filesystem::path &path);

} // namespace testam
