// SPDX-License-Identifier: Apache-2.0
#include "core/data_model.hpp"

#include "core/errors.hpp"

#include <cmath>

namespace testam {

int GraphSignalSeries::time_of_day(std::size_t t) const {
  const std::int64_t secs = ((timestamps[t] % 86400) + 86400) % 86400;
  return static_cast<int>(secs / 60 / interval_minutes);
}

void GraphSignalSeries::validate() const {
  require(!node_ids.empty(), "series has no nodes");
  require(interval_minutes > 0 && 1440 % interval_minutes == 0,
          "interval_minutes must divide a day");
  require(values.size() == timestamps.size() * node_ids.size(),
          "value matrix does not match [T_total, N]");
  const std::int64_t step = std::int64_t{interval_minutes} * 60;
  for (std::size_t t = 1; t < timestamps.size(); ++t)
    require(timestamps[t] - timestamps[t - 1] == step,
            "non-uniform interval at row " + std::to_string(t));
  for (float v : values)
    require(std::isfinite(v), "series contains non-finite values");
}

Scaler fit_scaler(const GraphSignalSeries &series, bool mask_zero,
                  std::size_t row_end) {
  const std::size_t n_nodes = series.num_nodes();
  const std::size_t rows =
      row_end == 0 ? series.num_steps() : std::min(row_end, series.num_steps());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows * n_nodes; ++i) {
    const float v = series.values[i];
    if (mask_zero && v == 0.0f)
      continue;
    sum += v;
    ++count;
  }
  require(count > 0, "empty series");
  Scaler s;
  s.mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t i = 0; i < rows * n_nodes; ++i) {
    const float v = series.values[i];
    if (mask_zero && v == 0.0f)
      continue;
    sq += (v - s.mean) * (v - s.mean);
  }
  s.std = std::max(std::sqrt(sq / static_cast<double>(count)), kScalerStdFloor);
  return s;
}

std::vector<WindowedSample> make_windows(const GraphSignalSeries &series,
                                         int in_steps, int out_steps,
                                         const Scaler &scaler) {
  require(in_steps > 0 && out_steps > 0, "window lengths must be positive");
  const std::size_t total = series.num_steps();
  const std::size_t span = static_cast<std::size_t>(in_steps + out_steps);
  require(total >= span, "series too short: " + std::to_string(total) +
                             " steps < " + std::to_string(span));
  const int n_nodes = static_cast<int>(series.num_nodes());
  const double day = series.steps_per_day();
  std::vector<WindowedSample> out;
  out.reserve(total - span + 1);
  for (std::size_t s = 0; s + span <= total; ++s) {
    WindowedSample w;
    w.start = s;
    w.in_steps = in_steps;
    w.out_steps = out_steps;
    w.num_nodes = n_nodes;
    w.x.resize(static_cast<std::size_t>(in_steps) * n_nodes * kInputChannels);
    w.y.resize(static_cast<std::size_t>(out_steps) * n_nodes);
    for (int t = 0; t < in_steps; ++t) {
      const int tod = series.time_of_day(s + t);
      w.tau_in.push_back(tod);
      for (int n = 0; n < n_nodes; ++n) {
        const std::size_t base =
            (static_cast<std::size_t>(t) * n_nodes + n) * kInputChannels;
        w.x[base] = static_cast<float>(scaler.apply(series.at(s + t, n)));
        w.x[base + 1] = static_cast<float>(tod / day);
      }
    }
    for (int t = 0; t < out_steps; ++t) {
      w.tau_out.push_back(series.time_of_day(s + in_steps + t));
      for (int n = 0; n < n_nodes; ++n)
        w.y[static_cast<std::size_t>(t) * n_nodes + n] =
            series.at(s + in_steps + t, n);
    }
    out.push_back(std::move(w));
  }
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitRatios &ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) <= 1e-9, "split ratios must sum to 1");
  for (double r : ratios)
    require(r >= 0.0, "split ratios must be non-negative");
  SplitCounts c;
  // The epsilon keeps e.g. 0.7 * 10 from flooring to 6.
  c.train = static_cast<std::size_t>(std::floor(ratios[0] * n + 1e-9));
  c.val = static_cast<std::size_t>(std::floor(ratios[1] * n + 1e-9));
  c.train = std::min(c.train, n);
  c.val = std::min(c.val, n - c.train);
  c.test = n - c.train - c.val;
  return c;
}

DatasetSplit chronological_split(std::vector<WindowedSample> samples,
                                 const SplitRatios &ratios, std::size_t purge) {
  const SplitCounts c = split_counts(samples.size(), ratios);
  require(c.train > purge && c.val > purge && c.test > 0, "empty split");
  DatasetSplit out;
  auto it = std::make_move_iterator(samples.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(c.train - purge));
  it += static_cast<std::ptrdiff_t>(c.train);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(c.val - purge));
  it += static_cast<std::ptrdiff_t>(c.val);
  out.test.assign(it, std::make_move_iterator(samples.end()));
  return out;
}

PreparedData prepare_dataset(const GraphSignalSeries &series, int in_steps,
                             int out_steps, const SplitRatios &ratios,
                             bool mask_zero, const Scaler *fixed) {
  series.validate();
  const std::size_t span = static_cast<std::size_t>(in_steps + out_steps);
  require(series.num_steps() >= span, "series too short");
  const std::size_t n_windows = series.num_steps() - span + 1;
  const SplitCounts c = split_counts(n_windows, ratios);
  const std::size_t purge = span - 1;
  require(c.train > purge && c.val > purge && c.test > 0, "empty split");
  // Training windows are [0, train - purge); the last one ends at this row.
  const std::size_t train_row_end = (c.train - purge - 1) + span;
  PreparedData out;
  out.scaler = fixed != nullptr ? *fixed : fit_scaler(series, mask_zero, train_row_end);
  out.split = chronological_split(
      make_windows(series, in_steps, out_steps, out.scaler), ratios, purge);
  return out;
}

} // namespace testam
