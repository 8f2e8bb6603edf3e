// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace testam {

/// Timestamped speed matrix over N roads. Value 0 encodes a missing reading.
struct GraphSignalSeries {
  std::vector<float> values; ///< row-major [T_total, N]
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> node_ids;
  int interval_minutes = 5;

  std::size_t num_steps() const { return timestamps.size(); }
  std::size_t num_nodes() const { return node_ids.size(); }
  float at(std::size_t t, std::size_t n) const {
    return values[t * num_nodes() + n];
  }
  int steps_per_day() const { return 1440 / interval_minutes; }
  /// Time-of-day slot of row `t`, in [0, steps_per_day).
  int time_of_day(std::size_t t) const;

  /// Throws if the structural invariants do not hold.
  void validate() const;

  bool operator==(const GraphSignalSeries &) const = default;
};

/// z-score scaling: (x - mean) / std.
struct Scaler {
  double mean = 0.0;
  double std = 1.0;

  double apply(double x) const { return (x - mean) / std; }
  double invert(double z) const { return z * std + mean; }
};

inline constexpr double kScalerStdFloor = 1e-8;

/// Fits mean and population standard deviation over rows [0, row_end) of the
/// series. With `mask_zero`, zero entries are skipped. `row_end == 0` means
/// every row.
Scaler fit_scaler(const GraphSignalSeries &series, bool mask_zero,
                  std::size_t row_end = 0);

inline constexpr int kInputChannels = 2;

struct WindowedSample {
  std::size_t start = 0; ///< first series row covered by the input window
  int in_steps = 0;
  int out_steps = 0;
  int num_nodes = 0;
  std::vector<float> x;   ///< [in_steps, N, kInputChannels], channel 0 scaled
  std::vector<float> y;   ///< [out_steps, N], original units
  std::vector<int> tau_in;
  std::vector<int> tau_out;

  float x_at(int t, int n, int c) const {
    return x[(static_cast<std::size_t>(t) * num_nodes + n) * kInputChannels + c];
  }
  float y_at(int t, int n) const {
    return y[static_cast<std::size_t>(t) * num_nodes + n];
  }
  /// Last series row covered by the target window.
  std::size_t end() const { return start + in_steps + out_steps - 1; }
};

std::vector<WindowedSample> make_windows(const GraphSignalSeries &series,
                                         int in_steps, int out_steps,
                                         const Scaler &scaler);

struct DatasetSplit {
  std::vector<WindowedSample> train, val, test;
};

using SplitRatios = std::array<double, 3>;
inline constexpr SplitRatios kDefaultSplit = {0.7, 0.1, 0.2};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Floor-based counts for train and val; the remainder goes to test.
SplitCounts split_counts(std::size_t n, const SplitRatios &ratios);

/// Contiguous chronological blocks. `purge` samples are dropped from the tail
/// of the train and val blocks so that no two blocks share a series row when
/// purge = in_steps + out_steps - 1.
DatasetSplit chronological_split(std::vector<WindowedSample> samples,
                                 const SplitRatios &ratios = kDefaultSplit,
                                 std::size_t purge = 0);

struct PreparedData {
  Scaler scaler;
  DatasetSplit split;
};

/// Fits the scaler on the rows used by training windows, builds windows and
/// splits them with a purge gap so the three blocks are row-disjoint. A
/// `fixed` scaler is used as-is instead of being fitted.
PreparedData prepare_dataset(const GraphSignalSeries &series, int in_steps,
                             int out_steps, const SplitRatios &ratios,
                             bool mask_zero, const Scaler *fixed = nullptr);

} // namespace testam
