// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/data_model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace testam {

enum class NodeClass : std::uint8_t { Connected = 0, Isolated = 1 };

struct ScenarioTags {
  std::vector<NodeClass> node_class;    ///< [N]
  std::vector<std::uint8_t> event_node; ///< [N], 1 if events may occur there
  std::vector<std::uint8_t> event_mask; ///< [T_total, N]

  bool in_event(std::size_t t, std::size_t n) const {
    return event_mask[t * node_class.size() + n] != 0;
  }
  bool operator==(const ScenarioTags &) const = default;
};

/// Symmetric 0/1 adjacency of the generated road network.
struct RoadNetwork {
  int num_nodes = 0;
  std::vector<float> adjacency; ///< [N, N]
  std::vector<double> x, y;     ///< node positions in the unit square

  int degree(int n) const;
};

struct SyntheticConfig {
  int n_nodes = 8;
  int steps_per_day = 96;
  int n_days = 7;
  int n_isolated = 2;
  int n_event_nodes = 2;
  double event_rate = 0.5; ///< expected events per event node per day
  std::uint64_t seed = 7;
  double noise_std = 1.0;
  double v_max = 70.0;
  double radius = 0.45;
  double self_weight = 0.6; ///< weight of a node's own pattern in diffusion
  std::int64_t start_epoch = 1704067200; ///< 2024-01-01T00:00:00Z

  void validate() const;
};

struct SyntheticData {
  GraphSignalSeries series;
  RoadNetwork network;
  ScenarioTags tags;
};

GraphSignalSeries load_csv(const std::filesystem::path &path);

inline constexpr char kBundleMagic[4] = {'T', 'S', 'T', 'M'};
inline constexpr std::uint16_t kBundleVersion = 1;

void save_bundle(const GraphSignalSeries &series,
                 const std::optional<ScenarioTags> &tags,
                 const std::filesystem::path &path);

struct Bundle {
  GraphSignalSeries series;
  std::optional<ScenarioTags> tags;
};

Bundle load_bundle(const std::filesystem::path &path);

/// Loads either a bundle (by magic number) or a CSV file.
Bundle load_dataset(const std::filesystem::path &path);

SyntheticData generate_synthetic(const SyntheticConfig &cfg);

} // namespace testam
