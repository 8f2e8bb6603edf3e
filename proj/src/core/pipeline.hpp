// SPDX-License-Identifier: Apache-2.0
//
// End-to-end commands: generate, train, eval and routes. Each writes its
// outputs plus a provenance.json into an output directory.
#pragma once

#include "core/config.hpp"
#include "core/data_io.hpp"
#include "core/evaluation.hpp"
#include "core/training.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace testam {

inline constexpr const char *kToolVersion = "0.1.0";

struct GenerateOutputs {
  std::filesystem::path bundle;
  std::filesystem::path adjacency;
  std::filesystem::path provenance;
};

GenerateOutputs run_generate(const SyntheticConfig &cfg,
                             const std::filesystem::path &out_dir);

/// Fills the data-dependent model fields (nodes, steps per day) and checks any
/// explicit values against the data.
TrainConfig bind_to_data(TrainConfig cfg, const GraphSignalSeries &series);

struct TrainOutputs {
  TrainingHistory history;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::size_t parameter_count = 0;
  std::uint64_t arch_hash = 0;
};

using EpochLogger = std::function<void(const EpochRecord &)>;

TrainOutputs run_train(const TrainConfig &cfg, const std::filesystem::path &data,
                       const std::filesystem::path &out_dir,
                       const std::optional<std::filesystem::path> &resume = std::nullopt,
                       const EpochLogger &log = {});

struct EvalOutputs {
  HorizonReport report;
  std::filesystem::path metrics_csv;
};

EvalOutputs run_eval(const std::filesystem::path &checkpoint,
                     const std::filesystem::path &data,
                     const std::filesystem::path &out_dir);

struct RoutesOutputs {
  RoutingReport report;
  std::filesystem::path report_json;
};

RoutesOutputs run_routes(const std::filesystem::path &checkpoint,
                         const std::filesystem::path &data,
                         const std::filesystem::path &out_dir);

void write_history_csv(const TrainingHistory &history, const std::filesystem::path &path);

} // namespace testam
