// SPDX-License-Identifier: Apache-2.0
//
// JSON documents for the training and generator configurations. Documents are
// strict: every key must exist in the defaults and keep its JSON type.
#pragma once

#include "core/data_io.hpp"
#include "core/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace testam {

using Json = nlohmann::json;

Json to_json(const ModelConfig &cfg);
Json to_json(const TrainConfig &cfg);
Json to_json(const SyntheticConfig &cfg);

TrainConfig train_config_from_json(const Json &doc);
SyntheticConfig synthetic_config_from_json(const Json &doc);

/// Overlays `user` onto `defaults`. Unknown keys and type changes are Config
/// errors naming the dotted key.
Json merge_strict(const Json &defaults, const Json &user);

/// Applies one `dotted.key=value` assignment. The value is parsed as JSON when
/// possible, otherwise taken as a string, and must match the existing type.
void apply_override(Json &doc, const std::string &assignment);

Json read_json_file(const std::filesystem::path &path);

TrainConfig load_train_config(const std::optional<std::filesystem::path> &path,
                              const std::vector<std::string> &overrides);
SyntheticConfig load_synthetic_config(const std::optional<std::filesystem::path> &path,
                                      const std::vector<std::string> &overrides);

/// FNV-1a over the canonical JSON of the model configuration.
std::uint64_t architecture_hash(const ModelConfig &cfg);

/// Dotted path of the first leaf that differs, or empty when equal.
std::string first_difference(const Json &a, const Json &b);

} // namespace testam
