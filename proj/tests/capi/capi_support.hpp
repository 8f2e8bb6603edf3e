// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "testam/testam.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace capi_test {

class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("testam_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  std::string operator/(const std::string &name) const { return (path_ / name).string(); }
  const std::filesystem::path &path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small synthetic data and a model that trains in a few seconds.
inline const char *const kTinySynthetic[] = {
    "n_nodes=4", "n_isolated=1", "n_event_nodes=1", "steps_per_day=24", "n_days=5"};

inline const char *const kTinyTrain[] = {
    "model.in_steps=4",   "model.out_steps=3",  "model.hidden=8",
    "model.memory_dim=8", "model.memory_size=4", "model.layers=1",
    "model.heads=2",      "model.ffn_hidden=8", "model.tim_dim=4",
    "epochs=2",           "batch_size=8",       "schedule.warmup_steps=5"};

} // namespace capi_test
