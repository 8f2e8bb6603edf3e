// SPDX-License-Identifier: Apache-2.0
#include "capi_support.hpp"

#include <cstring>
#include <string>
#include <vector>

namespace {

using capi_test::TempDir;

testam_config *tiny(testam_config_kind kind) {
  testam_config *cfg = nullptr;
  EXPECT_EQ(testam_config_new(kind, nullptr, &cfg), TESTAM_OK);
  if (kind == TESTAM_CONFIG_SYNTHETIC)
    for (const char *s : capi_test::kTinySynthetic)
      EXPECT_EQ(testam_config_set(cfg, s), TESTAM_OK) << s;
  else
    for (const char *s : capi_test::kTinyTrain)
      EXPECT_EQ(testam_config_set(cfg, s), TESTAM_OK) << s;
  return cfg;
}

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STRNE(testam_version(), "");
  EXPECT_STREQ(testam_status_name(TESTAM_OK), "ok");
  EXPECT_STRNE(testam_status_name(TESTAM_ERR_NUMERIC), testam_status_name(TESTAM_ERR_IO));
}

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(testam_config_new(TESTAM_CONFIG_TRAIN, nullptr, nullptr),
            TESTAM_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(testam_last_error()), "");
  EXPECT_EQ(testam_config_set(nullptr, "epochs=1"), TESTAM_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(testam_eval(nullptr, "x", "y", nullptr), TESTAM_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(testam_set_max_threads(0), TESTAM_ERR_INVALID_ARGUMENT);
  testam_config_free(nullptr);
  testam_model_free(nullptr);
}

TEST(CApi, ConfigErrorsAndJson) {
  testam_config *cfg = nullptr;
  ASSERT_EQ(testam_config_new(TESTAM_CONFIG_TRAIN, nullptr, &cfg), TESTAM_OK);
  EXPECT_EQ(testam_config_set(cfg, "model.bogus=1"), TESTAM_ERR_CONFIG);
  EXPECT_NE(std::string(testam_last_error()).find("model.bogus"), std::string::npos);
  EXPECT_EQ(testam_config_set(cfg, "epochs=7"), TESTAM_OK);
  ASSERT_EQ(testam_config_set_seed(cfg, 99), TESTAM_OK);
  size_t needed = 0;
  ASSERT_EQ(testam_config_to_json(cfg, nullptr, 0, &needed), TESTAM_OK);
  ASSERT_GT(needed, 1u);
  std::vector<char> buf(needed);
  ASSERT_EQ(testam_config_to_json(cfg, buf.data(), buf.size(), &needed), TESTAM_OK);
  EXPECT_EQ(std::strlen(buf.data()) + 1, needed);
  const std::string json(buf.data());
  EXPECT_NE(json.find("\"epochs\": 7"), std::string::npos) << json;
  EXPECT_NE(json.find("\"seed\": 99"), std::string::npos) << json;
  char small[4];
  EXPECT_NE(testam_config_to_json(cfg, small, sizeof small, &needed), TESTAM_OK);
  testam_config_free(cfg);

  testam_config *missing = nullptr;
  EXPECT_EQ(testam_config_new(TESTAM_CONFIG_TRAIN, "/nonexistent/cfg.json", &missing),
            TESTAM_ERR_CONFIG);
  EXPECT_EQ(missing, nullptr);
  EXPECT_NE(std::string(testam_last_error()).find("/nonexistent/cfg.json"),
            std::string::npos);
}

TEST(CApi, DefaultParameterCountIsUnderBudget) {
  testam_config *cfg = nullptr;
  ASSERT_EQ(testam_config_new(TESTAM_CONFIG_TRAIN, nullptr, &cfg), TESTAM_OK);
  uint64_t count = 0;
  ASSERT_EQ(testam_parameter_count(cfg, 207, &count), TESTAM_OK);
  EXPECT_GT(count, 100000u);
  EXPECT_LT(count, 300000u);
  testam_config_free(cfg);
}

void count_epochs(const testam_epoch_info *info, void *user) {
  auto *seen = static_cast<std::vector<int> *>(user);
  seen->push_back(info->epoch);
  EXPECT_NEAR(info->selection_share[0] + info->selection_share[1] + info->selection_share[2],
              1.0, 1e-9);
}

TEST(CApi, EndToEnd) {
  TempDir dir("capi");
  testam_config *syn = tiny(TESTAM_CONFIG_SYNTHETIC);
  ASSERT_EQ(testam_generate(syn, (dir / "data").c_str()), TESTAM_OK) << testam_last_error();
  testam_config_free(syn);
  const std::string bundle = dir / "data/dataset.tstm";

  testam_config *tr = tiny(TESTAM_CONFIG_TRAIN);
  std::vector<int> seen;
  ASSERT_EQ(testam_train(tr, bundle.c_str(), (dir / "run").c_str(), nullptr, count_epochs,
                         &seen),
            TESTAM_OK)
      << testam_last_error();
  EXPECT_EQ(seen, (std::vector<int>{0, 1}));
  const std::string ckpt = dir / "run/best.ckpt";

  testam_model *model = nullptr;
  ASSERT_EQ(testam_model_load(ckpt.c_str(), &model), TESTAM_OK);
  int nodes = 0;
  uint64_t params = 0;
  EXPECT_EQ(testam_model_num_nodes(model, &nodes), TESTAM_OK);
  EXPECT_EQ(nodes, 4);
  EXPECT_EQ(testam_model_parameter_count(model, &params), TESTAM_OK);
  uint64_t fresh = 0;
  EXPECT_EQ(testam_parameter_count(tr, 4, &fresh), TESTAM_OK);
  EXPECT_EQ(params, fresh);
  testam_model_free(model);
  testam_config_free(tr);

  testam_metrics avg{};
  ASSERT_EQ(testam_eval(ckpt.c_str(), bundle.c_str(), (dir / "eval").c_str(), &avg),
            TESTAM_OK)
      << testam_last_error();
  EXPECT_GT(avg.count, 0u);
  EXPECT_GE(avg.rmse, avg.mae);
  EXPECT_EQ(testam_routes(ckpt.c_str(), bundle.c_str(), (dir / "routes").c_str()), TESTAM_OK)
      << testam_last_error();

  EXPECT_EQ(testam_eval(ckpt.c_str(), (dir / "missing.tstm").c_str(),
                        (dir / "x").c_str(), nullptr),
            TESTAM_ERR_IO);
  EXPECT_EQ(testam_model_load(bundle.c_str(), &model), TESTAM_ERR_FORMAT);
}

} // namespace
