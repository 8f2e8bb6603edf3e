// SPDX-License-Identifier: Apache-2.0
//
// testam command-line tool. Exit codes: 0 ok, 2 usage or config error,
// 3 numeric failure.
#include "testam/testam.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

int report(testam_status st, const char *what) {
  if (st == TESTAM_OK)
    return kExitOk;
  std::fprintf(stderr, "testam %s: %s: %s\n", what, testam_status_name(st),
               testam_last_error());
  return st == TESTAM_ERR_NUMERIC ? kExitNumeric : kExitUsage;
}

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App *cmd, ConfigArgs &a) {
  cmd->add_option("--config", a.config, "JSON configuration file");
  cmd->add_option("--set", a.overrides, "Override a config value: dotted.key=value")
      ->take_all()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--seed", a.seed, "Random seed (overrides the config)");
}

/// Returns nullptr after printing a diagnostic.
testam_config *build_config(testam_config_kind kind, const ConfigArgs &a, int &code) {
  testam_config *cfg = nullptr;
  testam_status st =
      testam_config_new(kind, a.config.empty() ? nullptr : a.config.c_str(), &cfg);
  if (st == TESTAM_OK)
    for (const std::string &o : a.overrides)
      if ((st = testam_config_set(cfg, o.c_str())) != TESTAM_OK)
        break;
  if (st == TESTAM_OK && a.seed)
    st = testam_config_set_seed(cfg, *a.seed);
  if (st != TESTAM_OK) {
    code = report(st, "config");
    testam_config_free(cfg);
    return nullptr;
  }
  return cfg;
}

void print_epoch(const testam_epoch_info *e, void *) {
  std::printf("epoch %3d  step %7ld  lr %.3e  loss %.4f  (reg %.4f worst %.4f best %.4f)"
              "  train_mae %.4f  val_mae %.4f  share %.2f/%.2f/%.2f  %.1fs\n",
              e->epoch, e->step, e->lr, e->loss, e->regression, e->worst, e->best,
              e->train_mae, e->val_mae, e->selection_share[0], e->selection_share[1],
              e->selection_share[2], e->seconds);
  std::fflush(stdout);
}

int apply_thread_env() {
  const char *env = std::getenv("TESTAM_THREADS");
  if (env == nullptr || *env == '\0')
    return kExitOk;
  char *end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) {
    std::fprintf(stderr, "testam: TESTAM_THREADS must be a positive integer, got '%s'\n",
                 env);
    return kExitUsage;
  }
  return report(testam_set_max_threads(static_cast<int>(n)), "threads");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Mixture-of-experts traffic forecaster: generate, train, eval, routes"};
  app.set_version_flag("--version", testam_version());
  app.require_subcommand(1);

  ConfigArgs gen_args;
  std::string gen_out;
  CLI::App *gen = app.add_subcommand("generate", "Write a synthetic dataset bundle");
  add_config_flags(gen, gen_args);
  gen->add_option("--out", gen_out, "Output directory")->required();

  ConfigArgs train_args;
  std::string train_data, train_out, resume;
  CLI::App *tr = app.add_subcommand("train", "Train a model and write checkpoints");
  add_config_flags(tr, train_args);
  tr->add_option("--data", train_data, "Dataset bundle or CSV")->required();
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_option("--resume", resume, "Checkpoint to resume from (e.g. out/last.ckpt)");

  std::string ev_ckpt, ev_data, ev_out;
  CLI::App *ev = app.add_subcommand("eval", "Per-horizon test metrics");
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset bundle or CSV")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();

  std::string rt_ckpt, rt_data, rt_out;
  CLI::App *rt = app.add_subcommand("routes", "Routing report and plots");
  rt->add_option("--checkpoint", rt_ckpt, "Model checkpoint")->required();
  rt->add_option("--data", rt_data, "Dataset bundle or CSV")->required();
  rt->add_option("--out", rt_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  if (const int code = apply_thread_env(); code != kExitOk)
    return code;

  int code = kExitOk;
  if (gen->parsed()) {
    testam_config *cfg = build_config(TESTAM_CONFIG_SYNTHETIC, gen_args, code);
    if (cfg == nullptr)
      return code;
    code = report(testam_generate(cfg, gen_out.c_str()), "generate");
    testam_config_free(cfg);
    if (code == kExitOk)
      std::printf("wrote %s/dataset.tstm\n", gen_out.c_str());
  } else if (tr->parsed()) {
    testam_config *cfg = build_config(TESTAM_CONFIG_TRAIN, train_args, code);
    if (cfg == nullptr)
      return code;
    code = report(testam_train(cfg, train_data.c_str(), train_out.c_str(),
                               resume.empty() ? nullptr : resume.c_str(), print_epoch,
                               nullptr),
                  "train");
    testam_config_free(cfg);
    if (code == kExitOk)
      std::printf("wrote %s/best.ckpt\n", train_out.c_str());
  } else if (ev->parsed()) {
    testam_metrics avg{};
    code = report(testam_eval(ev_ckpt.c_str(), ev_data.c_str(), ev_out.c_str(), &avg),
                  "eval");
    if (code == kExitOk) {
      if (avg.count > 0)
        std::printf("test average: MAE %.4f  RMSE %.4f  MAPE %.2f%%  (%llu points)\n",
                    avg.mae, avg.rmse, avg.mape_pct,
                    static_cast<unsigned long long>(avg.count));
      else
        std::printf("test average: no observed targets\n");
    }
  } else if (rt->parsed()) {
    code = report(testam_routes(rt_ckpt.c_str(), rt_data.c_str(), rt_out.c_str()),
                  "routes");
    if (code == kExitOk)
      std::printf("wrote %s/routing.json\n", rt_out.c_str());
  }
  return code;
}
