// SPDX-License-Identifier: Apache-2.0
#include "capi_support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <string>

namespace {

using capi_test::TempDir;

struct CliRun {
  int code;
  std::string output;
};

CliRun cli(const std::string &args, const TempDir &dir) {
  const std::string log = dir / "cli.log";
  const std::string cmd = std::string("\"") + TESTAM_CLI_PATH + "\" " + args + " > \"" + log +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, capi_test::slurp(log)};
}

std::string sets(const char *const *begin, const char *const *end) {
  std::string s;
  for (auto it = begin; it != end; ++it)
    s += std::string(" --set ") + *it;
  return s;
}

std::string tiny_synthetic() {
  return sets(std::begin(capi_test::kTinySynthetic), std::end(capi_test::kTinySynthetic));
}

std::string tiny_train() {
  return sets(std::begin(capi_test::kTinyTrain), std::end(capi_test::kTinyTrain));
}

TEST(Cli, UsageErrorsExitWithTwo) {
  TempDir dir("cli");
  EXPECT_EQ(cli("", dir).code, 2);
  EXPECT_EQ(cli("train --bogus", dir).code, 2);
  EXPECT_EQ(cli("eval --data x --out y", dir).code, 2);
  EXPECT_EQ(cli("--version", dir).code, 0);
}

TEST(Cli, MissingConfigNamesThePath) {
  TempDir dir("cli");
  const CliRun r = cli("generate --config " + (dir / "nope.json") + " --out " + (dir / "d"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("nope.json"), std::string::npos) << r.output;
}

TEST(Cli, BadOverrideNamesTheKey) {
  TempDir dir("cli");
  const CliRun r = cli("generate --set n_nodez=3 --out " + (dir / "d"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("n_nodez"), std::string::npos) << r.output;
}

TEST(Cli, BadThreadEnvironmentIsAUsageError) {
  TempDir dir("cli");
  const CliRun r = cli("generate --out " + (dir / "d"), dir);
  EXPECT_EQ(r.code, 0) << r.output;
  const std::string cmd = std::string("TESTAM_THREADS=zero \"") + TESTAM_CLI_PATH +
                          "\" generate --out \"" + (dir / "e") + "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(Cli, GenerateTrainEvalRoutes) {
  TempDir dir("cli");
  ASSERT_EQ(cli("generate" + tiny_synthetic() + " --out " + (dir / "data"), dir).code, 0);
  const std::string bundle = dir / "data/dataset.tstm";
  const CliRun tr = cli("train" + tiny_train() + " --seed 4 --data " + bundle + " --out " +
                         (dir / "run"),
                     dir);
  ASSERT_EQ(tr.code, 0) << tr.output;
  EXPECT_NE(tr.output.find("epoch   1"), std::string::npos) << tr.output;

  const std::string ckpt = dir / "run/best.ckpt";
  const CliRun e1 = cli("eval --checkpoint " + ckpt + " --data " + bundle + " --out " +
                         (dir / "e1"),
                     dir);
  ASSERT_EQ(e1.code, 0) << e1.output;
  EXPECT_NE(e1.output.find("test average"), std::string::npos);
  ASSERT_EQ(cli("eval --checkpoint " + ckpt + " --data " + bundle + " --out " + (dir / "e2"),
                dir)
                .code,
            0);
  EXPECT_EQ(capi_test::slurp(dir / "e1/metrics.csv"), capi_test::slurp(dir / "e2/metrics.csv"));
  EXPECT_EQ(capi_test::slurp(dir / "e1/metrics_per_step.csv"),
            capi_test::slurp(dir / "e2/metrics_per_step.csv"));

  const CliRun rt = cli("routes --checkpoint " + ckpt + " --data " + bundle + " --out " +
                         (dir / "routes"),
                     dir);
  ASSERT_EQ(rt.code, 0) << rt.output;
  EXPECT_NE(capi_test::slurp(dir / "routes/routing.json").find("per_node"), std::string::npos);

  const CliRun resume = cli("train" + tiny_train() + " --set epochs=3 --seed 4 --data " + bundle +
                             " --out " + (dir / "run2") + " --resume " + (dir / "run/last.ckpt"),
                         dir);
  ASSERT_EQ(resume.code, 0) << resume.output;
  EXPECT_NE(resume.output.find("epoch   2"), std::string::npos) << resume.output;
  EXPECT_EQ(resume.output.find("epoch   0"), std::string::npos) << resume.output;
}

TEST(Cli, NodeMismatchExitsWithTwo) {
  TempDir dir("cli");
  ASSERT_EQ(cli("generate" + tiny_synthetic() + " --out " + (dir / "four"), dir).code, 0);
  ASSERT_EQ(
      cli("generate" + tiny_synthetic() + " --set n_nodes=5 --out " + (dir / "five"), dir).code,
      0);
  ASSERT_EQ(cli("train" + tiny_train() + " --set epochs=1 --data " + (dir / "four/dataset.tstm") +
                    " --out " + (dir / "run"),
                dir)
                .code,
            0);
  const CliRun r = cli("eval --checkpoint " + (dir / "run/best.ckpt") + " --data " +
                        (dir / "five/dataset.tstm") + " --out " + (dir / "e"),
                    dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("node count mismatch"), std::string::npos) << r.output;
}

TEST(Cli, DivergenceExitsWithThree) {
  TempDir dir("cli");
  ASSERT_EQ(cli("generate" + tiny_synthetic() + " --out " + (dir / "data"), dir).code, 0);
  const CliRun r = cli("train" + tiny_train() +
                        " --set schedule.lr_min=1e300 --set schedule.lr_max=1e300 --data " +
                        (dir / "data/dataset.tstm") + " --out " + (dir / "run"),
                    dir);
  EXPECT_EQ(r.code, 3) << r.output;
}

} // namespace
