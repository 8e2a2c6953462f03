#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SETPOOL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  RunResult res;
  char buf[4096];
  while (fgets(buf, sizeof(buf), pipe)) res.output += buf;
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  EXPECT_TRUE(is.good()) << path;
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("setpool_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kTinyData =
    " --ids 6 --sets 2 --size-min 2 --size-max 5 --dim 8 --trunk-hidden 8 --seed 5 ";

}  // namespace

TEST_F(CliTest, GenIsDeterministicAndReloadable) {
  const std::string a = path("a.csv"), b = path("b.csv");
  EXPECT_EQ(run_cli("gen --seed 7 --ids 5 --dim 6 --out " + a).exit_code, 0);
  EXPECT_EQ(run_cli("gen --seed 7 --ids 5 --dim 6 --out " + b).exit_code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), "");
  // a different seed changes the file
  EXPECT_EQ(run_cli("gen --seed 8 --ids 5 --dim 6 --out " + b).exit_code, 0);
  EXPECT_NE(slurp(a), slurp(b));
}

TEST_F(CliTest, GenInvalidDimExitsTwoNamingKey) {
  const RunResult res = run_cli("gen --dim 0 --out " + path("x.csv"));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("dim"), std::string::npos);
}

TEST_F(CliTest, TrainIsDeterministic) {
  const std::string out1 = path("run1"), out2 = path("run2");
  const std::string base = std::string("train --mode on --episodes 25") + kTinyData;
  EXPECT_EQ(run_cli(base + "--out-dir " + out1).exit_code, 0);
  EXPECT_EQ(run_cli(base + "--out-dir " + out2).exit_code, 0);
  EXPECT_EQ(slurp(out1 + "/metrics.csv"), slurp(out2 + "/metrics.csv"));
  for (const char* f : {"trunk.spnet", "policy_head.spnet", "value_head.spnet",
                        "avg_trunk.spnet", "avg_policy_head.spnet", "reward_head.spnet"})
    EXPECT_EQ(slurp(out1 + "/checkpoint/" + f), slurp(out2 + "/checkpoint/" + f)) << f;
}

TEST_F(CliTest, TrainOnPolicyWritesOneRowPerEpisode) {
  const std::string out = path("rows");
  EXPECT_EQ(run_cli(std::string("train --mode on --episodes 12") + kTinyData + "--out-dir " + out)
                .exit_code,
            0);
  std::ifstream is(out + "/metrics.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 12);
}

TEST_F(CliTest, OffPolicyFirstUpdateAfterWarmup) {
  const std::string out = path("off");
  EXPECT_EQ(run_cli(std::string("train --mode off --episodes 20 --warmup 8 --minibatch 4") +
                    kTinyData + "--out-dir " + out)
                .exit_code,
            0);
  std::ifstream is(out + "/metrics.csv");
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "iter,episodes_seen,mean_reward,xent_loss,mean_KL,clip_fraction");
  EXPECT_EQ(first.substr(0, 4), "1,9,");  // first update right after the pool exceeds warm-up
}

TEST_F(CliTest, EvalUntrainedEqualsAvepoolBaseline) {
  const std::string ckpt_run = path("untrained");
  EXPECT_EQ(
      run_cli(std::string("train --mode on --episodes 0") + kTinyData + "--out-dir " + ckpt_run)
          .exit_code,
      0);
  const std::string eval_dac = path("eval_dac"), eval_avg = path("eval_avg");
  EXPECT_EQ(run_cli(std::string("eval") + kTinyData + "--checkpoint " + ckpt_run +
                    "/checkpoint --out-dir " + eval_dac)
                .exit_code,
            0);
  EXPECT_EQ(run_cli(std::string("eval") + kTinyData + "--baseline avepool --out-dir " + eval_avg)
                .exit_code,
            0);
  for (const char* f : {"roc.csv", "cmc.csv", "openset.csv"})
    EXPECT_EQ(slurp(eval_dac + "/" + f), slurp(eval_avg + "/" + f)) << f;
}

TEST_F(CliTest, EvalChecksDimensionAgreement) {
  const std::string run = path("dim8");
  EXPECT_EQ(
      run_cli(std::string("train --mode on --episodes 1") + kTinyData + "--out-dir " + run)
          .exit_code,
      0);
  const RunResult res = run_cli(
      "eval --ids 6 --sets 2 --size-min 2 --size-max 5 --dim 12 --seed 5 --checkpoint " + run +
      "/checkpoint --out-dir " + path("evalx"));
  EXPECT_EQ(res.exit_code, 4);
}

TEST_F(CliTest, WeightsTableAndUnknownSetId) {
  const std::string run = path("w");
  EXPECT_EQ(
      run_cli(std::string("train --mode on --episodes 5") + kTinyData + "--out-dir " + run)
          .exit_code,
      0);
  const RunResult ok = run_cli(std::string("weights") + kTinyData + "--checkpoint " + run +
                               "/checkpoint --set-id id0_s0");
  EXPECT_EQ(ok.exit_code, 0);
  EXPECT_NE(ok.output.find("member,yaw,quality,weight"), std::string::npos);
  const RunResult missing = run_cli(std::string("weights") + kTinyData + "--checkpoint " + run +
                                     "/checkpoint --set-id nope");
  EXPECT_EQ(missing.exit_code, 2);
  EXPECT_NE(missing.output.find("nope"), std::string::npos);
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  const std::string cfg = path("run.cfg");
  std::ofstream(cfg) << "dim=6\nids=4\nseed=9\nepisodes=3\nmode=on\n"
                     << "set_min=2\nset_max=3\ntrunk_hidden=8\n";
  const std::string out = path("cfg_out");
  EXPECT_EQ(run_cli("train --config " + cfg + " --episodes 4 --out-dir " + out).exit_code, 0);
  const std::string manifest = slurp(out + "/checkpoint/manifest.txt");
  EXPECT_NE(manifest.find("episodes=4"), std::string::npos);  // flag wins
  EXPECT_NE(manifest.find("dim=6"), std::string::npos);       // file value kept
  // unknown key in the config file is a config error naming the key
  std::ofstream(cfg) << "dimension=6\n";
  const RunResult bad = run_cli("train --config " + cfg + " --out-dir " + out);
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.output.find("dimension"), std::string::npos);
}

TEST_F(CliTest, EnvSeedFallback) {
  const std::string a = path("env_a.csv"), b = path("env_b.csv"), c = path("env_c.csv");
  const std::string base = std::string(SETPOOL_CLI_PATH) + " gen --ids 4 --dim 6 --out ";
  EXPECT_EQ(std::system(("SETPOOL_SEED=123 " + base + a + " >/dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(std::system(("SETPOOL_SEED=123 " + base + b + " >/dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(std::system(("SETPOOL_SEED=77 " + base + c + " >/dev/null 2>&1").c_str()), 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
}

TEST_F(CliTest, SelfcheckPassesAndCorruptHookFails) {
  EXPECT_EQ(run_cli("selfcheck").exit_code, 0);
  const RunResult corrupt = run_cli("selfcheck --corrupt-backward");
  EXPECT_NE(corrupt.exit_code, 0);
  EXPECT_NE(corrupt.output.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, PgrEvalOnAllFrontalMatchesCollapse) {
  // all-frontal data: the routed distance is plain + frontal mix, and with
  // uniform weights F1 == F0, so pgr metrics equal plain metrics
  const std::string args =
      " --ids 5 --sets 2 --size-min 2 --size-max 4 --dim 6 --profiles 0 --seed 3 ";
  const std::string plain_out = path("plain"), pgr_out = path("pgr");
  EXPECT_EQ(run_cli("eval" + args + "--baseline avepool --distance plain --out-dir " + plain_out)
                .exit_code,
            0);
  EXPECT_EQ(run_cli("eval" + args + "--baseline avepool --distance pgr --out-dir " + pgr_out)
                .exit_code,
            0);
  EXPECT_EQ(slurp(plain_out + "/roc.csv"), slurp(pgr_out + "/roc.csv"));
}
