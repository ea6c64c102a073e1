#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("trans2d_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "cfg.json") << R"({
      "data": {"n_users": 120, "n_items": 1000},
      "model": {"h": 2, "d": 4, "N": 10},
      "train": {"epochs": 2},
      "paths": {"dataset": ")" << (dir_ / "data.jsonl").string() << R"(",
                "checkpoints": ")" << (dir_ / "ck").string() << R"(",
                "reports": ")" << (dir_ / "reports").string() << R"("}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args, const std::string& env = "") {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = env + " " + TRANS2D_CLI_PATH + " " + args + " --config " + (dir_ / "cfg.json").string() +
                            " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_F(Cli, GenDataIsDeterministicAndSummarized) {
  auto r = run("gen-data");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto first = slurp(dir_ / "data.jsonl");
  const auto pos = r.out.find("mean_snapshot_size ");
  ASSERT_NE(pos, std::string::npos);
  const double mean = std::stod(r.out.substr(pos + 19));
  EXPECT_GE(mean, 3.0);
  EXPECT_LE(mean, 15.0);
  for (const char* key : {"users 120", "events ", "clicks ", "train ", "val ", "test "}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  ASSERT_EQ(run("gen-data").code, 0);
  EXPECT_EQ(slurp(dir_ / "data.jsonl"), first);
}

TEST_F(Cli, GenDataMissingDirectory) {
  const auto r = run("gen-data --out " + (dir_ / "nope" / "d.jsonl").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find((dir_ / "nope").string()), std::string::npos);
}

TEST_F(Cli, TrainWritesCheckpointsAndLog) {
  ASSERT_EQ(run("gen-data").code, 0);
  const auto r = run("train");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"epoch_1.json", "epoch_1.bin", "epoch_2.json", "epoch_2.bin", "final.json", "final.bin"}) {
    EXPECT_TRUE(fs::exists(dir_ / "ck" / f)) << f;
  }
  const auto log = slurp(dir_ / "ck" / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,lr,train_loss,val_ndcg5");
  EXPECT_EQ(count_lines(log), 3u);
}

TEST_F(Cli, InvalidConfigKeyIsAUsageError) {
  const auto r = run("train --set train.momentum=0.9");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.momentum"), std::string::npos);
}

TEST_F(Cli, EvalBaselinesAndCheckpoints) {
  ASSERT_EQ(run("gen-data").code, 0);
  auto r = run("eval --baseline rsp --out " + (dir_ / "rsp.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir_ / "rsp.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "P@1,P@2,P@5,HIT@2,HIT@5,NDCG@2,NDCG@5");
  EXPECT_EQ(count_lines(csv), 2u);
  const auto j = nlohmann::json::parse(slurp(dir_ / "rsp.json"));
  EXPECT_EQ(j["model"], "rsp");

  r = run("eval --baseline gru");
  EXPECT_EQ(r.code, 2);
  for (const char* n : {"rsp", "price-desc", "price-asc", "trans1d-avg", "trans1d-concat"}) {
    EXPECT_NE(r.err.find(n), std::string::npos) << n;
  }
  EXPECT_EQ(run("eval").code, 2);

  ASSERT_EQ(run("train").code, 0);
  r = run("eval --checkpoint " + (dir_ / "ck" / "final.json").string() + " --split val");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "reports" / "eval_final_val.csv"));

  r = run("eval --baseline trans1d-avg");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "reports" / "eval_trans1d-avg_test.csv"));
}

TEST_F(Cli, AblateAndSweepAreResumable) {
  ASSERT_EQ(run("gen-data").code, 0);
  auto r = run("ablate --set train.epochs=1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(dir_ / "reports" / "ablation.csv");
  EXPECT_EQ(count_lines(table), 12u);
  r = run("ablate --set train.epochs=1");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(r.err.empty());
  EXPECT_EQ(slurp(dir_ / "reports" / "ablation.csv"), table);

  r = run("sweep --axis h --values 1,2 --set train.epochs=1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir_ / "reports" / "sweep_h.csv")), 3u);
  EXPECT_EQ(run("sweep --axis lr --values 1").code, 2);
}

TEST_F(Cli, GradCheckPasses) {
  const auto r = run("grad-check");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(Cli, AttentionExport) {
  ASSERT_EQ(run("gen-data").code, 0);
  ASSERT_EQ(run("train --set train.epochs=1").code, 0);
  const auto ck = (dir_ / "ck" / "final.json").string();
  auto r = run("attn-export --checkpoint " + ck + " --sample 3 --out " + (dir_ / "map.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto side = nlohmann::json::parse(slurp(dir_ / "map.json"));
  const double score = side["score"];
  EXPECT_GT(score, 0.0);
  EXPECT_LT(score, 1.0);
  const auto csv = slurp(dir_ / "map.csv");
  EXPECT_EQ(count_lines(csv), side["rows"].get<std::size_t>() + 1);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')), 16u);

  r = run("attn-export --checkpoint " + ck + " --sample 100000");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("out of range"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("grad-check", "TRANS2D_THREADS=zero").code, 2);
}
