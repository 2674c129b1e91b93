#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>
#include <vector>

#include "ioi/cli.hpp"
#include "test_util.hpp"

using namespace ioi;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ioi-lab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

void expect_one_line_error(const Run& r, const std::string& kind) {
  EXPECT_EQ(count_lines(r.err), 1u) << r.err;
  EXPECT_EQ(r.err.rfind("ioi-lab: error: " + kind + ":", 0), 0u) << r.err;
}

void expect_manifest_complete(const fs::path& dir) {
  const auto m = json::parse(read_text_file(dir / kManifestName));
  std::set<std::string> listed;
  for (const auto& o : m["outputs"]) {
    listed.insert(o["path"].get<std::string>());
    EXPECT_EQ(o["sha256"], file_digest(dir / o["path"].get<std::string>()));
  }
  for (const auto& rel : list_artifacts(dir)) EXPECT_TRUE(listed.count(rel)) << rel;
}

}  // namespace

TEST(Cli, GenerateDataWritesCorpus) {
  const auto dir = testutil::temp_dir("cli_gen");
  const auto r = run({"generate-data", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto text = read_text_file(dir / "corpus.csv");
  EXPECT_EQ(count_lines(text), 60u);
  expect_manifest_complete(dir);
}

TEST(Cli, TrainThenEvalIsPerfect) {
  const auto dir = testutil::temp_dir("cli_train");
  auto r = run({"train", "--layers", "1", "--heads", "2", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "checkpoint.json"));
  const auto log = read_text_file(dir / "train_log.csv");
  EXPECT_EQ(log.rfind("step,lr,loss,accuracy\n", 0), 0u);
  EXPECT_EQ(count_lines(log), 2001u);
  r = run({"eval", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy=1.0000"), std::string::npos) << r.out;
  const auto ev = json::parse(read_text_file(dir / "eval.json"));
  EXPECT_EQ(ev["metrics"]["accuracy"], 1.0);
  EXPECT_EQ(count_lines(read_text_file(dir / "predictions.csv")), 61u);

  for (const char* what : {"attention", "circuits", "spectral", "decompose"}) {
    r = run({"analyze", what, "--out-dir", dir.string()});
    EXPECT_EQ(r.code, 0) << what << ": " << r.err;
  }
  EXPECT_TRUE(fs::exists(dir / "analysis" / "attention_BABA_L0H1.svg"));
  EXPECT_TRUE(fs::exists(dir / "analysis" / "ov_L0H0.csv"));
  EXPECT_TRUE(fs::exists(dir / "analysis" / "spectral.json"));
  EXPECT_TRUE(fs::exists(dir / "analysis" / "decomposition.svg"));
  r = run({"analyze", "circuits", "--basis", "token_plus_pos", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "analysis" / "qk_pos_L0H0.svg"));

  r = run({"intervene", "mean-embed", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "interventions" / "mean_embed.json"));
  expect_manifest_complete(dir);
}

TEST(Cli, AnalyzeWithoutCheckpointFails) {
  const auto dir = testutil::temp_dir("cli_missing");
  const auto r = run({"analyze", "spectral", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 3);
  expect_one_line_error(r, "missing_checkpoint");
}

TEST(Cli, UsageErrors) {
  auto r = run({"train", "--bogus"});
  EXPECT_EQ(r.code, 2);
  expect_one_line_error(r, "unknown_argument");
  r = run({});
  EXPECT_EQ(r.code, 2);
  expect_one_line_error(r, "usage");
  r = run({"intervene", "composition"});
  EXPECT_EQ(r.code, 2);
  r = run({"intervene", "composition", "--path", "X"});
  EXPECT_EQ(r.code, 2);
  r = run({"train", "--heads", "3"});  // does not divide d_model
  EXPECT_EQ(r.code, 3);
  expect_one_line_error(r, "bad_config");
}

TEST(Cli, ConfigFileAndOverrides) {
  const auto dir = testutil::temp_dir("cli_config");
  write_text_file(dir / "run.toml", "[train]\nlayers = 2\nheads = 1\nsteps = 30\n");
  auto r = run({"train", "--config", (dir / "run.toml").string(), "--steps", "20", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("trained 2L1H"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("steps=20"), std::string::npos) << r.out;
  const auto m = json::parse(read_text_file(dir / kManifestName));
  EXPECT_EQ(m["configs"]["train"]["total_steps"], 20);
  EXPECT_EQ(m["configs"]["model"]["n_layers"], 2);
  ASSERT_EQ(m["inputs"].size(), 1u);
  EXPECT_EQ(m["inputs"][0]["sha256"], file_digest(dir / "run.toml"));

  write_text_file(dir / "bad.toml", "[train]\nbogus_key = 3\n");
  r = run({"train", "--config", (dir / "bad.toml").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 3);
  expect_one_line_error(r, "malformed_config");
  r = run({"train", "--config", (dir / "absent.toml").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 3);
  expect_one_line_error(r, "missing_file");
}

TEST(Cli, CompositionNeedsTwoLayers) {
  const auto dir = testutil::temp_dir("cli_comp");
  ASSERT_EQ(run({"train", "--steps", "20", "--out-dir", dir.string()}).code, 0);
  auto r = run({"intervene", "composition", "--path", "Q", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 3);
  expect_one_line_error(r, "wrong_architecture");

  const auto dir2 = testutil::temp_dir("cli_comp2");
  ASSERT_EQ(run({"train", "--layers", "2", "--heads", "1", "--steps", "50", "--out-dir", dir2.string()}).code, 0);
  for (const char* p : {"Q", "K", "V"}) {
    r = run({"intervene", "composition", "--path", p, "--out-dir", dir2.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir2 / "interventions" / (std::string("composition_") + p + ".json")));
  }
}

TEST(Cli, NoPosNeedsThreeSeeds) {
  const auto dir = testutil::temp_dir("cli_nopos");
  auto r = run({"intervene", "no-pos", "--seeds", "1,2", "--steps", "10", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 2);
  r = run({"intervene", "no-pos", "--seeds", "1,2,3", "--steps", "10", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto rep = json::parse(read_text_file(dir / "interventions" / "no_pos.json"));
  EXPECT_EQ(rep["per_seed"].size(), 3u);
}

TEST(Cli, Gradcheck) {
  const auto dir = testutil::temp_dir("cli_gc");
  const auto r = run({"gradcheck", "--layers", "2", "--heads", "1", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(" ok"), std::string::npos);
  const auto rep = json::parse(read_text_file(dir / "gradcheck.json"));
  EXPECT_LT(rep["max_rel_error"].get<double>(), 1e-4);
}

TEST(Cli, OutDirFromEnvironment) {
  const auto dir = testutil::temp_dir("cli_env");
  ::setenv(kOutDirEnv, dir.c_str(), 1);
  const auto r = run({"generate-data"});
  ::unsetenv(kOutDirEnv);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "corpus.csv"));
}

TEST(Cli, HelpAndVersion) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("reproduce-paper"), std::string::npos);
  r = run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, std::string(kToolVersion) + "\n");
}
