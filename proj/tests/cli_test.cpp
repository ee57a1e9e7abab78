#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ooc/evaluator.hpp"
#include "ooc/synthetic.hpp"

using namespace ooc;
using testsupport::TempDir;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(OOC_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = detail::read_file_text(out.string());
  r.err = detail::read_file_text(err.string());
  return r;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

// Synthetic dataset plus a config pointing at it; returns the config path.
std::string write_dataset(const TempDir& dir, std::size_t n_train, std::size_t n_test,
                          json extra = json::object()) {
  const auto corpus = synthetic::generate({.n_train = n_train, .n_val = 0, .n_test = n_test});
  synthetic::write(corpus, dir.path());
  json cfg = {{"manifest", "manifest.jsonl"}, {"split_name", "synthetic"}, {"output_dir", "out"},
              {"train", {{"hidden_dim", 8}}}};
  cfg.merge_patch(extra);
  const auto path = dir / "config.json";
  detail::write_file_text(path.string(), cfg.dump(2));
  return path.string();
}

void write_manifest(const TempDir& dir, const std::string& text) {
  detail::write_file_text((dir / "manifest.jsonl").string(), text);
  detail::write_file_text((dir / "config.json").string(),
                          json{{"manifest", "manifest.jsonl"}, {"output_dir", "out"}}.dump());
}

std::string sample_line(const std::string& id, int label, const std::string& split) {
  return json{{"id", id}, {"image", id}, {"caption", "c " + id}, {"label", label},
              {"split", split}}
             .dump() +
         "\n";
}

}  // namespace

TEST(CliPrepare, WritesOneRecordPerSample) {
  TempDir dir;
  write_manifest(dir, sample_line("a", 0, "train") + sample_line("b", 1, "train") +
                          sample_line("c", 0, "train") + sample_line("d", 1, "train"));
  const auto r = run_cli(dir, "prepare --config " + (dir / "config.json").string());
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "out/records-train.jsonl"), 4u);
  EXPECT_NE(r.out.find("balance"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/run_config.prepare.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "out/.ooc.lock"));
}

TEST(CliPrepare, BadLabelNamesTheLine) {
  TempDir dir;
  write_manifest(dir, sample_line("a", 0, "train") + sample_line("b", 2, "train"));
  const auto r = run_cli(dir, "prepare --config " + (dir / "config.json").string());
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST(CliPrepare, MissingPartition) {
  TempDir dir;
  write_manifest(dir, sample_line("a", 0, "train"));
  const auto r =
      run_cli(dir, "prepare --partition test --config " + (dir / "config.json").string());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.err.find("unknown partition"), std::string::npos) << r.err;
}

TEST(CliPrepare, ConfigErrors) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "prepare --config " + (dir / "nope.json").string()).exit_code, 2);
  detail::write_file_text((dir / "config.json").string(), R"({"manifest": "m", "bogus": 1})");
  EXPECT_EQ(run_cli(dir, "prepare --config " + (dir / "config.json").string()).exit_code, 2);
  EXPECT_EQ(run_cli(dir, "prepare").exit_code, 2);
}

TEST(CliPrepare, LockedOutputDirectory) {
  TempDir dir;
  write_manifest(dir, sample_line("a", 0, "train"));
  std::filesystem::create_directories(dir / "out");
  std::ofstream(dir / "out/.ooc.lock") << "";
  const auto r = run_cli(dir, "prepare --config " + (dir / "config.json").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
}

TEST(CliFinetune, DefaultScheduleWritesThirtyEpochs) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 8, 4);
  ASSERT_EQ(run_cli(dir, "prepare --config " + cfg).exit_code, 0);
  const auto r = run_cli(dir, "finetune --config " + cfg);
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "out/checkpoints/history.jsonl"), 30u);
  EXPECT_NE(r.out.find("freeze check passed"), std::string::npos);
  EXPECT_EQ(count_lines(dir / "out/predictions-finetuned-test.jsonl"), 4u);
}

TEST(CliFinetune, ZeroLearningRateReportsNoOp) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 8, 0);
  ASSERT_EQ(run_cli(dir, "prepare --config " + cfg).exit_code, 0);
  const auto r = run_cli(dir, "finetune --epochs 1 --lr 0 --config " + cfg);
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("no-op training"), std::string::npos) << r.out;
  EXPECT_EQ(count_lines(dir / "out/checkpoints/history.jsonl"), 1u);
}

TEST(CliFinetune, TrainableEncoderViolatesFreezeContract) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 8, 0,
                                 {{"train", {{"hidden_dim", 8}, {"unfrozen_encoders", {"text"}}}}});
  ASSERT_EQ(run_cli(dir, "prepare --config " + cfg).exit_code, 0);
  const auto r = run_cli(dir, "finetune --epochs 2 --config " + cfg);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("text_encoder"), std::string::npos);
  EXPECT_NE(r.err.find("freeze"), std::string::npos);
}

TEST(CliFinetune, RequiresPreparedRecords) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 8, 0);
  EXPECT_EQ(run_cli(dir, "finetune --config " + cfg).exit_code, 3);
}

namespace {

json remote_block(const testsupport::StubServer& s) {
  return {{"backend", "remote"},
          {"remote", {{"endpoint", s.endpoint()}, {"timeout", 2.0}, {"backoff_base", 0.0}}}};
}

std::vector<PredictionRecord> zeroshot_predictions(const TempDir& dir) {
  return load_predictions_file((dir / "out/predictions-zeroshot-test.jsonl").string());
}

}  // namespace

TEST(CliZeroShot, AffirmativeStubGivesAllMatch) {
  TempDir dir;
  testsupport::StubServer s([](const httplib::Request&, httplib::Response& res) {
    testsupport::reply_text(res, "Yes, they match.");
  });
  const auto cfg = write_dataset(dir, 2, 6, remote_block(s));
  const auto r = run_cli(dir, "zeroshot --config " + cfg);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto preds = zeroshot_predictions(dir);
  ASSERT_EQ(preds.size(), 6u);
  for (const auto& p : preds) EXPECT_EQ(p.predicted, Predicted::Match);
}

TEST(CliZeroShot, DescriptiveStubGivesAllUnknown) {
  TempDir dir;
  testsupport::StubServer s([](const httplib::Request&, httplib::Response& res) {
    testsupport::reply_text(res, "The image shows a harbor with boats at sunrise.");
  });
  const auto cfg = write_dataset(dir, 2, 4, remote_block(s));
  ASSERT_EQ(run_cli(dir, "zeroshot --config " + cfg).exit_code, 0);
  for (const auto& p : zeroshot_predictions(dir)) EXPECT_EQ(p.predicted, Predicted::Unknown);
  const auto r = run_cli(dir, "evaluate --config " + cfg);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto report = json::parse(detail::read_file_text((dir / "out/report.json").string()));
  EXPECT_EQ(report["reports"][0]["unknown_rate"], 1.0);
  EXPECT_NE(r.err.find("no baseline"), std::string::npos);
}

TEST(CliZeroShot, ResumeLeavesNoDuplicates) {
  TempDir dir;
  std::atomic<bool> flaky{true};
  std::atomic<int> calls{0};
  testsupport::StubServer s([&](const httplib::Request&, httplib::Response& res) {
    if (flaky && ++calls % 2 == 0) {
      res.status = 500;
      return;
    }
    testsupport::reply_text(res, "No.");
  });
  auto extra = remote_block(s);
  extra["remote"]["max_retries"] = 0;
  const auto cfg = write_dataset(dir, 2, 6, extra);
  ASSERT_EQ(run_cli(dir, "zeroshot --config " + cfg).exit_code, 0);
  EXPECT_LT(zeroshot_predictions(dir).size(), 6u);
  flaky = false;
  const auto r = run_cli(dir, "zeroshot --config " + cfg);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::set<std::string> ids;
  for (const auto& p : zeroshot_predictions(dir)) EXPECT_TRUE(ids.insert(p.id).second);
  EXPECT_EQ(ids.size(), 6u);
  EXPECT_EQ(count_lines(dir / "out/transcript-test.jsonl"), 6u);
}

TEST(CliZeroShot, UnauthorizedIsBackendError) {
  TempDir dir;
  testsupport::StubServer s(
      [](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  const auto cfg = write_dataset(dir, 2, 2, remote_block(s));
  EXPECT_EQ(run_cli(dir, "zeroshot --config " + cfg).exit_code, 4);
}

TEST(CliEvaluate, EmptyPredictionsFile) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 2, 2);
  std::filesystem::create_directories(dir / "out");
  std::ofstream(dir / "empty.jsonl") << "";
  const auto r = run_cli(dir, "evaluate --predictions ours=" + (dir / "empty.jsonl").string() +
                                  " --config " + cfg);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.err.find("empty"), std::string::npos);
}

TEST(CliEvaluate, EndToEndReport) {
  TempDir dir;
  const auto cfg = write_dataset(dir, 16, 8, {{"split_name", "Merged/Balanced"}});
  ASSERT_EQ(run_cli(dir, "prepare --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli(dir, "finetune --epochs 3 --config " + cfg).exit_code, 0);
  const auto r = run_cli(dir, "evaluate --config " + cfg);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("Merged/Balanced"), std::string::npos);
  EXPECT_NE(r.out.find("0.65"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/report.txt"));
}

TEST(CliSynth, WritesDatasetAndConfig) {
  TempDir dir;
  const auto r = run_cli(dir, "synth --out " + (dir / "demo").string() + " --train 8 --test 4");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "demo/manifest.jsonl"), 12u);
  EXPECT_TRUE(std::filesystem::exists(dir / "demo/config.json"));
}
