#include "itrl/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "itrl/dataset.hpp"
#include "itrl/text.hpp"
#include "test_util.hpp"

namespace itrl {
namespace {

namespace fs = std::filesystem;
using test::TempDir;

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

bool has_line(const std::string& text, const std::string& line) {
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);)
    if (l == line) return true;
  return false;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  os << s;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data_ = (dir_.path() / "data").string();
    const auto r = run_cli({"gen-data", "--out", data_, "--tasks", "reach_target,push_buttons", "--episodes", "4",
                            "--seed", "5"});
    ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  }

  TempDir dir_;
  std::string data_;
};

TEST(CliParse, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(run_cli({"train", "--help"}).code, cli::kExitOk);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"fly"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--bogus", "1"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"gen-data"}).code, cli::kExitUsageError);  // --out missing
  EXPECT_EQ(run_cli({"train", "--out", "x", "--data", "y", "--fusion", "mix"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"eval", "--data", "y", "--episodes", "0"}).code, cli::kExitUsageError);
  EXPECT_EQ(run_cli({"eval", "--data", "y", "--config"}).code, cli::kExitUsageError);
}

TEST_F(CliTest, GenDataWritesManifestVocabAndEpisodes) {
  const auto m = bw::Manifest::load(fs::path(data_) / "manifest.json");
  EXPECT_EQ(m.episodes.size(), 8u);
  EXPECT_EQ(m.seed, 5u);
  for (const auto& e : m.episodes) EXPECT_TRUE(fs::exists(fs::path(data_) / e.file)) << e.file;
  EXPECT_TRUE(fs::exists(fs::path(data_) / "vocab.txt"));
}

TEST_F(CliTest, GenDataHoldoutSplit) {
  const auto out = (dir_.path() / "split").string();
  const auto r = run_cli({"gen-data", "--out", out, "--tasks", "push_buttons", "--push-colors", "red,green,blue,yellow",
                          "--holdout-orderings", "6", "--episodes-per-variation", "1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto m = bw::Manifest::load(fs::path(out) / "manifest.json");
  EXPECT_EQ(m.variations_with_split(bw::TaskKind::kPushButtons, "seen").size(), 18u);
  EXPECT_EQ(m.variations_with_split(bw::TaskKind::kPushButtons, "unseen").size(), 6u);
  EXPECT_EQ(m.episodes.size(), 18u);

  EXPECT_EQ(run_cli({"gen-data", "--out", out, "--tasks", "reach_target", "--holdout-orderings", "2"}).code,
            cli::kExitDomainError);
}

TEST_F(CliTest, ConfigFileIsOverriddenByCommandLine) {
  const auto cfg = dir_.path() / "eval.cfg";
  write_text(cfg, "# evaluation budget\nepisodes = 3\n\nseeds=2\ncontroller=expert\n");
  const auto r = run_cli({"eval", "--data", data_, "--config", cfg.string(), "--seeds", "1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(has_line(r.out, "episodes=3"));
  EXPECT_TRUE(has_line(r.out, "seeds=1"));
  EXPECT_TRUE(has_line(r.out, "controller=expert"));
  EXPECT_TRUE(has_line(r.out, "split=seen"));  // default still echoed
  EXPECT_NE(r.out.find("| controller=expert split=seen style=default | 100.0000 | 0.0000 | 100.0000 | 3 |"),
            std::string::npos)
      << r.out;
}

TEST_F(CliTest, ConfigFileErrorsAreUsageErrors) {
  const auto unknown = dir_.path() / "unknown.cfg";
  write_text(unknown, "episodes=3\nlearning_rate=1\n");
  auto r = run_cli({"eval", "--data", data_, "--config", unknown.string()});
  EXPECT_EQ(r.code, cli::kExitUsageError);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;

  const auto malformed = dir_.path() / "malformed.cfg";
  write_text(malformed, "episodes 3\n");
  r = run_cli({"eval", "--data", data_, "--config", malformed.string()});
  EXPECT_EQ(r.code, cli::kExitUsageError);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;

  EXPECT_EQ(run_cli({"eval", "--data", data_, "--config", (dir_.path() / "missing.cfg").string()}).code,
            cli::kExitUsageError);

  // Keys belong to a verb: iterations is a train key, not an eval key.
  const auto other = dir_.path() / "other.cfg";
  write_text(other, "iterations=5\n");
  EXPECT_EQ(run_cli({"eval", "--data", data_, "--config", other.string()}).code, cli::kExitUsageError);
}

TEST_F(CliTest, TrainEvalAndVocabularyMismatch) {
  const auto run_dir = (dir_.path() / "run").string();
  auto r = run_cli({"train", "--data", data_, "--out", run_dir, "--preset", "tiny", "--policy-d", "32",
                    "--policy-depth", "1", "--policy-heads", "2", "--context", "2", "--iterations", "3", "--batch",
                    "2", "--checkpoint-every", "0", "--log-every", "1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto ckpt = (fs::path(run_dir) / "agent.itrl").string();
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(fs::path(run_dir) / "metrics.csv"));

  const auto ev = (dir_.path() / "ev").string();
  r = run_cli({"eval", "--data", data_, "--checkpoint", ckpt, "--episodes", "2", "--seeds", "1", "--out", ev});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(ev) / "eval.csv"));
  EXPECT_TRUE(fs::exists(fs::path(ev) / "eval.md"));

  // Same dataset, different vocabulary file.
  auto vocab = text::Vocabulary::load(fs::path(data_) / "vocab.txt");
  const auto words = vocab.tokens();
  const std::vector<std::string> fewer(words.begin() + text::kReservedCount, words.end() - 1);
  text::build_vocab(std::span<const std::string>(fewer)).save(fs::path(data_) / "vocab.txt");
  r = run_cli({"eval", "--data", data_, "--checkpoint", ckpt, "--episodes", "2", "--seeds", "1"});
  EXPECT_EQ(r.code, cli::kExitDomainError);
  EXPECT_NE(r.err.find("vocabulary"), std::string::npos) << r.err;

  EXPECT_EQ(run_cli({"eval", "--data", data_}).code, cli::kExitUsageError);  // learned needs a checkpoint
}

TEST_F(CliTest, PretrainCorpusAndEncoder) {
  const auto corpus_dir = (dir_.path() / "corpus").string();
  auto r = run_cli({"gen-pretrain-corpus", "--out", corpus_dir, "--count", "12"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto corpus = (fs::path(corpus_dir) / "corpus.bwcp").string();
  EXPECT_EQ(bw::read_corpus(corpus).size(), 12u);

  const auto enc_dir = (dir_.path() / "enc").string();
  r = run_cli({"pretrain", "--corpus", corpus, "--out", enc_dir, "--preset", "tiny", "--iterations", "2", "--batch",
               "2", "--checkpoint-every", "0"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto enc = (fs::path(enc_dir) / "encoder.itrl").string();
  ASSERT_TRUE(fs::exists(enc));

  r = run_cli({"train", "--data", data_, "--out", (dir_.path() / "ft").string(), "--preset", "tiny", "--encoder", enc,
               "--policy-d", "32", "--policy-depth", "1", "--policy-heads", "2", "--iterations", "1", "--batch", "1",
               "--checkpoint-every", "0"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;

  // A small-preset agent cannot take a tiny encoder.
  r = run_cli({"train", "--data", data_, "--out", (dir_.path() / "bad").string(), "--encoder", enc, "--iterations",
               "1"});
  EXPECT_EQ(r.code, cli::kExitDomainError);
}

TEST_F(CliTest, RenderWritesOnePpmPerCameraPerStep) {
  const auto m = bw::Manifest::load(fs::path(data_) / "manifest.json");
  const auto last = static_cast<int>(m.episodes.size()) - 1;
  const auto out = dir_.path() / "frames";
  const auto r = run_cli({"render", "--data", data_, "--episode", std::to_string(last), "--out", out.string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto steps = m.episodes[static_cast<std::size_t>(last)].steps;
  int files = 0;
  for (const auto& f : fs::directory_iterator(out)) {
    ++files;
    const auto bytes = test::read_bytes(f.path());
    ASSERT_EQ(bytes.substr(0, 13), "P6\n32 32\n255\n") << f.path();
    EXPECT_EQ(bytes.size(), 13u + 32u * 32u * 3u);
  }
  EXPECT_EQ(files, steps * bw::kCameras);

  const auto single = dir_.path() / "single";
  EXPECT_EQ(run_cli({"render", "--episode-file", (fs::path(data_) / m.episodes[0].file).string(), "--out",
                     single.string()})
                .code,
            cli::kExitOk);
  EXPECT_EQ(run_cli({"render", "--data", data_, "--episode", "99", "--out", single.string()}).code,
            cli::kExitDomainError);
}

}  // namespace
}  // namespace itrl
