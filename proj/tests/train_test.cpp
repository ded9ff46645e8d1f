#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "itrl/train.hpp"
#include "test_util.hpp"

namespace itrl::train {
namespace {

using test::TempDir;

struct Fixture {
  TempDir dir;
  bw::Dataset data;
  text::Vocabulary vocab;

  explicit Fixture(int episodes, bw::TaskKind task = bw::TaskKind::kReachTarget) {
    bw::DatasetConfig dc;
    dc.plans = {bw::all_variations(task)};
    dc.episodes_per_task = episodes;
    dc.seed = 3;
    bw::generate_dataset(dc, dir.path() / "data");
    data = bw::load_dataset(dir.path() / "data");
    vocab = text::Vocabulary::load(dir.path() / "data" / "vocab.txt");
  }

  model::Agent agent(std::uint64_t seed = 1, int context = 2) const {
    model::PolicyConfig pc;
    pc.d = 32;
    pc.depth = 1;
    pc.heads = 2;
    pc.context = context;
    auto spec = model::make_agent_spec(model::encoder_preset("tiny", static_cast<int>(vocab.size())), pc,
                                       model::Selection::kConcatAll, true);
    return model::Agent(spec, vocab, seed);
  }
};

TrainConfig quick(int iterations, int batch = 4) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch = batch;
  c.warmup = 5;
  c.log_every = 1;
  c.checkpoint_every = 0;
  return c;
}

MatrixF test_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  MatrixF m(32, 96);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

TEST(Augment, ZeroMagnitudeIsIdentity) {
  const MatrixF img = test_image(1);
  EXPECT_EQ(augment(img, 0.0, 9), img);
}

TEST(Augment, PerChannelOffsetWithinRangeAndClamped) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    MatrixF img = MatrixF::Constant(4, 12, 0.5f);
    img(0, 0) = 0.f;
    img(0, 1) = 1.f;
    const MatrixF out = augment(img, 0.05, seed);
    for (int c = 0; c < 3; ++c) {
      const float off = out(1, c) - 0.5f;
      EXPECT_LE(std::abs(off), 0.05f + 1e-6f);
      for (Index r = 1; r < out.rows(); ++r)
        for (Index x = c; x < out.cols(); x += 3) EXPECT_FLOAT_EQ(out(r, x) - 0.5f, off);
    }
    EXPECT_GE(out.minCoeff(), 0.f);
    EXPECT_LE(out.maxCoeff(), 1.f);
  }
}

TEST(Augment, OffsetsAverageToZero) {
  const MatrixF img = MatrixF::Constant(1, 3, 0.5f);
  double sum = 0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) sum += augment(img, 0.05, static_cast<std::uint64_t>(s)).sum() - 1.5;
  // Uniform(-0.05, 0.05) has sd 0.0289; five standard errors of the mean.
  EXPECT_LT(std::abs(sum / (3.0 * n)), 5 * 0.0289 / std::sqrt(3.0 * n));
}

TEST(Augment, RejectsBadArguments) {
  EXPECT_THROW(augment(test_image(1), 0.6, 1), ConfigError);
  EXPECT_THROW(augment(MatrixF::Zero(2, 4), 0.1, 1), ShapeError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& x) { x.lr = 0; }, [](TrainConfig& x) { x.batch = 0; },
           [](TrainConfig& x) { x.iterations = 0; }, [](TrainConfig& x) { x.jitter = 0.6; },
           [](TrainConfig& x) { x.jitter = -0.1; }}) {
    TrainConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

TEST(TrainConfig, WarmupThenConstant) {
  TrainConfig c;
  c.warmup = 100;
  EXPECT_NEAR(c.adamw(0).lr, 5e-6, 1e-12);
  EXPECT_NEAR(c.adamw(49).lr, 2.5e-4, 1e-12);
  EXPECT_DOUBLE_EQ(c.adamw(99).lr, 5e-4);
  EXPECT_DOUBLE_EQ(c.adamw(5000).lr, 5e-4);
  EXPECT_DOUBLE_EQ(c.adamw(0).beta2, 0.95);
}

TEST(MetricsLog, StepsStrictlyIncreaseAndCsvHeader) {
  MetricsLog log;
  log.append({1, 0.5, 1.0, 0.1});
  log.append({2, 0.4, 1.0, 0.2});
  EXPECT_THROW(log.append({2, 0.3, 1.0, 0.3}), Error);
  TempDir dir;
  log.write_csv(dir.path() / "m.csv");
  const std::string text = test::read_bytes(dir.path() / "m.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "step,loss,grad_norm,seconds");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(TrainBc, LossDecreases) {
  Fixture f(16);
  auto agent = f.agent();
  auto cfg = quick(200, 8);
  const auto r = train_bc(agent, f.data, cfg);
  EXPECT_LT(r.final_loss, 0.5 * r.initial_loss);
  ASSERT_EQ(r.metrics.rows().size(), 200u);
  for (const auto& row : r.metrics.rows()) EXPECT_TRUE(std::isfinite(row.loss) && std::isfinite(row.grad_norm));
}

TEST(TrainBc, SingleRepeatedSampleConverges) {
  Fixture f(1);
  auto agent = f.agent();
  auto cfg = quick(2000, 1);
  cfg.jitter = 0;
  cfg.log_every = 100;
  const auto r = train_bc(agent, f.data, cfg);
  EXPECT_LT(r.final_loss, 1e-3);
}

TEST(TrainBc, DeterministicCheckpointsAndLosses) {
  Fixture f(6, bw::TaskKind::kPushButtons);
  auto cfg = quick(12, 3);
  cfg.checkpoint_every = 6;
  TempDir out;
  auto a = f.agent(5);
  auto b = f.agent(5);
  const auto ra = train_bc(a, f.data, cfg, out.path() / "a");
  const auto rb = train_bc(b, f.data, cfg, out.path() / "b");
  for (const char* name : {"checkpoint_000006.itrl", "checkpoint_000012.itrl", "agent.itrl"}) {
    ASSERT_TRUE(std::filesystem::exists(out.path() / "a" / name)) << name;
    EXPECT_EQ(test::read_bytes(out.path() / "a" / name), test::read_bytes(out.path() / "b" / name)) << name;
  }
  EXPECT_TRUE(std::filesystem::exists(out.path() / "a" / "metrics.csv"));
  ASSERT_EQ(ra.metrics.rows().size(), rb.metrics.rows().size());
  for (std::size_t i = 0; i < ra.metrics.rows().size(); ++i) {
    EXPECT_EQ(ra.metrics.rows()[i].loss, rb.metrics.rows()[i].loss);
    EXPECT_EQ(ra.metrics.rows()[i].grad_norm, rb.metrics.rows()[i].grad_norm);
  }
  EXPECT_EQ(ra.final_loss, rb.final_loss);
}

TEST(TrainBc, DifferentSeedsDiverge) {
  Fixture f(4);
  auto a = f.agent();
  auto b = f.agent();
  auto cfg = quick(3);
  const auto ra = train_bc(a, f.data, cfg);
  cfg.seed = 1;
  const auto rb = train_bc(b, f.data, cfg);
  EXPECT_NE(ra.metrics.rows().back().loss, rb.metrics.rows().back().loss);
}

TEST(TrainBc, FreezeEncoderLeavesEncoderUntouched) {
  Fixture f(4);
  auto agent = f.agent();
  std::vector<MatrixF> before;
  for (std::size_t i = 0; i < agent.params().size(); ++i) before.push_back(agent.params().at(i).value);
  auto cfg = quick(5);
  cfg.freeze_encoder = true;
  train_bc(agent, f.data, cfg);
  bool policy_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = agent.params().at(i);
    if (p.name.rfind("encoder.", 0) == 0)
      EXPECT_EQ(p.value, before[i]) << p.name;
    else
      policy_moved = policy_moved || p.value != before[i];
  }
  EXPECT_TRUE(policy_moved);
}

TEST(TrainBc, CheckpointReloadGivesIdenticalForward) {
  Fixture f(4);
  auto agent = f.agent();
  TempDir out;
  train_bc(agent, f.data, quick(3), out.path());
  AdamWState<float> opt;
  const auto loaded = model::Agent::load(out.path() / "agent.itrl", &opt);
  EXPECT_EQ(loaded.spec().policy.context, agent.spec().policy.context);
  EXPECT_EQ(loaded.vocab(), agent.vocab());
  ASSERT_EQ(opt.m.size(), agent.params().size());

  const auto& ep = f.data.episodes.front();
  const text::TokenSeq tokens = agent.tokens(ep.instruction);
  std::vector<MatrixF> patches;
  for (const auto& img : ep.steps[0].obs.images) patches.push_back(model::patchify(model::image_to_float<float>(img), 8));
  std::vector<model::EncoderInput<float>> inputs;
  for (const auto& p : patches) inputs.push_back({&p, &tokens});
  model::PolicyWindow<float> win;
  win.feature_rows = {0, 1, 2};
  win.proprio = MatrixF::Zero(1, 4);
  win.past_actions.resize(0, 8);
  auto run = [&](const model::Agent& a) {
    Tape<float> tape;
    auto feats = model::agent_features(tape, a.params(), a.spec(), std::span<const model::EncoderInput<float>>(inputs));
    return MatrixF(model::policy_forward(tape, a.params(), a.spec().policy, feats,
                                         std::span<const model::PolicyWindow<float>>(&win, 1))
                       .value());
  };
  EXPECT_EQ(run(agent), run(loaded));
}

TEST(TrainBc, NonFiniteParameterAbortsWithStep) {
  Fixture f(2);
  auto agent = f.agent();
  agent.params().at("policy.head.fc2.b").value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train_bc(agent, f.data, quick(3));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(Pretrain, LossDecreasesAndEncoderLoadsIntoAgent) {
  const auto corpus = bw::make_caption_corpus(64, 2);
  std::vector<std::string> sentences = bw::grammar_corpus();
  const auto vocab = text::build_vocab(std::span<const std::string>(sentences));
  auto enc = model::encoder_preset("tiny", static_cast<int>(vocab.size()));
  model::MaeConfig mae;
  mae.decoder_depth = 1;
  Pretrainer p(enc, mae, vocab, 4);
  auto cfg = quick(150, 8);
  cfg.lr = 1e-3;
  TempDir out;
  const auto r = pretrain_encoder(p, corpus, cfg, out.path());
  EXPECT_LT(r.final_loss, 0.8 * r.initial_loss);
  ASSERT_TRUE(std::filesystem::exists(out.path() / "encoder.itrl"));
  ASSERT_TRUE(std::filesystem::exists(out.path() / "metrics.csv"));

  for (auto fusion : {model::Fusion::kJoint, model::Fusion::kConcat, model::Fusion::kFilm}) {
    auto e = enc;
    e.fusion = fusion;
    model::Agent agent(model::make_agent_spec(e, model::PolicyConfig{}, model::Selection::kLast, true), vocab, 9);
    agent.load_encoder(out.path() / "encoder.itrl");
    EXPECT_EQ(agent.params().at("encoder.patch_proj.w").value, p.params.at("encoder.patch_proj.w").value);
  }
  auto other = model::encoder_preset("small", static_cast<int>(vocab.size()));
  model::Agent mismatched(model::make_agent_spec(other, model::PolicyConfig{}, model::Selection::kLast, true), vocab, 9);
  EXPECT_THROW(mismatched.load_encoder(out.path() / "encoder.itrl"), ConfigError);
}

TEST(Pretrain, RejectsNonJointEncoder) {
  std::vector<std::string> sentences = bw::grammar_corpus();
  const auto vocab = text::build_vocab(std::span<const std::string>(sentences));
  auto enc = model::encoder_preset("tiny", static_cast<int>(vocab.size()));
  enc.fusion = model::Fusion::kFilm;
  EXPECT_THROW(Pretrainer(enc, model::MaeConfig{}, vocab, 1), ConfigError);
}

}  // namespace
}  // namespace itrl::train
