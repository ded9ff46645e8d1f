#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "itrl/blockworld.hpp"
#include "itrl/dataset.hpp"
#include "itrl/render.hpp"
#include "itrl/text.hpp"
#include "test_util.hpp"

using namespace itrl;
using namespace itrl::bw;

namespace {

struct Env {
  TaskSpec spec;
  VariationSpec var;
  SceneState state;
  std::string instruction;

  Env(TaskKind task, int variation, std::uint64_t seed)
      : spec(task_spec(task)), var(make_variation(task, variation)) {
    auto r = reset(spec, var, seed);
    state = r.state;
    instruction = r.instruction;
  }
  StepResult act(Vec3 p, bool open) {
    Action a;
    a.position = p.cast<float>();
    a.gripper = open ? 1.f : 0.f;
    auto r = step(state, spec, var, a);
    state = r.state;
    return r;
  }
  const Object& find(ObjectKind kind, int color) const {
    for (const auto& o : state.objects)
      if (o.kind == kind && o.color == color) return o;
    throw std::runtime_error("no such object");
  }
};

// Bounding box of pixels with exactly this colour.
struct Blob {
  int umin = 99, umax = -1, vmin = 99, vmax = -1;
  int count = 0;
};

Blob find_blob(const Image& img, Rgb c) {
  Blob b;
  for (int v = 0; v < kImageSize; ++v)
    for (int u = 0; u < kImageSize; ++u) {
      const std::size_t at = (static_cast<std::size_t>(v) * kImageSize + static_cast<std::size_t>(u)) * 3;
      if (img[at] == c[0] && img[at + 1] == c[1] && img[at + 2] == c[2]) {
        b.umin = std::min(b.umin, u);
        b.umax = std::max(b.umax, u);
        b.vmin = std::min(b.vmin, v);
        b.vmax = std::max(b.vmax, v);
        ++b.count;
      }
    }
  return b;
}

}  // namespace

TEST(Reset, DeterministicGivenSeed) {
  for (auto task : kAllTasks) {
    const auto spec = task_spec(task);
    const auto var = make_variation(task, 1);
    auto a = reset(spec, var, 77);
    auto b = reset(spec, var, 77);
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.instruction, b.instruction);
    EXPECT_NE(a.state, reset(spec, var, 78).state);
  }
}

TEST(Reset, PushButtonsInstructionText) {
  const std::vector<int> order{0, 1, 2};
  Env env(TaskKind::kPushButtons, push_buttons_variation_id(order), 3);
  EXPECT_EQ(env.instruction, "push the red button, then push the green button, then push the blue button");
}

TEST(Reset, ReachTargetHasFourDistinctTargets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Env env(TaskKind::kReachTarget, static_cast<int>(seed % 8), seed);
    ASSERT_EQ(env.state.objects.size(), 4u);
    std::set<int> colors;
    for (const auto& o : env.state.objects) {
      EXPECT_EQ(o.kind, ObjectKind::kTarget);
      colors.insert(o.color);
    }
    EXPECT_EQ(colors.size(), 4u);
  }
}

TEST(Reset, LayoutInvariants) {
  for (auto task : kAllTasks) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      Env env(task, static_cast<int>(seed) % variation_count(task), seed);
      EXPECT_EQ(env.state.gripper.position, Vec3(0.5, 0.5, 0.3));
      EXPECT_TRUE(env.state.gripper.open);
      EXPECT_EQ(static_cast<int>(env.state.objects.size()), env.var.object_count);
      for (std::size_t i = 0; i < env.state.objects.size(); ++i) {
        const auto& p = env.state.objects[i].position;
        EXPECT_GE(p.minCoeff(), 0.0);
        EXPECT_LE(p.maxCoeff(), 1.0);
        for (std::size_t j = 0; j < i; ++j)
          EXPECT_GE((p.head<2>() - env.state.objects[j].position.head<2>()).norm(), kMinSeparation);
      }
    }
  }
}

TEST(Reset, NeverStartsTerminal) {
  for (auto task : kAllTasks) {
    const auto spec = task_spec(task);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      const auto var = make_variation(task, static_cast<int>(seed % static_cast<std::uint64_t>(variation_count(task))));
      const auto r = reset(spec, var, seed);
      ASSERT_FALSE(is_terminal(r.state, spec, var)) << task_name(task) << " seed " << seed;
      for (const auto& o : r.state.objects)
        EXPECT_GT((o.position.head<2>() - r.state.gripper.position.head<2>()).norm(), kReachRadius);
    }
  }
}

TEST(Reset, OverConstrainedSceneFails) {
  VariationSpec v = make_variation(TaskKind::kStackBlocks, 0);
  v.count = 40;
  v.object_count = 44;
  EXPECT_THROW(reset(task_spec(TaskKind::kStackBlocks), v, 1), Error);
}

TEST(Variations, InstructedColorsDistinct) {
  EXPECT_EQ(variation_count(TaskKind::kPushButtons), 400);
  for (auto task : kAllTasks) {
    for (int id = 0; id < variation_count(task); ++id) {
      auto v = make_variation(task, id);
      std::set<int> s(v.colors.begin(), v.colors.end());
      EXPECT_EQ(s.size(), v.colors.size());
    }
    EXPECT_THROW(make_variation(task, variation_count(task)), Error);
  }
  const std::vector<int> order{3, 1, 5};
  EXPECT_EQ(make_variation(TaskKind::kPushButtons, push_buttons_variation_id(order)).colors, order);
}

TEST(Step, ReachTargetSingleAction) {
  Env env(TaskKind::kReachTarget, 2, 5);
  auto r = env.act(env.find(ObjectKind::kTarget, 2).position, true);
  EXPECT_TRUE(r.success);
  EXPECT_TRUE(r.done);
}

TEST(Step, PushButtonsWrongOrderNeverSucceeds) {
  const std::vector<int> order{0, 1};
  Env env(TaskKind::kPushButtons, push_buttons_variation_id(order), 9);
  Vec3 green = env.find(ObjectKind::kButton, 1).position;
  Vec3 red = env.find(ObjectKind::kButton, 0).position;
  env.act(green, false);
  EXPECT_FALSE(is_success(env.state, env.var));
  auto r = env.act(red, false);
  EXPECT_FALSE(r.success);
  r = env.act(green, false);
  EXPECT_FALSE(r.success);
  EXPECT_THROW(expert_action(env.state, env.spec, env.var), Error);
}

TEST(Step, PressRequiresLowGripper) {
  const std::vector<int> order{4};
  Env env(TaskKind::kPushButtons, push_buttons_variation_id(order), 2);
  Vec3 p = env.find(ObjectKind::kButton, 4).position;
  env.act(Vec3(p.x(), p.y(), 0.03), false);
  EXPECT_TRUE(env.state.press_order.empty());
  auto r = env.act(Vec3(p.x() + 0.04, p.y(), 0.02), false);
  EXPECT_TRUE(r.success);
}

TEST(Step, PickAndLiftGraspThenLift) {
  Env env(TaskKind::kPickAndLift, 6, 4);
  Vec3 b = env.find(ObjectKind::kBlock, 6).position;
  env.act(b, false);
  ASSERT_TRUE(env.state.held_index().has_value());
  auto r = env.act(Vec3(b.x(), b.y(), 0.3), false);
  EXPECT_TRUE(r.success);
  const auto& held = env.state.objects[static_cast<std::size_t>(*env.state.held_index())];
  EXPECT_EQ(held.position, env.state.gripper.position);
}

TEST(Step, ReleaseOverStackIncrementsHeight) {
  Env env(TaskKind::kStackBlocks, 0, 8);  // red, two cubes
  const Object* pad = nullptr;
  for (const auto& o : env.state.objects)
    if (o.kind == ObjectKind::kTarget) pad = &o;
  const Vec3 base = pad->position;
  Vec3 b = env.find(ObjectKind::kBlock, 0).position;
  env.act(b, false);
  env.act(Vec3(base.x() + 0.03, base.y(), 0.2), true);
  int stacked = 0;
  for (const auto& o : env.state.objects) stacked += o.stacked ? 1 : 0;
  EXPECT_EQ(stacked, 1);
  for (const auto& o : env.state.objects) {
    if (o.kind == ObjectKind::kTarget) {
      EXPECT_EQ(o.stack_height, 1);
    }
  }
}

TEST(Step, ClampsAndRejectsNonFinite) {
  Env env(TaskKind::kReachTarget, 0, 1);
  env.act(Vec3(1.5, -0.2, 0.5), true);
  EXPECT_EQ(env.state.gripper.position, Vec3(1.0, 0.0, 0.5));
  Action bad;
  bad.position.x() = std::nanf("");
  EXPECT_THROW(step(env.state, env.spec, env.var, bad), Error);
}

TEST(Step, DeterministicUnderFixedActions) {
  auto run = [] {
    Env env(TaskKind::kStackBlocks, 5, 21);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    std::vector<SceneState> states;
    for (int t = 0; t < env.spec.max_steps; ++t) {
      Action a;
      a.position = {u(rng), u(rng), u(rng)};
      a.quaternion = {u(rng), u(rng), u(rng), u(rng)};
      a.gripper = u(rng);
      env.state = step(env.state, env.spec, env.var, a).state;
      states.push_back(env.state);
    }
    return states;
  };
  EXPECT_EQ(run(), run());
}

TEST(Quaternion, CanonicalForm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector4f q(n(rng), n(rng), n(rng), n(rng));
    auto c = canonicalize_quaternion(q);
    EXPECT_NEAR(c.norm(), 1.0f, 1e-5f);
    EXPECT_GE(c(0), 0.0f);
    EXPECT_EQ(canonicalize_quaternion(c), c);
    EXPECT_TRUE(canonicalize_quaternion(-q).isApprox(c));
  }
  EXPECT_EQ(canonicalize_quaternion(Eigen::Vector4f::Zero()), Eigen::Vector4f(1, 0, 0, 0));
  EXPECT_NEAR(quaternion_yaw(yaw_quaternion(0.7)), 0.7, 1e-6);
}

TEST(Observe, ProprioEncodesGripperAndTime) {
  Env env(TaskKind::kPickAndLift, 0, 3);
  auto o = observe(env.state, env.spec);
  EXPECT_EQ(o.proprio, (std::array<float, 4>{1, 1, 1, 0}));
  env.act(Vec3(0.5, 0.5, 0.5), false);
  o = observe(env.state, env.spec);
  EXPECT_EQ(o.proprio, (std::array<float, 4>{0, 0, 0, 0.25f}));
}

TEST(Render, EmptySceneIsUniform) {
  SceneState s;
  s.gripper.position = Vec3(2.0, 2.0, 0.3);  // off-screen for fixed cameras
  for (Camera c : {Camera::kTop, Camera::kLeftOblique}) {
    auto img = render(s, c);
    for (std::size_t i = 0; i < img.size(); i += 3) {
      ASSERT_EQ(img[i], kBackground[0]);
      ASSERT_EQ(img[i + 1], kBackground[1]);
      ASSERT_EQ(img[i + 2], kBackground[2]);
    }
  }
}

TEST(Render, Deterministic) {
  Env env(TaskKind::kStackBlocks, 7, 12);
  for (Camera c : kAllCameras) EXPECT_EQ(render(env.state, c), render(env.state, c));
}

TEST(Render, TopCameraShiftMatchesProjection) {
  SceneState s;
  s.gripper.position = Vec3(0.9, 0.9, 0.3);
  s.objects.push_back(Object{ObjectKind::kBlock, 0, Vec3(0.5, 0.4, 0.0)});
  const Blob before = find_blob(render(s, Camera::kTop), palette(0));
  s.objects[0].position.x() += 0.1;
  const Blob after = find_blob(render(s, Camera::kTop), palette(0));
  ASSERT_GT(before.count, 0);
  EXPECT_EQ(after.umin - before.umin, static_cast<int>(std::lround(0.1 * kImageSize)));
  EXPECT_EQ(after.vmin, before.vmin);
  EXPECT_EQ(after.count, before.count);
}

TEST(Render, HeldObjectTracksGripperInEveryCamera) {
  Env env(TaskKind::kPickAndLift, 1, 6);
  Vec3 b = env.find(ObjectKind::kBlock, 1).position;
  env.act(b, false);
  for (Vec3 p : {Vec3(0.3, 0.7, 0.3), Vec3(0.8, 0.2, 0.4)}) {
    env.act(p, false);
    for (Camera c : kAllCameras) {
      const Pixel at = project(p, c, env.state.gripper.position);
      const Blob blob = find_blob(render(env.state, c), palette(1));
      ASSERT_GT(blob.count, 0) << camera_name(c);
      EXPECT_LE(blob.umin, at.u);
      EXPECT_GE(blob.umax, at.u - 1);
      EXPECT_LE(blob.vmin, at.v);
      EXPECT_GE(blob.vmax, at.v - 1);
    }
  }
}

TEST(Render, PpmIsValidP6) {
  itrl::test::TempDir dir;
  Env env(TaskKind::kPushButtons, 10, 1);
  const auto img = render(env.state, Camera::kLeftOblique);
  write_ppm(dir.path() / "a.ppm", img);
  const std::string bytes = itrl::test::read_bytes(dir.path() / "a.ppm");
  const std::string header = "P6\n32 32\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(bytes.size(), header.size() + 32 * 32 * 3);
  EXPECT_EQ(bytes.substr(header.size()), std::string(img.begin(), img.end()));
}

TEST(Expert, SolvesEveryTaskWithinHorizon) {
  for (auto task : kAllTasks) {
    for (int ep = 0; ep < 200; ++ep) {
      const int v = ep % variation_count(task);
      auto rec = expert_episode(task, v, static_cast<std::uint64_t>(ep) * 7919 + 1);
      ASSERT_TRUE(rec.has_value()) << task_name(task) << " variation " << v;
      EXPECT_LE(static_cast<int>(rec->steps.size()), task_spec(task).max_steps);
    }
  }
}

TEST(Expert, StepCounts) {
  EXPECT_EQ(expert_episode(TaskKind::kReachTarget, 3, 1)->steps.size(), 1u);
  const std::vector<int> three{2, 0, 5};
  EXPECT_EQ(expert_episode(TaskKind::kPushButtons, push_buttons_variation_id(three), 1)->steps.size(), 3u);
  EXPECT_EQ(expert_episode(TaskKind::kPickAndLift, 3, 1)->steps.size(), 2u);
  EXPECT_EQ(expert_episode(TaskKind::kStackBlocks, 0, 1)->steps.size(), 4u);  // two red cubes
  EXPECT_EQ(expert_episode(TaskKind::kStackBlocks, 2, 1)->steps.size(), 8u);  // four red cubes
}

TEST(Expert, PushButtonsTargetsTableHeight) {
  const std::vector<int> order{1, 2, 3};
  Env env(TaskKind::kPushButtons, push_buttons_variation_id(order), 4);
  auto a = expert_action(env.state, env.spec, env.var);
  EXPECT_EQ(a.position.z(), 0.0f);
  EXPECT_TRUE(a.position.head<2>().isApprox(env.find(ObjectKind::kButton, 1).position.head<2>().cast<float>()));
}

TEST(Expert, RejectsTerminalState) {
  Env env(TaskKind::kReachTarget, 0, 2);
  env.act(env.find(ObjectKind::kTarget, 0).position, true);
  EXPECT_THROW(expert_action(env.state, env.spec, env.var), Error);
}

TEST(Instruction, Templates) {
  const auto stack = make_variation(TaskKind::kStackBlocks, 1);  // red, three cubes
  EXPECT_EQ(make_instruction(task_spec(TaskKind::kStackBlocks), stack), "place 3 of the red cubes on top of each other");
  const std::vector<int> order{4, 0, 7};
  const auto push = make_variation(TaskKind::kPushButtons, push_buttons_variation_id(order));
  const auto spec = task_spec(TaskKind::kPushButtons);
  const std::string s = make_instruction(spec, push, InstructionStyle::kLong);
  EXPECT_EQ(s, make_instruction(spec, push, InstructionStyle::kLong));
  std::size_t at = 0;
  for (int c : order) {
    const std::string clause = "then push " + std::string(color_name(c)) + " button down";
    const auto found = s.find(clause, at);
    ASSERT_NE(found, std::string::npos) << clause;
    at = found + clause.size();
  }
  EXPECT_EQ(s.find("move the white gripper closer to cyan button"), 0u);
}

TEST(Caption, Templates) {
  SceneState s;
  EXPECT_EQ(generate_caption(s), "an empty table");
  s.objects.push_back(Object{ObjectKind::kButton, 0, Vec3(0.2, 0.5, 0.0)});
  EXPECT_EQ(generate_caption(s), "a red button on the left");
  s.objects.push_back(Object{ObjectKind::kBlock, 6, Vec3(0.5, 0.9, 0.0)});
  EXPECT_EQ(generate_caption(s), "a red button on the left and an orange block in the far center");
}

TEST(Caption, VocabularyCoversCaptions) {
  auto vocab = text::build_vocab(grammar_corpus());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto task = kAllTasks[seed % 4];
    Env env(task, static_cast<int>(seed) % variation_count(task), seed);
    while (!is_terminal(env.state, env.spec, env.var)) {
      auto seq = text::encode(generate_caption(env.state), vocab, 128);
      EXPECT_EQ(std::count(seq.ids.begin(), seq.ids.end(), text::kUnk), 0);
      env.state = step(env.state, env.spec, env.var, expert_action(env.state, env.spec, env.var)).state;
    }
  }
}

TEST(Dataset, EpisodeRoundTripIsBitwise) {
  itrl::test::TempDir dir;
  auto rec = *expert_episode(TaskKind::kStackBlocks, 4, 99);
  write_episode(dir.path() / "a.bwep", rec);
  auto back = read_episode(dir.path() / "a.bwep");
  EXPECT_EQ(back, rec);
  write_episode(dir.path() / "b.bwep", back);
  EXPECT_EQ(itrl::test::read_bytes(dir.path() / "a.bwep"), itrl::test::read_bytes(dir.path() / "b.bwep"));
  const std::size_t expect = 4 + 1 + 2 + 2 + 4 + rec.instruction.size() + 1 + rec.steps.size() * (3 * 3072 + 48);
  EXPECT_EQ(itrl::test::read_bytes(dir.path() / "a.bwep").size(), expect);
}

TEST(Dataset, ReachTargetTenEpisodes) {
  itrl::test::TempDir dir;
  DatasetConfig cfg;
  cfg.plans = {TaskPlan{TaskKind::kReachTarget, {3}, {}, {}}};
  cfg.episodes_per_variation = 10;
  cfg.seed = 5;
  auto m = generate_dataset(cfg, dir.path() / "d");
  ASSERT_EQ(m.variations.size(), 1u);
  EXPECT_EQ(m.variations[0].episodes, 10);
  EXPECT_EQ(m.variations[0].failures, 0);
  auto d = load_dataset(dir.path() / "d");
  EXPECT_EQ(d.episodes.size(), 10u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "d" / "vocab.txt"));
}

TEST(Dataset, FixedSeedGivesIdenticalFiles) {
  itrl::test::TempDir dir;
  DatasetConfig cfg;
  cfg.plans = {all_variations(TaskKind::kPickAndLift)};
  cfg.episodes_per_variation = 2;
  cfg.seed = 17;
  cfg.workers = 3;
  auto m1 = generate_dataset(cfg, dir.path() / "a");
  cfg.workers = 1;
  auto m2 = generate_dataset(cfg, dir.path() / "b");
  ASSERT_EQ(m1.episodes.size(), m2.episodes.size());
  for (const auto& e : m1.episodes)
    EXPECT_EQ(itrl::test::read_bytes(dir.path() / "a" / e.file), itrl::test::read_bytes(dir.path() / "b" / e.file));
  EXPECT_EQ(itrl::test::read_bytes(dir.path() / "a" / "manifest.json"),
            itrl::test::read_bytes(dir.path() / "b" / "manifest.json"));
}

TEST(Dataset, HeldOutOrderingsMarkedUnseen) {
  itrl::test::TempDir dir;
  auto plan = push_buttons_plan({0, 1, 2, 3}, 6, 1);
  EXPECT_EQ(plan.seen.size(), 18u);
  EXPECT_EQ(plan.unseen.size(), 6u);
  DatasetConfig cfg;
  cfg.plans = {plan};
  cfg.episodes_per_variation = 1;
  auto m = generate_dataset(cfg, dir.path());
  auto back = Manifest::load(dir.path() / "manifest.json");
  auto unseen = back.variations_with_split(TaskKind::kPushButtons, "unseen");
  EXPECT_EQ(unseen, plan.unseen);
  for (const auto& v : back.variations)
    if (v.split == "unseen") {
      EXPECT_EQ(v.holdout, "ordering");
      EXPECT_EQ(v.episodes, 0);
    }
  for (const auto& e : back.episodes)
    EXPECT_EQ(std::count(plan.unseen.begin(), plan.unseen.end(), e.variation), 0);

  auto with_color = push_buttons_plan({0, 1, 2, 3}, 6, 1, 4);
  EXPECT_EQ(with_color.unseen.size(), 6u + 36u);  // 60 triples over five colours minus 24
  ASSERT_EQ(with_color.holdout.size(), with_color.unseen.size());
  EXPECT_EQ(std::count(with_color.holdout.begin(), with_color.holdout.end(), "color"), 36);
  for (std::size_t i = 0; i < with_color.unseen.size(); ++i) {
    const auto colors = make_variation(TaskKind::kPushButtons, with_color.unseen[i]).colors;
    const bool uses_held = std::count(colors.begin(), colors.end(), 4) > 0;
    EXPECT_EQ(with_color.holdout[i], uses_held ? "color" : "ordering");
  }
}

TEST(Dataset, EpisodesPerTaskSpreadsOverVariations) {
  itrl::test::TempDir dir;
  DatasetConfig cfg;
  cfg.plans = {all_variations(TaskKind::kReachTarget)};
  cfg.episodes_per_task = 20;
  auto m = generate_dataset(cfg, dir.path());
  EXPECT_EQ(m.episodes.size(), 20u);
  EXPECT_EQ(m.variations[0].episodes, 3);
  EXPECT_EQ(m.variations[7].episodes, 2);
}

TEST(Dataset, CaptionCorpusRoundTrip) {
  itrl::test::TempDir dir;
  auto pairs = make_caption_corpus(40, 3, 2);
  EXPECT_EQ(pairs, make_caption_corpus(40, 3, 1));
  write_corpus(dir.path() / "c.bwcp", pairs);
  EXPECT_EQ(read_corpus(dir.path() / "c.bwcp"), pairs);
}
