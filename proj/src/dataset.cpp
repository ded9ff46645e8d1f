#include "itrl/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>

#include "itrl/binary_io.hpp"
#include "itrl/parallel.hpp"
#include "itrl/render.hpp"
#include "itrl/text.hpp"

namespace itrl::bw {

namespace fs = std::filesystem;

void write_episode(std::ostream& os, const EpisodeRecord& ep) {
  if (ep.steps.size() > 255) throw Error("episode has too many steps for the format");
  os.write("BWEP", 4);
  bin::put<std::uint8_t>(os, kEpisodeVersion);
  bin::put<std::uint16_t>(os, static_cast<std::uint16_t>(ep.task));
  bin::put<std::uint16_t>(os, static_cast<std::uint16_t>(ep.variation));
  bin::put_string(os, ep.instruction);
  bin::put<std::uint8_t>(os, static_cast<std::uint8_t>(ep.steps.size()));
  for (const auto& st : ep.steps) {
    for (const auto& img : st.obs.images) bin::put_bytes(os, img.data(), img.size());
    for (float f : st.obs.proprio) bin::put<float>(os, f);
    for (float f : st.action.to_array()) bin::put<float>(os, f);
  }
}

EpisodeRecord read_episode(std::istream& is) {
  bin::expect_magic(is, "BWEP", "episode");
  const auto version = bin::get<std::uint8_t>(is);
  if (version != kEpisodeVersion) throw IoError("episode: unsupported version " + std::to_string(version));
  EpisodeRecord ep;
  const auto task = bin::get<std::uint16_t>(is);
  if (task > 3) throw IoError("episode: unknown task id " + std::to_string(task));
  ep.task = static_cast<TaskKind>(task);
  ep.variation = bin::get<std::uint16_t>(is);
  ep.instruction = bin::get_string(is, 1u << 16);
  const auto n = bin::get<std::uint8_t>(is);
  ep.steps.resize(n);
  for (auto& st : ep.steps) {
    for (auto& img : st.obs.images) bin::get_bytes(is, img.data(), img.size());
    for (float& f : st.obs.proprio) f = bin::get<float>(is);
    std::array<float, kActionDim> a;
    for (float& f : a) f = bin::get<float>(is);
    st.action = Action::from_array(a);
  }
  return ep;
}

void write_episode(const fs::path& path, const EpisodeRecord& ep) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write episode: " + path.string());
  write_episode(os, ep);
  if (!os) throw IoError("failed writing episode: " + path.string());
}

EpisodeRecord read_episode(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read episode: " + path.string());
  try {
    return read_episode(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::optional<EpisodeRecord> expert_episode(TaskKind task, int variation, std::uint64_t seed, InstructionStyle style) {
  const TaskSpec spec = task_spec(task);
  const VariationSpec var = make_variation(task, variation);
  auto [state, instruction] = reset(spec, var, seed, style);
  EpisodeRecord ep{task, variation, instruction, {}};
  while (!is_terminal(state, spec, var)) {
    const Action a = expert_action(state, spec, var);
    ep.steps.push_back({observe(state, spec), a});
    state = step(state, spec, var, a).state;
  }
  if (!is_success(state, var)) return std::nullopt;
  return ep;
}

TaskPlan all_variations(TaskKind task) {
  TaskPlan plan{task, {}, {}, {}};
  for (int v = 0; v < variation_count(task); ++v) plan.seen.push_back(v);
  return plan;
}

TaskPlan push_buttons_plan(const std::vector<int>& colors, int holdout_orderings, std::uint64_t seed,
                           std::optional<int> held_out_color) {
  if (colors.size() < 3) throw ConfigError("push_buttons_plan needs at least 3 colours");
  std::vector<int> triples;
  for (int a : colors)
    for (int b : colors)
      for (int c : colors)
        if (a != b && a != c && b != c) triples.push_back(push_buttons_variation_id(std::vector<int>{a, b, c}));
  if (holdout_orderings < 0 || holdout_orderings >= static_cast<int>(triples.size()))
    throw ConfigError("holdout_orderings must leave at least one seen ordering");
  std::mt19937_64 rng(seed);
  std::shuffle(triples.begin(), triples.end(), rng);
  TaskPlan plan{TaskKind::kPushButtons, {}, {}, {}};
  plan.unseen.assign(triples.begin(), triples.begin() + holdout_orderings);
  plan.seen.assign(triples.begin() + holdout_orderings, triples.end());
  std::sort(plan.seen.begin(), plan.seen.end());
  std::sort(plan.unseen.begin(), plan.unseen.end());
  plan.holdout.assign(plan.unseen.size(), "ordering");
  if (held_out_color) {
    if (std::find(colors.begin(), colors.end(), *held_out_color) != colors.end())
      throw ConfigError("held-out colour must not be one of the base colours");
    std::vector<int> ext = colors;
    ext.push_back(*held_out_color);
    for (int a : ext)
      for (int b : ext)
        for (int c : ext)
          if (a != b && a != c && b != c && (a == *held_out_color || b == *held_out_color || c == *held_out_color)) {
            plan.unseen.push_back(push_buttons_variation_id(std::vector<int>{a, b, c}));
            plan.holdout.push_back("color");
          }
  }
  return plan;
}

std::vector<int> Manifest::variations_with_split(TaskKind task, std::string_view split) const {
  std::vector<int> out;
  for (const auto& v : variations)
    if (v.task == task && v.split == split) out.push_back(v.variation);
  return out;
}

std::vector<TaskKind> Manifest::tasks() const {
  std::vector<TaskKind> out;
  for (const auto& v : variations)
    if (std::find(out.begin(), out.end(), v.task) == out.end()) out.push_back(v.task);
  return out;
}

void Manifest::save(const fs::path& path) const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["instruction_style"] = style == InstructionStyle::kLong ? "long" : "default";
  j["variations"] = nlohmann::ordered_json::array();
  for (const auto& v : variations) {
    j["variations"].push_back({{"task", task_name(v.task)},
                               {"variation", v.variation},
                               {"split", v.split},
                               {"holdout", v.holdout},
                               {"instruction", v.instruction},
                               {"episodes", v.episodes},
                               {"failures", v.failures}});
  }
  j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& e : episodes) {
    j["episodes"].push_back(
        {{"file", e.file}, {"task", task_name(e.task)}, {"variation", e.variation}, {"seed", e.seed}, {"steps", e.steps}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << j.dump(2) << '\n';
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest: " + path.string());
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(is);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.style = parse_style(j.at("instruction_style").get<std::string>());
    for (const auto& v : j.at("variations")) {
      m.variations.push_back({parse_task(v.at("task").get<std::string>()), v.at("variation").get<int>(),
                              v.at("split").get<std::string>(), v.at("holdout").get<std::string>(),
                              v.at("instruction").get<std::string>(), v.at("episodes").get<int>(),
                              v.at("failures").get<int>()});
    }
    for (const auto& e : j.at("episodes")) {
      m.episodes.push_back({e.at("file").get<std::string>(), parse_task(e.at("task").get<std::string>()),
                            e.at("variation").get<int>(), e.at("seed").get<std::uint64_t>(), e.at("steps").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

Manifest generate_dataset(const DatasetConfig& cfg, const fs::path& out, std::ostream* log) {
  if (cfg.episodes_per_variation < 1 && cfg.episodes_per_task < 1)
    throw ConfigError("episodes per variation must be at least 1");
  if (cfg.plans.empty()) throw ConfigError("dataset needs at least one task");

  struct Job {
    TaskKind task;
    int variation;
    int index;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  Manifest m;
  m.seed = cfg.seed;
  m.style = cfg.style;
  for (const auto& plan : cfg.plans) {
    const TaskSpec spec = task_spec(plan.task);
    if (plan.seen.empty()) throw ConfigError(std::string(task_name(plan.task)) + ": no seen variations");
    std::vector<int> per(plan.seen.size(), cfg.episodes_per_variation);
    if (cfg.episodes_per_task > 0) {
      std::fill(per.begin(), per.end(), 0);
      for (int e = 0; e < cfg.episodes_per_task; ++e) ++per[static_cast<std::size_t>(e) % per.size()];
    }
    for (std::size_t i = 0; i < plan.seen.size(); ++i) {
      const int v = plan.seen[i];
      m.variations.push_back(
          {plan.task, v, "seen", "", make_instruction(spec, make_variation(plan.task, v), cfg.style), 0, 0});
      for (int e = 0; e < per[i]; ++e) {
        const auto s = mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(plan.task) * 100000 + static_cast<std::uint64_t>(v)),
                                static_cast<std::uint64_t>(e));
        jobs.push_back({plan.task, v, e, s});
      }
    }
    if (plan.holdout.size() != plan.unseen.size())
      throw ConfigError("task plan needs one holdout label per unseen variation");
    for (std::size_t i = 0; i < plan.unseen.size(); ++i) {
      const int v = plan.unseen[i];
      m.variations.push_back({plan.task, v, "unseen", plan.holdout[i],
                              make_instruction(spec, make_variation(plan.task, v), cfg.style), 0, 0});
    }
  }

  fs::create_directories(out / "episodes");
  std::vector<std::optional<EpisodeRecord>> results(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), cfg.workers, [&](int i) {
    const Job& j = jobs[static_cast<std::size_t>(i)];
    results[static_cast<std::size_t>(i)] = expert_episode(j.task, j.variation, j.seed, cfg.style);
  });

  int failures = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& j = jobs[i];
    auto entry = std::find_if(m.variations.begin(), m.variations.end(),
                              [&](const VariationEntry& v) { return v.task == j.task && v.variation == j.variation; });
    if (!results[i]) {
      ++entry->failures;
      ++failures;
      continue;
    }
    char name[96];
    std::snprintf(name, sizeof name, "%s_v%03d_%04d.bwep", std::string(task_name(j.task)).c_str(), j.variation, j.index);
    const std::string rel = std::string("episodes/") + name;
    write_episode(out / rel, *results[i]);
    ++entry->episodes;
    m.episodes.push_back({rel, j.task, j.variation, j.seed, static_cast<int>(results[i]->steps.size())});
  }
  if (failures > 0 && log)
    *log << "warning: expert failed on " << failures << " of " << jobs.size() << " episodes; they were discarded\n";

  m.save(out / "manifest.json");
  text::build_vocab(grammar_corpus()).save(out / "vocab.txt");
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = Manifest::load(dir / "manifest.json");
  d.episodes.reserve(d.manifest.episodes.size());
  for (const auto& e : d.manifest.episodes) {
    d.episodes.push_back(read_episode(dir / e.file));
    if (d.episodes.back().task != e.task || d.episodes.back().variation != e.variation)
      throw IoError(e.file + ": header disagrees with manifest");
  }
  return d;
}

std::vector<CaptionPair> make_caption_corpus(int count, std::uint64_t seed, int workers) {
  if (count < 1) throw ConfigError("caption corpus needs at least one pair");
  std::vector<CaptionPair> pairs(static_cast<std::size_t>(count));
  parallel_for(count, workers, [&](int i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const TaskKind task = kAllTasks[rng() % kAllTasks.size()];
    const TaskSpec spec = task_spec(task);
    const VariationSpec var = make_variation(task, static_cast<int>(rng() % static_cast<std::uint64_t>(variation_count(task))));
    SceneState s = reset(spec, var, rng()).state;
    const auto k = rng() % static_cast<std::uint64_t>(spec.max_steps);
    for (std::uint64_t n = 0; n < k && !is_terminal(s, spec, var); ++n) s = step(s, spec, var, expert_action(s, spec, var)).state;
    auto& p = pairs[static_cast<std::size_t>(i)];
    p.camera = kAllCameras[rng() % kAllCameras.size()];
    p.image = render(s, p.camera);
    p.caption = generate_caption(s);
  });
  return pairs;
}

void write_corpus(const fs::path& path, const std::vector<CaptionPair>& pairs) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write corpus: " + path.string());
  os.write("BWCP", 4);
  bin::put<std::uint8_t>(os, 1);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(pairs.size()));
  for (const auto& p : pairs) {
    bin::put<std::uint8_t>(os, static_cast<std::uint8_t>(p.camera));
    bin::put_bytes(os, p.image.data(), p.image.size());
    bin::put_string(os, p.caption);
  }
  if (!os) throw IoError("failed writing corpus: " + path.string());
}

std::vector<CaptionPair> read_corpus(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read corpus: " + path.string());
  bin::expect_magic(is, "BWCP", "corpus " + path.string());
  if (bin::get<std::uint8_t>(is) != 1) throw IoError("corpus " + path.string() + ": unsupported version");
  std::vector<CaptionPair> pairs(bin::get<std::uint32_t>(is));
  for (auto& p : pairs) {
    const auto cam = bin::get<std::uint8_t>(is);
    if (cam >= kCameras) throw IoError("corpus " + path.string() + ": bad camera id");
    p.camera = static_cast<Camera>(cam);
    bin::get_bytes(is, p.image.data(), p.image.size());
    p.caption = bin::get_string(is, 1u << 16);
  }
  return pairs;
}

}  // namespace itrl::bw
