#include "itrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "itrl/parallel.hpp"

namespace itrl::eval {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616cULL;

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

class ExpertController : public Controller {
 public:
  void begin(const EpisodeContext& ctx, const bw::SceneState&) override {
    task_ = ctx.task;
    variation_ = ctx.variation;
  }
  bw::Action act(const bw::SceneState& state, const bw::Observation&) override {
    return bw::expert_action(state, task_, variation_);
  }

 private:
  bw::TaskSpec task_;
  bw::VariationSpec variation_;
};

class RandomController : public Controller {
 public:
  explicit RandomController(RandomMode mode) : mode_(mode) {}
  void begin(const EpisodeContext& ctx, const bw::SceneState&) override { rng_.seed(bw::mix_seed(ctx.seed, 0x72616e64ULL)); }
  bw::Action act(const bw::SceneState& state, const bw::Observation&) override {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bw::Action a;
    if (mode_ == RandomMode::kUniform) {
      a.position = Eigen::Vector3f(static_cast<float>(u(rng_)), static_cast<float>(u(rng_)), static_cast<float>(u(rng_)));
    } else {
      const auto& o = state.objects[static_cast<std::size_t>(rng_() % state.objects.size())];
      a.position = Eigen::Vector3f(static_cast<float>(o.position.x()), static_cast<float>(o.position.y()), 0.f);
    }
    a.quaternion = bw::yaw_quaternion((u(rng_) * 2.0 - 1.0) * std::numbers::pi);
    a.gripper = u(rng_) < 0.5 ? 0.f : 1.f;
    return a;
  }

 private:
  RandomMode mode_;
  std::mt19937_64 rng_;
};

class LearnedController : public Controller {
 public:
  explicit LearnedController(const model::Agent& agent) : agent_(agent) {}

  void begin(const EpisodeContext& ctx, const bw::SceneState&) override {
    tokens_ = ctx.instruction.empty() ? text::blank(agent_.spec().encoder.n_max) : agent_.tokens(ctx.instruction);
    features_.clear();
    proprio_.clear();
    executed_.clear();
  }

  bw::Action act(const bw::SceneState&, const bw::Observation& obs) override {
    const auto& spec = agent_.spec();
    {
      std::vector<MatrixF> patches;
      patches.reserve(bw::kCameras);
      std::vector<model::EncoderInput<float>> inputs;
      for (const auto& img : obs.images) {
        patches.push_back(model::patchify(model::image_to_float<float>(img), spec.encoder.patch));
        inputs.push_back({&patches.back(), &tokens_});
      }
      Tape<float> tape;
      features_.push_back(model::agent_features(tape, agent_.params(), spec,
                                                std::span<const model::EncoderInput<float>>(inputs), false)
                              .value());
    }
    proprio_.push_back(obs.proprio);

    const int C = spec.policy.context;
    const int total = static_cast<int>(features_.size());
    const int n = std::min(C, total);
    const int first = total - n;
    const Index F = features_.front().cols();
    MatrixF feats(static_cast<Index>(n) * bw::kCameras, F);
    model::PolicyWindow<float> win;
    win.proprio.resize(n, bw::kProprioDim);
    win.past_actions.resize(n - 1, bw::kActionDim);
    for (int i = 0; i < n; ++i) {
      feats.middleRows(static_cast<Index>(i) * bw::kCameras, bw::kCameras) = features_[static_cast<std::size_t>(first + i)];
      for (int k = 0; k < bw::kCameras; ++k) win.feature_rows.push_back(i * bw::kCameras + k);
      for (int j = 0; j < bw::kProprioDim; ++j)
        win.proprio(i, j) = proprio_[static_cast<std::size_t>(first + i)][static_cast<std::size_t>(j)];
      if (i + 1 < n) win.past_actions.row(i) = executed_[static_cast<std::size_t>(first + i)];
    }
    Tape<float> tape;
    auto raw = model::policy_forward(tape, agent_.params(), spec.policy, tape.constant(std::move(feats)),
                                     std::span<const model::PolicyWindow<float>>(&win, 1));
    const Eigen::RowVectorXf out = raw.value().row(0);
    const bw::Action a = model::to_action(std::span<const float>(out.data(), static_cast<std::size_t>(out.size())));
    executed_.push_back(model::action_target(a));
    return a;
  }

 private:
  const model::Agent& agent_;
  text::TokenSeq tokens_;
  std::vector<MatrixF> features_;  // per step: one row per camera
  std::vector<std::array<float, bw::kProprioDim>> proprio_;
  std::vector<Eigen::RowVectorXf> executed_;
};

bool run_episode(Controller& c, EpisodeContext ctx, Style style) {
  const auto bw_style = style == Style::kLong ? bw::InstructionStyle::kLong : bw::InstructionStyle::kDefault;
  auto r = bw::reset(ctx.task, ctx.variation, ctx.seed, bw_style);
  ctx.instruction = style == Style::kNone ? std::string() : r.instruction;
  c.begin(ctx, r.state);
  bw::SceneState s = std::move(r.state);
  while (!bw::is_terminal(s, ctx.task, ctx.variation)) {
    const auto obs = bw::observe(s, ctx.task);
    s = bw::step(s, ctx.task, ctx.variation, c.act(s, obs)).state;
  }
  return bw::is_success(s, ctx.variation);
}

std::vector<int> split_variations(const bw::Manifest& m, bw::TaskKind task, const EvalConfig& cfg) {
  std::vector<int> out;
  const std::string split(split_name(cfg.split));
  for (const auto& v : m.variations) {
    if (v.task != task || v.split != split) continue;
    if (cfg.split == Split::kUnseen && !cfg.holdout.empty() && v.holdout != cfg.holdout) continue;
    out.push_back(v.variation);
  }
  if (out.empty())
    throw ConfigError("eval: manifest has no " + split + (cfg.holdout.empty() ? "" : " (" + cfg.holdout + ")") +
                      " variations for " + std::string(bw::task_name(task)));
  return out;
}

}  // namespace

std::string_view split_name(Split s) { return s == Split::kSeen ? "seen" : "unseen"; }

std::string_view style_name(Style s) {
  switch (s) {
    case Style::kDefault: return "default";
    case Style::kLong: return "long";
    case Style::kNone: return "none";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "seen") return Split::kSeen;
  if (name == "unseen") return Split::kUnseen;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected seen or unseen)");
}

Style parse_style(std::string_view name) {
  if (name == "default") return Style::kDefault;
  if (name == "long") return Style::kLong;
  if (name == "none") return Style::kNone;
  throw ConfigError("unknown instruction style '" + std::string(name) + "' (expected default, long or none)");
}

void EvalConfig::validate() const {
  if (episodes < 1) throw ConfigError("eval config: episodes must be >= 1");
  if (seeds < 1) throw ConfigError("eval config: seeds must be >= 1");
  if (workers < 1) throw ConfigError("eval config: workers must be >= 1");
  if (!holdout.empty() && split != Split::kUnseen) throw ConfigError("eval config: holdout needs the unseen split");
}

ControllerFactory expert_controller() {
  return [] { return std::make_unique<ExpertController>(); };
}

ControllerFactory random_controller(RandomMode mode) {
  return [mode] { return std::make_unique<RandomController>(mode); };
}

ControllerFactory learned_controller(const model::Agent& agent) {
  return [&agent] { return std::make_unique<LearnedController>(agent); };
}

double ResultRow::mean() const {
  if (seed_success.empty()) return 0;
  double s = 0;
  for (double v : seed_success) s += v;
  return s / static_cast<double>(seed_success.size());
}

double ResultRow::standard_error() const {
  const std::size_t n = seed_success.size();
  if (n < 2) return 0;
  const double m = mean();
  double ss = 0;
  for (double v : seed_success) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

std::string ResultRow::condition_string() const {
  std::string out;
  for (const auto& [k, v] : condition) out += (out.empty() ? "" : " ") + k + "=" + v;
  return out;
}

void ResultTable::append(const ResultTable& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  notes.insert(notes.end(), other.notes.begin(), other.notes.end());
}

ResultTable rollout_eval(const ControllerFactory& controller, const bw::Manifest& manifest, const EvalConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& labels, std::ostream* log) {
  cfg.validate();
  const auto tasks = cfg.tasks.empty() ? manifest.tasks() : cfg.tasks;
  if (tasks.empty()) throw ConfigError("eval: manifest lists no tasks");
  ResultTable table;
  for (bw::TaskKind task : tasks) {
    const auto vars = split_variations(manifest, task, cfg);
    ResultRow row;
    row.task = std::string(bw::task_name(task));
    row.condition = labels;
    row.condition.emplace_back("split", std::string(split_name(cfg.split)));
    row.condition.emplace_back("style", std::string(style_name(cfg.style)));
    if (log) {
      *log << "eval " << row.task << " " << row.condition_string() << " variations";
      for (int v : vars) *log << " " << v;
      *log << "\n";
    }
    const bw::TaskSpec spec = bw::task_spec(task);
    for (int s = 0; s < cfg.seeds; ++s) {
      const std::uint64_t seed_base =
          bw::mix_seed(bw::mix_seed(cfg.seed, kEvalStream + static_cast<std::uint64_t>(s)), static_cast<std::uint64_t>(task));
      std::vector<char> success(static_cast<std::size_t>(cfg.episodes), 0);
      parallel_for(cfg.episodes, cfg.workers, [&](int e) {
        EpisodeContext ctx;
        ctx.task = spec;
        ctx.variation = bw::make_variation(task, vars[static_cast<std::size_t>(e) % vars.size()]);
        ctx.seed = bw::mix_seed(seed_base, static_cast<std::uint64_t>(e));
        auto c = controller();
        success[static_cast<std::size_t>(e)] = run_episode(*c, ctx, cfg.style) ? 1 : 0;
      });
      const auto hits = std::count(success.begin(), success.end(), 1);
      row.seed_success.push_back(100.0 * static_cast<double>(hits) / cfg.episodes);
      row.episodes += cfg.episodes;
    }
    if (log) *log << "eval " << row.task << " mean " << fixed4(row.mean()) << "%\n";
    table.rows.push_back(std::move(row));
  }
  return table;
}

ResultTable rollout_eval(const model::Agent& agent, const bw::Manifest& manifest, const EvalConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& labels, std::ostream* log) {
  return rollout_eval(learned_controller(agent), manifest, cfg, labels, log);
}

double reach_uniform_chance() {
  // Targets sit at least kPlacementMargin from the border, so the whole
  // success disc lies inside the unit square.
  static_assert(bw::kPlacementMargin >= bw::kReachRadius);
  const double p = std::numbers::pi * bw::kReachRadius * bw::kReachRadius;
  return 1.0 - std::pow(1.0 - p, bw::task_spec(bw::TaskKind::kReachTarget).max_steps);
}

ReportFormat parse_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  throw ConfigError("unknown report format '" + std::string(name) + "' (expected csv or markdown)");
}

std::string format_report(const ResultTable& table, ReportFormat format) {
  if (table.rows.empty()) throw Error("report: result table is empty");
  std::ostringstream os;
  auto seeds = [](const ResultRow& r, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < r.seed_success.size(); ++i) out += (i ? sep : "") + fixed4(r.seed_success[i]);
    return out;
  };
  if (format == ReportFormat::kCsv) {
    os << "task,condition,mean_success,seed_successes,episodes\n";
    for (const auto& r : table.rows)
      os << r.task << ',' << r.condition_string() << ',' << fixed4(r.mean()) << ',' << seeds(r, ";") << ','
         << r.episodes << '\n';
    return os.str();
  }
  std::vector<std::string> tasks;
  for (const auto& r : table.rows)
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    os << (t ? "\n" : "") << "## " << tasks[t] << "\n\n"
       << "| condition | success % | std. error | per seed % | episodes |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& r : table.rows) {
      if (r.task != tasks[t]) continue;
      os << "| " << r.condition_string() << " | " << fixed4(r.mean()) << " | " << fixed4(r.standard_error()) << " | "
         << seeds(r, ", ") << " | " << r.episodes << " |\n";
    }
  }
  if (!table.notes.empty()) {
    os << "\n## notes\n\n";
    for (const auto& n : table.notes) os << "- " << n << "\n";
  }
  return os.str();
}

void emit_report(const ResultTable& table, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = format_report(table, format);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write report: " + path.string());
  os << text;
  if (!os) throw IoError("failed writing report: " + path.string());
}

std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::kFusion: return "fusion";
    case Axis::kContext: return "context";
    case Axis::kFeatures: return "features";
    case Axis::kInstructions: return "instructions";
    case Axis::kEncoderInit: return "encoder_init";
    case Axis::kPreset: return "preset";
  }
  return "unknown";
}

Axis parse_axis(std::string_view name) {
  for (Axis a : {Axis::kFusion, Axis::kContext, Axis::kFeatures, Axis::kInstructions, Axis::kEncoderInit, Axis::kPreset})
    if (axis_name(a) == name) return a;
  throw ConfigError("unknown ablation axis '" + std::string(name) +
                    "' (expected fusion, context, features, instructions, encoder_init or preset)");
}

AblationMatrix AblationMatrix::standard() {
  return {{Axis::kFusion, Axis::kContext, Axis::kFeatures, Axis::kInstructions, Axis::kPreset}};
}

std::vector<std::string> AblationMatrix::values(Axis a) {
  switch (a) {
    case Axis::kFusion: return {"joint", "concat", "film"};
    case Axis::kContext: return {"1", "2", "4", "8"};
    case Axis::kFeatures: return {"last", "second_to_last", "concat_last_half", "concat_first_half", "concat_all"};
    case Axis::kInstructions: return {"on", "off"};
    case Axis::kEncoderInit: return {"pretrained", "scratch"};
    case Axis::kPreset: return {"tiny", "small", "medium", "large"};
  }
  return {};
}

namespace {

// True when the checkpoint's encoder tensors fit an encoder of this shape.
bool checkpoint_fits(const std::string& path, const model::EncoderConfig& enc) {
  auto theirs = model::EncoderConfig::from_header(read_checkpoint(path).header);
  theirs.fusion = enc.fusion;
  theirs.preset = enc.preset;
  return theirs == enc;
}

}  // namespace

std::vector<AblationCell> expand_ablation(const AblationMatrix& matrix, const AblationBase& base,
                                          const text::Vocabulary& vocab) {
  if (matrix.axes.empty()) throw ConfigError("ablation: no axes selected");
  const int vocab_size = static_cast<int>(vocab.size());
  std::vector<AblationCell> cells;
  for (Axis axis : matrix.axes) {
    for (const auto& value : AblationMatrix::values(axis)) {
      std::string preset = base.preset;
      auto fusion = base.fusion;
      int context = base.context;
      auto selection = base.selection;
      bool instructions = base.instructions;
      std::string ckpt = base.encoder_checkpoint;
      switch (axis) {
        case Axis::kFusion: fusion = model::parse_fusion(value); break;
        case Axis::kContext: context = std::stoi(value); break;
        case Axis::kFeatures: selection = model::parse_selection(value); break;
        case Axis::kInstructions: instructions = value == "on"; break;
        case Axis::kEncoderInit:
          if (value == "pretrained" && base.encoder_checkpoint.empty())
            throw ConfigError("ablation: the encoder_init axis needs a pretrained encoder checkpoint");
          if (value == "scratch") ckpt.clear();
          break;
        case Axis::kPreset: preset = value; break;
      }
      auto enc = model::encoder_preset(preset, vocab_size);
      enc.fusion = fusion;
      if (!ckpt.empty() && !checkpoint_fits(ckpt, enc)) ckpt.clear();
      model::PolicyConfig pol = base.policy;
      pol.context = context;
      AblationCell cell;
      cell.axis = axis;
      cell.value = value;
      cell.spec = model::make_agent_spec(enc, pol, selection, instructions);
      cell.encoder_checkpoint = ckpt;
      cell.key = "preset=" + preset + " fusion=" + std::string(model::fusion_name(fusion)) +
                 " context=" + std::to_string(context) + " features=" + std::string(model::selection_name(selection)) +
                 " instructions=" + (instructions ? "on" : "off") + " init=" + (ckpt.empty() ? "scratch" : ckpt);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

int measured_window_tokens(const model::Agent& agent) {
  const auto& cfg = agent.spec().policy;
  Tape<float> tape;
  model::PolicyWindow<float> win;
  for (int i = 0; i < cfg.context * cfg.cameras; ++i) win.feature_rows.push_back(i);
  win.proprio = MatrixF::Zero(cfg.context, cfg.proprio_dim);
  win.past_actions = MatrixF::Zero(cfg.context - 1, cfg.action_dim);
  auto feats = tape.constant(MatrixF::Zero(static_cast<Index>(cfg.context) * cfg.cameras, cfg.feature_dim));
  auto x = model::policy_hidden(tape, agent.params(), cfg, feats, std::span<const model::PolicyWindow<float>>(&win, 1));
  return static_cast<int>(x.rows());
}

ResultTable run_ablation(const AblationMatrix& matrix, const AblationBase& base, const train::TrainConfig& train_cfg,
                         const bw::Dataset& data, const text::Vocabulary& vocab, const EvalConfig& eval_cfg,
                         const std::filesystem::path& out, std::ostream* log) {
  train_cfg.validate();
  eval_cfg.validate();
  const auto cells = expand_ablation(matrix, base, vocab);

  struct Outcome {
    ResultTable table;
    std::string error;
    int tokens = 0;
  };
  std::map<std::string, Outcome> done;
  ResultTable result;
  const std::string seed_range =
      "seeds" + std::to_string(eval_cfg.seed) + "-" + std::to_string(eval_cfg.seed + static_cast<std::uint64_t>(eval_cfg.seeds) - 1);

  for (const auto& cell : cells) {
    const std::string name = std::string(axis_name(cell.axis)) + "-" + cell.value;
    const std::filesystem::path dir = out.empty() ? out : out / name;
    auto it = done.find(cell.key);
    if (it == done.end()) {
      if (log) *log << "ablation cell " << name << ": " << cell.key << "\n";
      Outcome o;
      try {
        model::Agent agent(cell.spec, vocab, base.seed);
        if (!cell.encoder_checkpoint.empty()) agent.load_encoder(cell.encoder_checkpoint);
        o.tokens = measured_window_tokens(agent);
        const int expected = cell.spec.policy.context * (cell.spec.policy.cameras + 5);
        if (o.tokens != expected)
          throw Error("policy window has " + std::to_string(o.tokens) + " tokens, expected C*(K+5) = " +
                      std::to_string(expected));
        train::train_bc(agent, data, train_cfg, dir, log);
        o.table = rollout_eval(agent, data.manifest, eval_cfg, {}, log);
      } catch (const std::exception& e) {
        o.error = e.what();
        if (log) *log << "ablation cell " << name << " aborted: " << o.error << "\n";
      }
      it = done.emplace(cell.key, std::move(o)).first;
    } else if (log) {
      *log << "ablation cell " << name << " shares its model with an earlier cell\n";
    }
    const Outcome& o = it->second;
    if (!o.error.empty()) {
      result.notes.push_back("aborted " + name + ": " + o.error);
      continue;
    }
    ResultTable cell_table;
    for (auto row : o.table.rows) {
      std::vector<std::pair<std::string, std::string>> cond = {
          {"axis", std::string(axis_name(cell.axis))},
          {"value", cell.value},
          {"init", cell.encoder_checkpoint.empty() ? "scratch" : "pretrained"},
          {"tokens", std::to_string(o.tokens)}};
      cond.insert(cond.end(), row.condition.begin(), row.condition.end());
      row.condition = std::move(cond);
      cell_table.rows.push_back(row);
      if (!out.empty()) {
        ResultTable one;
        one.rows.push_back(row);
        emit_report(one, ReportFormat::kCsv, dir / (row.task + "_" + name + "_" + seed_range + ".csv"));
      }
    }
    result.append(cell_table);
  }
  return result;
}

}  // namespace itrl::eval
