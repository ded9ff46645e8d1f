#pragma once

// Closed-loop evaluation: controllers, seen/unseen rollouts, result tables,
// reports and the one-axis-at-a-time ablation runner.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "itrl/agent.hpp"
#include "itrl/dataset.hpp"
#include "itrl/train.hpp"

namespace itrl::eval {

enum class Split { kSeen, kUnseen };
// kNone replaces every instruction with an all-<pad> sequence.
enum class Style { kDefault, kLong, kNone };

std::string_view split_name(Split s);
std::string_view style_name(Style s);
Split parse_split(std::string_view name);
Style parse_style(std::string_view name);

struct EvalConfig {
  int episodes = 100;  // per seed and task
  int seeds = 3;
  std::vector<bw::TaskKind> tasks;  // empty: every task in the manifest
  Split split = Split::kSeen;
  Style style = Style::kDefault;
  std::string holdout;  // unseen split only: restrict to one holdout label
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

struct EpisodeContext {
  bw::TaskSpec task;
  bw::VariationSpec variation;
  std::string instruction;  // as generated; empty under Style::kNone
  std::uint64_t seed = 0;
};

// One controller instance drives one episode at a time.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void begin(const EpisodeContext& ctx, const bw::SceneState& state) = 0;
  virtual bw::Action act(const bw::SceneState& state, const bw::Observation& obs) = 0;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

// Scripted expert; reads the true scene state.
ControllerFactory expert_controller();

enum class RandomMode {
  kUniform,  // position uniform in the unit cube, random yaw and gripper
  kObjects,  // moves to a uniformly chosen scene object at table height, random gripper
};
ControllerFactory random_controller(RandomMode mode);

// Runs a trained agent from its observations, proprioception and executed actions.
ControllerFactory learned_controller(const model::Agent& agent);

struct ResultRow {
  std::string task;
  std::vector<std::pair<std::string, std::string>> condition;  // ordered key=value labels
  std::vector<double> seed_success;                           // % per seed
  int episodes = 0;                                           // over all seeds

  double mean() const;
  double standard_error() const;
  std::string condition_string() const;  // "k=v k=v"
  bool operator==(const ResultRow&) const = default;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<std::string> notes;  // aborted ablation cells and similar

  void append(const ResultTable& other);
  bool operator==(const ResultTable&) const = default;
};

// Episodes of seed s use environment seeds derived from (cfg.seed, s, task,
// episode); variations cycle round-robin over the split's variation list.
// `labels` prefix every row's condition. Lines naming the variations each row
// drew from go to `log`.
ResultTable rollout_eval(const ControllerFactory& controller, const bw::Manifest& manifest, const EvalConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& labels = {},
                         std::ostream* log = nullptr);

ResultTable rollout_eval(const model::Agent& agent, const bw::Manifest& manifest, const EvalConfig& cfg,
                         const std::vector<std::pair<std::string, std::string>>& labels = {},
                         std::ostream* log = nullptr);

// Analytic success rate of RandomMode::kUniform on ReachTarget.
double reach_uniform_chance();

enum class ReportFormat { kCsv, kMarkdown };
ReportFormat parse_format(std::string_view name);
std::string format_report(const ResultTable& table, ReportFormat format);
void emit_report(const ResultTable& table, ReportFormat format, const std::filesystem::path& path);

// Settings shared by every ablation cell unless its axis overrides them.
struct AblationBase {
  std::string preset = "small";
  model::Fusion fusion = model::Fusion::kJoint;
  int context = 4;
  model::Selection selection = model::Selection::kConcatAll;
  bool instructions = true;
  std::string encoder_checkpoint;  // empty: scratch
  model::PolicyConfig policy;      // feature_dim and context are derived per cell
  std::uint64_t seed = 0;
};

enum class Axis { kFusion, kContext, kFeatures, kInstructions, kEncoderInit, kPreset };
std::string_view axis_name(Axis a);
Axis parse_axis(std::string_view name);

struct AblationMatrix {
  std::vector<Axis> axes;  // each expands to its full value list

  static AblationMatrix standard();  // every axis but encoder init
  static std::vector<std::string> values(Axis a);
};

struct AblationCell {
  Axis axis = Axis::kFusion;
  std::string value;
  model::AgentSpec spec;
  std::string encoder_checkpoint;  // empty: scratch
  std::string key;                 // identifies cells that train the same model
};

// Cells in matrix order; a value equal to the base shares the base's key.
std::vector<AblationCell> expand_ablation(const AblationMatrix& matrix, const AblationBase& base,
                                          const text::Vocabulary& vocab);

// Policy token count per window C * (K + 5), measured on a forward pass.
int measured_window_tokens(const model::Agent& agent);

// Trains and evaluates every distinct cell. Each cell's agent, metrics and
// per-task reports go to out/<axis>-<value>/ when `out` is non-empty. A cell
// whose training throws is recorded in the table's notes and skipped.
ResultTable run_ablation(const AblationMatrix& matrix, const AblationBase& base, const train::TrainConfig& train_cfg,
                         const bw::Dataset& data, const text::Vocabulary& vocab, const EvalConfig& eval_cfg,
                         const std::filesystem::path& out = {}, std::ostream* log = nullptr);

}  // namespace itrl::eval
