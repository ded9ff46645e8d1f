#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "itrl/blockworld.hpp"

namespace itrl::bw {

inline constexpr std::uint8_t kEpisodeVersion = 1;

struct EpisodeStep {
  Observation obs;
  Action action;
  bool operator==(const EpisodeStep&) const = default;
};

struct EpisodeRecord {
  TaskKind task = TaskKind::kReachTarget;
  int variation = 0;
  std::string instruction;
  std::vector<EpisodeStep> steps;
  bool operator==(const EpisodeRecord&) const = default;
};

void write_episode(std::ostream& os, const EpisodeRecord& ep);
EpisodeRecord read_episode(std::istream& is);
void write_episode(const std::filesystem::path& path, const EpisodeRecord& ep);
EpisodeRecord read_episode(const std::filesystem::path& path);

// Rolls out the scripted expert; nullopt if it fails to reach success in T steps.
std::optional<EpisodeRecord> expert_episode(TaskKind task, int variation, std::uint64_t seed,
                                            InstructionStyle style = InstructionStyle::kDefault);

// Which variations of one task are trained on and which are held out.
// `holdout[i]` labels why unseen[i] is unseen ("ordering", "color").
struct TaskPlan {
  TaskKind task = TaskKind::kReachTarget;
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<std::string> holdout;
};

TaskPlan all_variations(TaskKind task);

// PushButtons generalization split over ordered triples of `colors`:
// `holdout_orderings` randomly chosen orderings become unseen ("ordering"),
// and if `held_out_color` is set, every triple that uses it alongside the
// base colours is unseen ("color").
TaskPlan push_buttons_plan(const std::vector<int>& colors, int holdout_orderings, std::uint64_t seed,
                           std::optional<int> held_out_color = std::nullopt);

struct VariationEntry {
  TaskKind task = TaskKind::kReachTarget;
  int variation = 0;
  std::string split;    // "seen" or "unseen"
  std::string holdout;  // empty for seen variations
  std::string instruction;
  int episodes = 0;
  int failures = 0;
};

struct EpisodeEntry {
  std::string file;  // relative to the dataset directory
  TaskKind task = TaskKind::kReachTarget;
  int variation = 0;
  std::uint64_t seed = 0;
  int steps = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  InstructionStyle style = InstructionStyle::kDefault;
  std::vector<VariationEntry> variations;
  std::vector<EpisodeEntry> episodes;

  std::vector<int> variations_with_split(TaskKind task, std::string_view split) const;
  std::vector<TaskKind> tasks() const;

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

struct DatasetConfig {
  std::vector<TaskPlan> plans;
  int episodes_per_variation = 10;
  // When positive, this many episodes per task are spread round-robin over
  // the seen variations instead.
  int episodes_per_task = 0;
  std::uint64_t seed = 0;
  InstructionStyle style = InstructionStyle::kDefault;
  int workers = 1;
};

// Writes episodes/<task>_v<variation>_<index>.bwep, manifest.json and
// vocab.txt under `out`. Failed expert rollouts are dropped, counted in the
// manifest and reported on `log`.
Manifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out, std::ostream* log = nullptr);

struct Dataset {
  Manifest manifest;
  std::vector<EpisodeRecord> episodes;
};

Dataset load_dataset(const std::filesystem::path& dir);

// Scene image / caption pairs for encoder pretraining.
struct CaptionPair {
  Camera camera = Camera::kTop;
  Image image{};
  std::string caption;
  bool operator==(const CaptionPair&) const = default;
};

std::vector<CaptionPair> make_caption_corpus(int count, std::uint64_t seed, int workers = 1);
void write_corpus(const std::filesystem::path& path, const std::vector<CaptionPair>& pairs);
std::vector<CaptionPair> read_corpus(const std::filesystem::path& path);

}  // namespace itrl::bw
