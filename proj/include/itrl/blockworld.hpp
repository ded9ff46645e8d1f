#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itrl/error.hpp"

namespace itrl::bw {

inline constexpr int kCameras = 3;
inline constexpr int kImageSize = 32;
inline constexpr int kImageBytes = kImageSize * kImageSize * 3;
inline constexpr int kProprioDim = 4;
inline constexpr int kActionDim = 8;
inline constexpr int kPaletteSize = 8;

inline constexpr double kGraspRadius = 0.05;
inline constexpr double kPressRadius = 0.05;
inline constexpr double kPressHeight = 0.02;
inline constexpr double kStackTolerance = 0.05;
inline constexpr double kLiftThreshold = 0.25;
inline constexpr double kReachRadius = 0.05;
inline constexpr double kMinSeparation = 0.15;
inline constexpr double kBlockHeight = 0.05;
inline constexpr double kPlacementMargin = 0.1;
inline constexpr int kMaxPlacementSamples = 1000;

using Vec3 = Eigen::Vector3d;

enum class ObjectKind : std::uint8_t { kButton, kBlock, kTarget };
enum class TaskKind : std::uint8_t { kReachTarget = 0, kPushButtons = 1, kPickAndLift = 2, kStackBlocks = 3 };
enum class Camera : std::uint8_t { kTop = 0, kLeftOblique = 1, kWrist = 2 };
enum class InstructionStyle : std::uint8_t { kDefault, kLong };

inline constexpr std::array<TaskKind, 4> kAllTasks = {TaskKind::kReachTarget, TaskKind::kPushButtons,
                                                      TaskKind::kPickAndLift, TaskKind::kStackBlocks};
inline constexpr std::array<Camera, 3> kAllCameras = {Camera::kTop, Camera::kLeftOblique, Camera::kWrist};

std::string_view color_name(int color);
std::string_view task_name(TaskKind task);     // e.g. "reach_target"
std::string_view camera_name(Camera camera);   // "top", "left_oblique", "wrist"
TaskKind parse_task(std::string_view name);
InstructionStyle parse_style(std::string_view name);

struct Object {
  ObjectKind kind = ObjectKind::kBlock;
  int color = 0;
  Vec3 position = Vec3::Zero();
  bool held = false;
  bool pressed = false;
  bool stacked = false;   // resting on a stack base
  int stack_height = 0;   // blocks resting on this object (stack bases only)

  bool operator==(const Object&) const = default;
};

struct Gripper {
  Vec3 position{0.5, 0.5, 0.3};
  double yaw = 0.0;
  bool open = true;

  bool operator==(const Gripper&) const = default;
};

struct SceneState {
  std::vector<Object> objects;
  Gripper gripper;
  int t = 0;
  std::vector<int> press_order;  // object indices, in press order
  std::uint64_t rng_state = 0;

  std::optional<int> held_index() const;
  bool operator==(const SceneState&) const = default;
};

struct TaskSpec {
  TaskKind kind = TaskKind::kReachTarget;
  int max_steps = 2;
};

TaskSpec task_spec(TaskKind kind);

// A task configuration. `colors` is the instructed colour sequence: the target
// colour, the button press order, the block to lift, or the stacking colour.
struct VariationSpec {
  TaskKind task = TaskKind::kReachTarget;
  int id = 0;
  std::vector<int> colors;
  int count = 1;          // buttons to press / cubes to stack
  int object_count = 1;   // objects in the scene

  bool operator==(const VariationSpec&) const = default;
};

int variation_count(TaskKind task);
VariationSpec make_variation(TaskKind task, int id);
// Inverse of make_variation for PushButtons orderings.
int push_buttons_variation_id(std::span<const int> order);

struct Action {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Eigen::Vector4f quaternion{1.f, 0.f, 0.f, 0.f};  // (w, x, y, z)
  float gripper = 1.f;                              // >= 0.5 means open

  bool operator==(const Action&) const = default;
  std::array<float, kActionDim> to_array() const;
  static Action from_array(std::span<const float> v);
};

// Unit norm with non-negative scalar part; zero input maps to identity.
Eigen::Vector4f canonicalize_quaternion(const Eigen::Vector4f& q);
Eigen::Vector4f yaw_quaternion(double yaw);
double quaternion_yaw(const Eigen::Vector4f& q);

using Image = std::array<std::uint8_t, kImageBytes>;  // row-major, RGB interleaved

struct Observation {
  std::array<Image, kCameras> images{};
  std::array<float, kProprioDim> proprio{};  // open, left finger, right finger, t/T

  bool operator==(const Observation&) const = default;
};

struct ResetResult {
  SceneState state;
  std::string instruction;
};

ResetResult reset(const TaskSpec& task, const VariationSpec& variation, std::uint64_t seed,
                  InstructionStyle style = InstructionStyle::kDefault);

struct StepResult {
  SceneState state;
  bool done = false;
  bool success = false;
};

StepResult step(const SceneState& state, const TaskSpec& task, const VariationSpec& variation, const Action& action);

bool is_success(const SceneState& state, const VariationSpec& variation);
bool is_terminal(const SceneState& state, const TaskSpec& task, const VariationSpec& variation);

Observation observe(const SceneState& state, const TaskSpec& task);

Action expert_action(const SceneState& state, const TaskSpec& task, const VariationSpec& variation);

std::string make_instruction(const TaskSpec& task, const VariationSpec& variation,
                             InstructionStyle style = InstructionStyle::kDefault);

std::string generate_caption(const SceneState& state);

// Every sentence the instruction and caption templates can produce words from.
std::vector<std::string> grammar_corpus();

// Stable 64-bit seed combination.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace itrl::bw
