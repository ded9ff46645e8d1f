#include "itrl/blockworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "itrl/render.hpp"

namespace itrl::bw {

namespace {

constexpr std::array<std::string_view, kPaletteSize> kColorNames = {"red",  "green",   "blue",   "yellow",
                                                                    "cyan", "magenta", "orange", "purple"};

double horizontal_distance(const Vec3& a, const Vec3& b) { return (a.head<2>() - b.head<2>()).norm(); }

std::string article(int color) { return color_name(color) == "orange" ? "an" : "a"; }

// PushButtons variations: ordered triples, then ordered pairs, then singles.
const std::vector<std::vector<int>>& push_orderings() {
  static const std::vector<std::vector<int>> table = [] {
    std::vector<std::vector<int>> out;
    for (int a = 0; a < kPaletteSize; ++a)
      for (int b = 0; b < kPaletteSize; ++b)
        for (int c = 0; c < kPaletteSize; ++c)
          if (a != b && a != c && b != c) out.push_back({a, b, c});
    for (int a = 0; a < kPaletteSize; ++a)
      for (int b = 0; b < kPaletteSize; ++b)
        if (a != b) out.push_back({a, b});
    for (int a = 0; a < kPaletteSize; ++a) out.push_back({a});
    return out;
  }();
  return table;
}

std::vector<int> other_colors(std::span<const int> exclude, std::mt19937_64& rng) {
  std::vector<int> rest;
  for (int c = 0; c < kPaletteSize; ++c)
    if (std::find(exclude.begin(), exclude.end(), c) == exclude.end()) rest.push_back(c);
  std::shuffle(rest.begin(), rest.end(), rng);
  return rest;
}

int distractor(const std::vector<int>& colors, int i) {
  if (i >= static_cast<int>(colors.size())) throw Error("reset: not enough distinct colours for the distractors");
  return colors[static_cast<std::size_t>(i)];
}

std::vector<int> button_colors_pressed(const SceneState& s) {
  std::vector<int> out;
  for (int i : s.press_order) out.push_back(s.objects[static_cast<std::size_t>(i)].color);
  return out;
}

std::optional<int> find_object(const SceneState& s, ObjectKind kind, int color) {
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    if (s.objects[i].kind == kind && s.objects[i].color == color) return static_cast<int>(i);
  return std::nullopt;
}

std::optional<int> stack_base(const SceneState& s) {
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    if (s.objects[i].kind == ObjectKind::kTarget) return static_cast<int>(i);
  return std::nullopt;
}

std::string position_phrase(const Vec3& p) {
  const std::string side = p.x() < 1.0 / 3 ? "left" : p.x() > 2.0 / 3 ? "right" : "center";
  const std::string depth = p.y() < 1.0 / 3 ? "near " : p.y() > 2.0 / 3 ? "far " : "";
  return (side == "center" ? "in the " : "on the ") + depth + side;
}

std::string_view kind_word(ObjectKind k) {
  switch (k) {
    case ObjectKind::kButton: return "button";
    case ObjectKind::kBlock: return "block";
    case ObjectKind::kTarget: return "target";
  }
  return "object";
}

}  // namespace

std::string_view color_name(int color) {
  if (color < 0 || color >= kPaletteSize) throw Error("color id " + std::to_string(color) + " out of palette");
  return kColorNames[static_cast<std::size_t>(color)];
}

std::string_view task_name(TaskKind task) {
  switch (task) {
    case TaskKind::kReachTarget: return "reach_target";
    case TaskKind::kPushButtons: return "push_buttons";
    case TaskKind::kPickAndLift: return "pick_and_lift";
    case TaskKind::kStackBlocks: return "stack_blocks";
  }
  return "unknown";
}

std::string_view camera_name(Camera camera) {
  switch (camera) {
    case Camera::kTop: return "top";
    case Camera::kLeftOblique: return "left_oblique";
    case Camera::kWrist: return "wrist";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  std::string key;
  for (char c : name)
    if (c != '_' && c != '-') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "reachtarget") return TaskKind::kReachTarget;
  if (key == "pushbuttons") return TaskKind::kPushButtons;
  if (key == "pickandlift") return TaskKind::kPickAndLift;
  if (key == "stackblocks") return TaskKind::kStackBlocks;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

InstructionStyle parse_style(std::string_view name) {
  if (name == "default") return InstructionStyle::kDefault;
  if (name == "long") return InstructionStyle::kLong;
  throw ConfigError("unknown instruction style '" + std::string(name) + "'");
}

std::optional<int> SceneState::held_index() const {
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i].held) return static_cast<int>(i);
  return std::nullopt;
}

TaskSpec task_spec(TaskKind kind) {
  switch (kind) {
    case TaskKind::kReachTarget: return {kind, 2};
    case TaskKind::kPushButtons: return {kind, 6};
    case TaskKind::kPickAndLift: return {kind, 4};
    case TaskKind::kStackBlocks: return {kind, 10};
  }
  throw Error("unknown task kind");
}

int variation_count(TaskKind task) {
  switch (task) {
    case TaskKind::kReachTarget: return kPaletteSize;
    case TaskKind::kPushButtons: return static_cast<int>(push_orderings().size());
    case TaskKind::kPickAndLift: return kPaletteSize;
    case TaskKind::kStackBlocks: return kPaletteSize * 3;
  }
  return 0;
}

VariationSpec make_variation(TaskKind task, int id) {
  if (id < 0 || id >= variation_count(task))
    throw Error("variation " + std::to_string(id) + " out of range for " + std::string(task_name(task)));
  VariationSpec v;
  v.task = task;
  v.id = id;
  switch (task) {
    case TaskKind::kReachTarget:
      v.colors = {id};
      v.object_count = 4;
      break;
    case TaskKind::kPushButtons:
      v.colors = push_orderings()[static_cast<std::size_t>(id)];
      v.count = static_cast<int>(v.colors.size());
      v.object_count = 3;
      break;
    case TaskKind::kPickAndLift:
      v.colors = {id};
      v.object_count = 3;
      break;
    case TaskKind::kStackBlocks:
      v.colors = {id / 3};
      v.count = 2 + id % 3;
      v.object_count = 1 + (v.count + 1) + 2;
      break;
  }
  return v;
}

int push_buttons_variation_id(std::span<const int> order) {
  const auto& table = push_orderings();
  for (std::size_t i = 0; i < table.size(); ++i)
    if (std::equal(table[i].begin(), table[i].end(), order.begin(), order.end())) return static_cast<int>(i);
  throw Error("no PushButtons variation for the given ordering");
}

std::array<float, kActionDim> Action::to_array() const {
  return {position.x(), position.y(), position.z(), quaternion(0), quaternion(1), quaternion(2), quaternion(3), gripper};
}

Action Action::from_array(std::span<const float> v) {
  if (v.size() != kActionDim) throw Error("action vector must have 8 entries");
  Action a;
  a.position = {v[0], v[1], v[2]};
  a.quaternion = {v[3], v[4], v[5], v[6]};
  a.gripper = v[7];
  return a;
}

Eigen::Vector4f canonicalize_quaternion(const Eigen::Vector4f& q) {
  const float n = q.norm();
  if (!(n > 1e-8f)) return {1.f, 0.f, 0.f, 0.f};
  // Already-canonical input is returned untouched so the map is exactly idempotent.
  if (std::abs(n - 1.f) <= 1e-6f && q(0) >= 0.f) return q;
  Eigen::Vector4f u = q / n;
  if (u(0) < 0.f) u = -u;
  return u;
}

Eigen::Vector4f yaw_quaternion(double yaw) {
  return {static_cast<float>(std::cos(yaw / 2)), 0.f, 0.f, static_cast<float>(std::sin(yaw / 2))};
}

double quaternion_yaw(const Eigen::Vector4f& q) {
  const Eigen::Vector4f c = canonicalize_quaternion(q);
  return 2.0 * std::atan2(static_cast<double>(c(3)), static_cast<double>(c(0)));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ResetResult reset(const TaskSpec& task, const VariationSpec& variation, std::uint64_t seed, InstructionStyle style) {
  if (variation.task != task.kind) throw Error("reset: variation belongs to a different task");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(task.kind) * 1000 + static_cast<std::uint64_t>(variation.id)));

  SceneState s;
  auto add = [&](ObjectKind kind, int color) { s.objects.push_back(Object{kind, color}); };
  const int c0 = variation.colors.at(0);
  switch (task.kind) {
    case TaskKind::kReachTarget: {
      add(ObjectKind::kTarget, c0);
      auto rest = other_colors(variation.colors, rng);
      for (int i = 0; i < variation.object_count - 1; ++i) add(ObjectKind::kTarget, distractor(rest, i));
      break;
    }
    case TaskKind::kPushButtons: {
      for (int c : variation.colors) add(ObjectKind::kButton, c);
      auto rest = other_colors(variation.colors, rng);
      for (int i = 0; static_cast<int>(s.objects.size()) < variation.object_count; ++i)
        add(ObjectKind::kButton, distractor(rest, i));
      break;
    }
    case TaskKind::kPickAndLift: {
      add(ObjectKind::kBlock, c0);
      auto rest = other_colors(variation.colors, rng);
      for (int i = 0; i < variation.object_count - 1; ++i) add(ObjectKind::kBlock, distractor(rest, i));
      break;
    }
    case TaskKind::kStackBlocks: {
      auto rest = other_colors(variation.colors, rng);
      add(ObjectKind::kTarget, distractor(rest, 0));
      for (int i = 0; i < variation.count + 1; ++i) add(ObjectKind::kBlock, c0);
      add(ObjectKind::kBlock, distractor(rest, 1));
      add(ObjectKind::kBlock, distractor(rest, 1));
      break;
    }
  }

  std::uniform_real_distribution<double> coord(kPlacementMargin, 1.0 - kPlacementMargin);
  int samples = 0;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    for (;;) {
      if (++samples > kMaxPlacementSamples)
        throw Error("reset: could not place " + std::to_string(s.objects.size()) + " objects with separation " +
                    std::to_string(kMinSeparation) + " after " + std::to_string(kMaxPlacementSamples) + " samples");
      const Vec3 p(coord(rng), coord(rng), 0.0);
      // Nothing starts under the gripper, so no episode begins already solved.
      bool ok = horizontal_distance(p, s.gripper.position) > kReachRadius;
      for (std::size_t j = 0; j < i; ++j) ok = ok && horizontal_distance(p, s.objects[j].position) >= kMinSeparation;
      if (ok) {
        s.objects[i].position = p;
        break;
      }
    }
  }
  s.rng_state = rng();
  return {std::move(s), make_instruction(task, variation, style)};
}

bool is_success(const SceneState& s, const VariationSpec& v) {
  const int c0 = v.colors.at(0);
  switch (v.task) {
    case TaskKind::kReachTarget:
      for (const auto& o : s.objects)
        if (o.kind == ObjectKind::kTarget && o.color == c0 &&
            horizontal_distance(o.position, s.gripper.position) <= kReachRadius)
          return true;
      return false;
    case TaskKind::kPushButtons:
      return button_colors_pressed(s) == v.colors;
    case TaskKind::kPickAndLift: {
      auto h = s.held_index();
      if (!h) return false;
      const auto& o = s.objects[static_cast<std::size_t>(*h)];
      return o.kind == ObjectKind::kBlock && o.color == c0 && o.position.z() >= kLiftThreshold;
    }
    case TaskKind::kStackBlocks: {
      if (s.held_index()) return false;
      int n = 0;
      for (const auto& o : s.objects) n += (o.kind == ObjectKind::kBlock && o.color == c0 && o.stacked) ? 1 : 0;
      return n >= v.count;
    }
  }
  return false;
}

bool is_terminal(const SceneState& s, const TaskSpec& task, const VariationSpec& v) {
  return s.t >= task.max_steps || is_success(s, v);
}

StepResult step(const SceneState& state, const TaskSpec& task, const VariationSpec& variation, const Action& action) {
  if (!action.position.allFinite() || !action.quaternion.allFinite() || !std::isfinite(action.gripper))
    throw Error("step: action contains non-finite values");
  StepResult r{state, false, false};
  SceneState& s = r.state;

  s.gripper.position = action.position.cast<double>().cwiseMax(0.0).cwiseMin(1.0);
  s.gripper.yaw = quaternion_yaw(action.quaternion);
  const bool was_open = s.gripper.open;
  const bool now_open = action.gripper >= 0.5f;

  if (auto h = s.held_index()) s.objects[static_cast<std::size_t>(*h)].position = s.gripper.position;

  if (was_open && !now_open) {
    int best = -1;
    double best_d = kGraspRadius;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& o = s.objects[i];
      if (o.kind != ObjectKind::kBlock || o.stacked || o.held) continue;
      const double d = (o.position - s.gripper.position).norm();
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) {
      auto& o = s.objects[static_cast<std::size_t>(best)];
      o.held = true;
      o.position = s.gripper.position;
    }
  } else if (!was_open && now_open) {
    if (auto h = s.held_index()) {
      auto& o = s.objects[static_cast<std::size_t>(*h)];
      o.held = false;
      int base = -1;
      double best_d = kStackTolerance;
      for (std::size_t i = 0; i < s.objects.size(); ++i) {
        if (s.objects[i].kind != ObjectKind::kTarget) continue;
        const double d = horizontal_distance(s.objects[i].position, s.gripper.position);
        if (d <= best_d) {
          best_d = d;
          base = static_cast<int>(i);
        }
      }
      if (base >= 0) {
        auto& b = s.objects[static_cast<std::size_t>(base)];
        o.position = Vec3(b.position.x(), b.position.y(), b.stack_height * kBlockHeight);
        o.stacked = true;
        b.stack_height += 1;
      } else {
        o.position = Vec3(s.gripper.position.x(), s.gripper.position.y(), 0.0);
      }
    }
  }
  s.gripper.open = now_open;

  if (s.gripper.position.z() <= kPressHeight) {
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      auto& o = s.objects[i];
      if (o.kind == ObjectKind::kButton && !o.pressed &&
          horizontal_distance(o.position, s.gripper.position) <= kPressRadius) {
        o.pressed = true;
        s.press_order.push_back(static_cast<int>(i));
      }
    }
  }

  s.t += 1;
  r.success = is_success(s, variation);
  r.done = r.success || s.t >= task.max_steps;
  return r;
}

Observation observe(const SceneState& state, const TaskSpec& task) {
  Observation o;
  for (Camera c : kAllCameras) o.images[static_cast<std::size_t>(c)] = render(state, c);
  const float open = state.gripper.open ? 1.f : 0.f;
  o.proprio = {open, open, open, static_cast<float>(state.t) / static_cast<float>(task.max_steps)};
  return o;
}

Action expert_action(const SceneState& s, const TaskSpec& task, const VariationSpec& v) {
  if (is_terminal(s, task, v)) throw Error("expert_action: episode already terminated");
  Action a;
  a.quaternion = yaw_quaternion(0.0);
  auto at = [&](const Vec3& p, bool open) {
    a.position = p.cast<float>();
    a.gripper = open ? 1.f : 0.f;
    return a;
  };
  const int c0 = v.colors.at(0);
  switch (v.task) {
    case TaskKind::kReachTarget: {
      auto i = find_object(s, ObjectKind::kTarget, c0);
      return at(s.objects[static_cast<std::size_t>(*i)].position, true);
    }
    case TaskKind::kPushButtons: {
      const auto pressed = button_colors_pressed(s);
      if (pressed.size() >= v.colors.size() || !std::equal(pressed.begin(), pressed.end(), v.colors.begin()))
        throw Error("expert_action: button order already violated");
      auto i = find_object(s, ObjectKind::kButton, v.colors[pressed.size()]);
      const Vec3& p = s.objects[static_cast<std::size_t>(*i)].position;
      return at(Vec3(p.x(), p.y(), 0.0), false);
    }
    case TaskKind::kPickAndLift: {
      auto target = find_object(s, ObjectKind::kBlock, c0);
      const Vec3& p = s.objects[static_cast<std::size_t>(*target)].position;
      if (s.held_index() == target) return at(Vec3(p.x(), p.y(), 0.3), false);
      if (s.held_index()) return at(s.gripper.position, true);
      return at(p, s.gripper.open ? false : true);
    }
    case TaskKind::kStackBlocks: {
      if (auto h = s.held_index()) {
        if (s.objects[static_cast<std::size_t>(*h)].color != c0) return at(s.gripper.position, true);
        const auto& base = s.objects[static_cast<std::size_t>(*stack_base(s))];
        return at(Vec3(base.position.x(), base.position.y(), base.stack_height * kBlockHeight), true);
      }
      for (const auto& o : s.objects) {
        if (o.kind == ObjectKind::kBlock && o.color == c0 && !o.stacked) return at(o.position, !s.gripper.open);
      }
      throw Error("expert_action: no block left to stack");
    }
  }
  throw Error("expert_action: unknown task");
}

std::string make_instruction(const TaskSpec& task, const VariationSpec& v, InstructionStyle style) {
  if (v.task != task.kind) throw Error("make_instruction: variation belongs to a different task");
  std::ostringstream os;
  const std::string c0(color_name(v.colors.at(0)));
  const bool is_long = style == InstructionStyle::kLong;
  switch (task.kind) {
    case TaskKind::kReachTarget:
      if (is_long)
        os << "move the white gripper closer to the " << c0 << " target until the gripper is above the " << c0
           << " target";
      else
        os << "reach the " << c0 << " target";
      break;
    case TaskKind::kPushButtons:
      for (std::size_t i = 0; i < v.colors.size(); ++i) {
        const std::string c(color_name(v.colors[i]));
        if (!is_long) {
          os << (i == 0 ? "" : ", then ") << "push the " << c << " button";
        } else if (i == 0) {
          os << "move the white gripper closer to " << c << " button, then push " << c << " button down";
        } else {
          const std::string prev(color_name(v.colors[i - 1]));
          os << ", after pushing " << prev << " button, pull the white gripper up and move the gripper closer to "
             << c << " button, then push " << c << " button down";
        }
      }
      break;
    case TaskKind::kPickAndLift:
      if (is_long)
        os << "move the white gripper closer to the " << c0 << " block, then close the gripper to grasp the " << c0
           << " block, after grasping the " << c0 << " block, pull the white gripper up to lift the " << c0
           << " block";
      else
        os << "pick up the " << c0 << " block and lift it up";
      break;
    case TaskKind::kStackBlocks:
      if (is_long)
        os << "move the white gripper to a " << c0 << " cube and pick it up, then place it onto the stack target, "
           << "then move the white gripper to pick another " << c0 << " cube and place it onto the " << c0
           << " cube stack. repeat until the stack has " << v.count << ' ' << c0 << " cubes";
      else
        os << "place " << v.count << " of the " << c0 << " cubes on top of each other";
      break;
  }
  return os.str();
}

std::string generate_caption(const SceneState& state) {
  if (state.objects.empty()) return "an empty table";
  std::ostringstream os;
  for (std::size_t i = 0; i < state.objects.size(); ++i) {
    const auto& o = state.objects[i];
    if (i) os << " and ";
    if (o.kind == ObjectKind::kButton && o.pressed)
      os << "a pressed " << color_name(o.color) << ' ' << kind_word(o.kind);
    else
      os << article(o.color) << ' ' << color_name(o.color) << ' ' << kind_word(o.kind);
    if (o.held) os << " in the gripper";
    else if (o.stacked) os << " on the stack";
    else os << ' ' << position_phrase(o.position);
  }
  return os.str();
}

std::vector<std::string> grammar_corpus() {
  std::vector<std::string> out;
  for (TaskKind t : kAllTasks) {
    const TaskSpec spec = task_spec(t);
    for (int id = 0; id < variation_count(t); ++id) {
      const auto v = make_variation(t, id);
      out.push_back(make_instruction(spec, v, InstructionStyle::kDefault));
      out.push_back(make_instruction(spec, v, InstructionStyle::kLong));
    }
  }
  out.push_back(generate_caption(SceneState{}));
  for (ObjectKind k : {ObjectKind::kButton, ObjectKind::kBlock, ObjectKind::kTarget}) {
    for (int c = 0; c < kPaletteSize; ++c) {
      for (double x : {0.2, 0.5, 0.8}) {
        for (double y : {0.2, 0.5, 0.8}) {
          SceneState s;
          Object o{k, c, Vec3(x, y, 0.0)};
          s.objects = {o, o};
          s.objects[1].pressed = k == ObjectKind::kButton;
          s.objects[1].held = k == ObjectKind::kBlock;
          s.objects[1].stacked = k == ObjectKind::kTarget;
          out.push_back(generate_caption(s));
        }
      }
    }
  }
  return out;
}

}  // namespace itrl::bw
