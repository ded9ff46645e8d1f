#pragma once

// History-conditioned policy transformer. A window holds up to C steps; each
// step contributes K camera features, 4 proprioception embeddings and one
// action embedding (a learned placeholder at the current step).

#include <map>
#include <span>
#include <string>
#include <vector>

#include "itrl/blockworld.hpp"
#include "itrl/checkpoint.hpp"
#include "itrl/nn.hpp"

namespace itrl::model {

struct PolicyConfig {
  int d = 64;
  int depth = 2;
  int heads = 4;
  int context = 4;
  int cameras = bw::kCameras;
  int feature_dim = 64;  // width of the multi-scale encoder vector
  int action_dim = bw::kActionDim;
  int proprio_dim = bw::kProprioDim;
  int mlp_ratio = 4;

  void validate() const;
  int slots_per_step() const { return cameras + proprio_dim + 1; }
  int slots() const { return context * slots_per_step(); }
  int action_slot(int step) const { return step * slots_per_step() + cameras + proprio_dim; }

  void to_header(Header& h) const;
  static PolicyConfig from_header(const Header& h);
  bool operator==(const PolicyConfig&) const = default;
};

template <typename S>
void init_policy(ParamStore<S>& store, const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Initializer<S> init(store, seed);
  init.layer_norm("policy.feature_proj.ln", cfg.feature_dim);
  init.linear("policy.feature_proj", cfg.feature_dim, cfg.d);
  for (int j = 0; j < cfg.proprio_dim; ++j) {
    init.normal("policy.proprio." + std::to_string(j) + ".w", 1, cfg.d, 1.0);
    init.normal("policy.proprio." + std::to_string(j) + ".b", 1, cfg.d, 0.02);
  }
  init.linear("policy.action", cfg.action_dim, cfg.d);
  init.normal("policy.action_placeholder", 1, cfg.d, 0.02);
  init.normal("policy.pad", 1, cfg.d, 0.02);
  init.normal("policy.slot_pos", cfg.slots(), cfg.d, 0.02);
  for (int l = 0; l < cfg.depth; ++l) init.block("policy.blocks." + std::to_string(l), cfg.d, cfg.mlp_ratio);
  init.layer_norm("policy.head.ln", cfg.d);
  init.linear("policy.head.fc1", cfg.d, cfg.d);
  init.linear("policy.head.fc2", cfg.d, cfg.action_dim);
}

// One context window, oldest step first. Missing history before the
// episode start is implied by steps() < C and filled with pad slots.
template <typename S>
struct PolicyWindow {
  std::vector<int> feature_rows;  // steps() * K rows of the feature tensor, step-major
  Matrix<S> proprio;              // steps() x 4
  Matrix<S> past_actions;         // (steps() - 1) x 8: actions taken at the earlier steps

  int steps() const { return static_cast<int>(proprio.rows()); }
};

namespace detail {

// Additive block-causal mask for a window whose first `pad_steps` steps are padding.
template <typename S>
Matrix<S> block_causal_mask(const PolicyConfig& cfg, int pad_steps) {
  const int n = cfg.slots(), per = cfg.slots_per_step();
  Matrix<S> m = Matrix<S>::Constant(n, n, static_cast<S>(nn::kMaskedScore));
  for (int q = 0; q < n; ++q) {
    const int qs = q / per;
    if (qs < pad_steps) {
      m(q, q) = 0;
      continue;
    }
    for (int k = pad_steps * per; k < (qs + 1) * per; ++k) m(q, k) = 0;
  }
  return m;
}

}  // namespace detail

// Final hidden rows for every slot: [B * slots x d].
template <typename S>
Tensor<S> policy_hidden(Tape<S>& tape, const ParamStore<S>& params, const PolicyConfig& cfg, const Tensor<S>& features,
                        std::span<const PolicyWindow<S>> windows) {
  if (windows.empty()) throw ShapeError("policy: empty batch");
  if (features.cols() != cfg.feature_dim)
    throw ShapeError("policy: feature width " + std::to_string(features.cols()) + " but config expects " +
                     std::to_string(cfg.feature_dim));
  const nn::Binder<S> p{tape, params, true};
  const int K = cfg.cameras, C = cfg.context, per = cfg.slots_per_step();

  Index n_steps = 0, n_actions = 0;
  for (const auto& w : windows) {
    if (w.steps() < 1 || w.steps() > C)
      throw ShapeError("policy: window has " + std::to_string(w.steps()) + " steps, context is " + std::to_string(C));
    if (w.proprio.cols() != cfg.proprio_dim || w.past_actions.rows() != w.steps() - 1 ||
        (w.past_actions.rows() > 0 && w.past_actions.cols() != cfg.action_dim) ||
        static_cast<int>(w.feature_rows.size()) != w.steps() * K)
      throw ShapeError("policy: window inputs do not match " + std::to_string(w.steps()) + " steps of " +
                       std::to_string(K) + " cameras");
    for (int r : w.feature_rows)
      if (r < 0 || r >= features.rows()) throw ShapeError("policy: feature row " + std::to_string(r) + " out of range");
    n_steps += w.steps();
    n_actions += w.steps() - 1;
  }

  // Source rows: [features | proprio (scalar-major) | actions | placeholder | pad].
  std::vector<Tensor<S>> parts;
  parts.push_back(nn::linear(p, "policy.feature_proj", nn::layer_norm(p, "policy.feature_proj.ln", features)));
  Matrix<S> prop(n_steps, cfg.proprio_dim);
  Matrix<S> acts(std::max<Index>(n_actions, 1), cfg.action_dim);
  {
    Index r = 0, a = 0;
    for (const auto& w : windows) {
      prop.middleRows(r, w.steps()) = w.proprio;
      r += w.steps();
      if (w.past_actions.rows() > 0) acts.middleRows(a, w.past_actions.rows()) = w.past_actions;
      a += w.past_actions.rows();
    }
  }
  auto prop_t = tape.constant(std::move(prop));
  for (int j = 0; j < cfg.proprio_dim; ++j) {
    const std::string n = "policy.proprio." + std::to_string(j);
    parts.push_back(add(multiply(slice(prop_t, 1, j, 1), p(n + ".w")), p(n + ".b")));
  }
  const bool has_actions = n_actions > 0;
  if (has_actions) parts.push_back(nn::linear(p, "policy.action", tape.constant(std::move(acts))));
  parts.push_back(p("policy.action_placeholder"));
  parts.push_back(p("policy.pad"));

  const Index feat_base = 0;
  const Index prop_base = features.rows();
  const Index act_base = prop_base + n_steps * cfg.proprio_dim;
  const Index placeholder = act_base + (has_actions ? n_actions : 0);
  const Index pad = placeholder + 1;

  std::vector<int> gather, pos_ids;
  std::vector<nn::Segment<S>> segs;
  std::map<int, Matrix<S>> masks;
  Index step_base = 0, action_base = 0;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    const int pads = C - w.steps();
    for (int s = 0; s < C; ++s) {
      const int i = s - pads;  // index into the window's real steps
      for (int k = 0; k < per; ++k) {
        Index src = pad;
        if (i >= 0) {
          if (k < K) {
            src = feat_base + w.feature_rows[static_cast<std::size_t>(i * K + k)];
          } else if (k < K + cfg.proprio_dim) {
            src = prop_base + (k - K) * n_steps + step_base + i;
          } else {
            src = i + 1 < w.steps() ? act_base + action_base + i : placeholder;
          }
        }
        gather.push_back(static_cast<int>(src));
        pos_ids.push_back(s * per + k);
      }
    }
    auto it = masks.find(pads);
    if (it == masks.end()) it = masks.emplace(pads, detail::block_causal_mask<S>(cfg, pads)).first;
    segs.push_back({static_cast<Index>(b) * cfg.slots(), cfg.slots(), it->second});
    step_base += w.steps();
    action_base += w.steps() - 1;
  }
  auto source = concat<S>(std::span<const Tensor<S>>(parts), 0);
  auto x = add(embedding_lookup(source, std::span<const int>(gather)),
               embedding_lookup(p("policy.slot_pos"), std::span<const int>(pos_ids)));
  for (int l = 0; l < cfg.depth; ++l) x = nn::block(p, "policy.blocks." + std::to_string(l), x, segs, cfg.heads);
  return x;
}

template <typename S>
Tensor<S> policy_head(const nn::Binder<S>& p, const Tensor<S>& rows) {
  auto h = nn::linear(p, "policy.head.fc1", nn::layer_norm(p, "policy.head.ln", rows));
  return nn::linear(p, "policy.head.fc2", gelu(h));
}

// Raw 8-dim action for the current (last) step of each window: [B x 8].
template <typename S>
Tensor<S> policy_forward(Tape<S>& tape, const ParamStore<S>& params, const PolicyConfig& cfg, const Tensor<S>& features,
                         std::span<const PolicyWindow<S>> windows) {
  auto x = policy_hidden(tape, params, cfg, features, windows);
  std::vector<int> rows;
  for (std::size_t b = 0; b < windows.size(); ++b)
    rows.push_back(static_cast<int>(b) * cfg.slots() + cfg.action_slot(cfg.context - 1));
  return policy_head(nn::Binder<S>{tape, params, true}, embedding_lookup(x, std::span<const int>(rows)));
}

// Head outputs at every step's action slot: [B * C x 8], window-major.
template <typename S>
Tensor<S> policy_forward_all(Tape<S>& tape, const ParamStore<S>& params, const PolicyConfig& cfg,
                             const Tensor<S>& features, std::span<const PolicyWindow<S>> windows) {
  auto x = policy_hidden(tape, params, cfg, features, windows);
  std::vector<int> rows;
  for (std::size_t b = 0; b < windows.size(); ++b)
    for (int s = 0; s < cfg.context; ++s) rows.push_back(static_cast<int>(b) * cfg.slots() + cfg.action_slot(s));
  return policy_head(nn::Binder<S>{tape, params, true}, embedding_lookup(x, std::span<const int>(rows)));
}

template <typename S>
Tensor<S> bc_loss(const Tensor<S>& predicted, const Matrix<S>& targets) {
  if (predicted.rows() == 0) throw ShapeError("bc_loss: empty batch");
  return mse(predicted, predicted.tape()->constant(targets));
}

// Expert action -> training target: canonical quaternion, gripper in {0, 1}.
Eigen::RowVectorXf action_target(const bw::Action& a);

// Raw head output -> executable action.
bw::Action to_action(std::span<const float> raw);

}  // namespace itrl::model
