#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "itrl/tensor.hpp"

namespace itrl {

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

template <typename S>
struct AdamWState {
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
  std::int64_t step = 0;

  static AdamWState zeros_like(const ParamStore<S>& params) {
    AdamWState s;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params.at(i).value;
      s.m.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
      s.v.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
    }
    return s;
  }
};

struct StepReport {
  bool applied = false;
  std::string reason;
};

// One decoupled-weight-decay Adam update. Parameters whose `trainable` flag is
// false (when the span is non-empty) are left untouched along with their
// moments. A non-finite gradient skips the whole step.
template <typename S>
StepReport adamw_step(ParamStore<S>& params, std::span<const Matrix<S>> grads, AdamWState<S>& state,
                      const AdamWConfig& cfg, std::span<const bool> trainable = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients / " + std::to_string(state.m.size()) +
                     " moment buffers");
  if (!trainable.empty() && trainable.size() != params.size())
    throw ShapeError("adamw_step: trainable mask size mismatch");
  if (!(cfg.lr >= 0.0) || !(cfg.eps > 0.0)) throw Error("adamw_step: require lr >= 0 and eps > 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i).value;
    if (shape_of(grads[i]) != shape_of(p) || shape_of(state.m[i]) != shape_of(p) ||
        shape_of(state.v[i]) != shape_of(p))
      throw ShapeError("adamw_step: shape mismatch for '" + params.at(i).name + "': parameter " +
                       shape_of(p).str() + ", gradient " + shape_of(grads[i]).str());
    if ((trainable.empty() || trainable[i]) && !grads[i].allFinite())
      return {false, "non-finite gradient for '" + params.at(i).name + "'"};
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
  const S c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
  const S lr = static_cast<S>(cfg.lr), decay = static_cast<S>(cfg.lr * cfg.weight_decay);
  const S eps = static_cast<S>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    auto& p = params.at(i).value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (S(1) - b1) * grads[i];
    v.array() = b2 * v.array() + (S(1) - b2) * grads[i].array().square();
    p -= decay * p;
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  return {true, {}};
}

// Linear warm-up followed by a constant rate.
inline double warmup_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

template <typename S>
double global_norm(std::span<const Matrix<S>> grads) {
  double acc = 0;
  for (const auto& g : grads) acc += g.template cast<double>().squaredNorm();
  return std::sqrt(acc);
}

}  // namespace itrl
