#pragma once

// Transformer building blocks shared by the encoder and the policy. Each
// function reads its parameters from a ParamStore by name prefix.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "itrl/ops.hpp"

namespace itrl::nn {

inline constexpr float kMaskedScore = -1e9f;

// Binds store parameters onto a tape, optionally as frozen leaves.
template <typename S>
struct Binder {
  Tape<S>& tape;
  const ParamStore<S>& store;
  bool trainable = true;

  Tensor<S> operator()(const std::string& name) const { return tape.parameter(store.at(name), trainable); }
};

// A sequence occupying rows [start, start + length) of a stacked matrix, with
// an optional additive attention mask (length x length).
template <typename S>
struct Segment {
  Index start = 0;
  Index length = 0;
  Matrix<S> mask;  // empty for full attention
};

template <typename S>
Tensor<S> linear(const Binder<S>& p, const std::string& name, const Tensor<S>& x) {
  return add(matmul(x, p(name + ".w")), p(name + ".b"));
}

template <typename S>
Tensor<S> layer_norm(const Binder<S>& p, const std::string& name, const Tensor<S>& x) {
  return add(multiply(layernorm(x), p(name + ".g")), p(name + ".b"));
}

// Multi-head self-attention applied independently to each segment.
template <typename S>
Tensor<S> attention(const Binder<S>& p, const std::string& name, const Tensor<S>& x,
                    const std::vector<Segment<S>>& segments, int heads) {
  std::vector<AttentionSegment<S>> segs;
  segs.reserve(segments.size());
  for (const auto& s : segments)
    if (s.length > 0) segs.push_back({s.start, s.length, s.mask.size() ? &s.mask : nullptr});
  auto mixed = segment_attention<S>(linear(p, name + ".qkv", x), segs, heads);
  return linear(p, name + ".out", mixed);
}

// Pre-norm transformer block.
template <typename S>
Tensor<S> block(const Binder<S>& p, const std::string& name, const Tensor<S>& x,
                const std::vector<Segment<S>>& segments, int heads) {
  auto h = add(x, attention(p, name + ".attn", layer_norm(p, name + ".ln1", x), segments, heads));
  auto m = linear(p, name + ".mlp.fc2", gelu(linear(p, name + ".mlp.fc1", layer_norm(p, name + ".ln2", h))));
  return add(h, m);
}

// Rows -> per-segment means, as one matmul with a constant averaging matrix.
template <typename S>
Tensor<S> segment_mean(const Tensor<S>& x, const std::vector<std::pair<Index, Index>>& ranges) {
  Matrix<S> avg = Matrix<S>::Zero(static_cast<Index>(ranges.size()), x.rows());
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const auto [start, len] = ranges[i];
    if (len > 0) avg.row(static_cast<Index>(i)).segment(start, len).setConstant(S(1) / static_cast<S>(len));
  }
  return matmul(x.tape()->constant(std::move(avg)), x);
}

// Parameter initialisation.
template <typename S>
class Initializer {
 public:
  Initializer(ParamStore<S>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void linear(const std::string& name, Index in, Index out, double gain = 1.0) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix<S> w(in, out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(u(rng_));
    store_.add(name + ".w", std::move(w));
    store_.add(name + ".b", Matrix<S>::Zero(1, out));
  }
  void layer_norm(const std::string& name, Index d) {
    store_.add(name + ".g", Matrix<S>::Ones(1, d));
    store_.add(name + ".b", Matrix<S>::Zero(1, d));
  }
  void normal(const std::string& name, Index r, Index c, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix<S> w(r, c);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(n(rng_));
    store_.add(name, std::move(w));
  }
  void zeros(const std::string& name, Index r, Index c) { store_.add(name, Matrix<S>::Zero(r, c)); }
  void block(const std::string& name, Index d, int mlp_ratio) {
    layer_norm(name + ".ln1", d);
    linear(name + ".attn.qkv", d, 3 * d);
    linear(name + ".attn.out", d, d);
    layer_norm(name + ".ln2", d);
    linear(name + ".mlp.fc1", d, mlp_ratio * d);
    linear(name + ".mlp.fc2", mlp_ratio * d, d);
  }

 private:
  ParamStore<S>& store_;
  std::mt19937_64 rng_;
};

}  // namespace itrl::nn
