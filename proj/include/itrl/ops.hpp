#pragma once

// Differentiable primitives over rank-2 tensors. Each op computes its forward
// value with Eigen and records a closure that pushes the output gradient into
// its inputs.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "itrl/tensor.hpp"

namespace itrl {

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename S>
Tape<S>& common_tape(std::string_view op, std::initializer_list<const Tensor<S>*> xs) {
  Tape<S>* tape = nullptr;
  for (const auto* x : xs) {
    if (!x->valid()) throw TapeError(std::string(op) + ": input tensor is not bound to a tape");
    if (tape && x->tape() != tape) throw TapeError(std::string(op) + ": inputs live on different tapes");
    tape = x->tape();
  }
  return *tape;
}

inline int normalize_axis(std::string_view op, int axis) {
  if (axis == -1) return 1;
  if (axis == 0 || axis == 1) return axis;
  throw AxisError(std::string(op) + ": unknown axis " + std::to_string(axis) + " (tensors are rank 2)");
}

inline Shape broadcast_shape(std::string_view op, Shape a, Shape b) {
  auto dim = [&](Index x, Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

template <typename S>
Matrix<S> expand(const Matrix<S>& m, Shape to) {
  if (shape_of(m) == to) return m;
  return m.replicate(to.rows / m.rows(), to.cols / m.cols());
}

template <typename S>
Matrix<S> reduce_to(const Matrix<S>& g, Shape to) {
  if (shape_of(g) == to) return g;
  Matrix<S> r = g;
  if (to.rows == 1 && r.rows() != 1) r = r.colwise().sum().eval();
  if (to.cols == 1 && r.cols() != 1) r = r.rowwise().sum().eval();
  return r;
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  auto& tape = detail::common_tape<S>("matmul", {&a, &b});
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ: " + a.shape().str() + " x " + b.shape().str());
  Matrix<S> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record(OpKind::kMatmul, std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  auto& tape = detail::common_tape<S>("add", {&a, &b});
  const Shape sa = a.shape(), sb = b.shape();
  const Shape so = detail::broadcast_shape("add", sa, sb);
  Matrix<S> out = detail::expand(a.value(), so);
  if (sb == so) {
    out += b.value();
  } else if (sb.rows == 1 && sb.cols == so.cols) {
    out.rowwise() += b.value().row(0);
  } else {
    out += detail::expand(b.value(), so);
  }
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record(OpKind::kAdd, std::move(out), {ia, ib}, [ia, ib, sa, sb](Tape<S>& t, int self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, detail::reduce_to<S>(g, sa));
    if (t.requires_grad(ib)) t.accumulate(ib, detail::reduce_to<S>(g, sb));
  });
}

template <typename S>
Tensor<S> multiply(const Tensor<S>& a, const Tensor<S>& b) {
  auto& tape = detail::common_tape<S>("multiply", {&a, &b});
  const Shape sa = a.shape(), sb = b.shape();
  const Shape so = detail::broadcast_shape("multiply", sa, sb);
  Matrix<S> out = (detail::expand(a.value(), so).array() * detail::expand(b.value(), so).array()).matrix();
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record(OpKind::kMultiply, std::move(out), {ia, ib}, [ia, ib, sa, sb, so](Tape<S>& t, int self) {
    const auto& g = t.out_grad(self);
    if (t.requires_grad(ia)) {
      Matrix<S> ga = (g.array() * detail::expand(t.value(ib), so).array()).matrix();
      t.accumulate(ia, detail::reduce_to<S>(ga, sa));
    }
    if (t.requires_grad(ib)) {
      Matrix<S> gb = (g.array() * detail::expand(t.value(ia), so).array()).matrix();
      t.accumulate(ib, detail::reduce_to<S>(gb, sb));
    }
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  auto& tape = detail::common_tape<S>("transpose", {&x});
  Matrix<S> out = x.value().transpose();
  const int ix = x.node_id();
  return tape.record(OpKind::kTranspose, std::move(out), {ix}, [ix](Tape<S>& t, int self) {
    t.accumulate(ix, t.out_grad(self).transpose());
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape to) {
  auto& tape = detail::common_tape<S>("reshape", {&x});
  if (to.size() != x.shape().size() || to.rows <= 0)
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + to.str());
  Matrix<S> out = Eigen::Map<const Matrix<S>>(x.value().data(), to.rows, to.cols);
  const int ix = x.node_id();
  const Shape from = x.shape();
  return tape.record(OpKind::kReshape, std::move(out), {ix}, [ix, from](Tape<S>& t, int self) {
    const auto& g = t.out_grad(self);
    t.accumulate(ix, Eigen::Map<const Matrix<S>>(g.data(), from.rows, from.cols));
  });
}

template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = detail::normalize_axis("concat", axis);
  Tape<S>* tape = xs[0].tape();
  Index rows = 0, cols = 0;
  for (const auto& x : xs) {
    detail::common_tape<S>("concat", {&xs[0], &x});
    if (axis == 0) {
      if (x.cols() != xs[0].cols())
        throw ShapeError("concat(axis=0): column counts differ: " + xs[0].shape().str() + " vs " + x.shape().str());
      rows += x.rows();
    } else {
      if (x.rows() != xs[0].rows())
        throw ShapeError("concat(axis=1): row counts differ: " + xs[0].shape().str() + " vs " + x.shape().str());
      cols += x.cols();
    }
  }
  if (axis == 0) cols = xs[0].cols(); else rows = xs[0].rows();
  Matrix<S> out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& x : xs) {
    if (axis == 0) out.middleRows(off, x.rows()) = x.value();
    else out.middleCols(off, x.cols()) = x.value();
    ids.push_back(x.node_id());
    offsets.push_back(off);
    off += axis == 0 ? x.rows() : x.cols();
  }
  return tape->record(OpKind::kConcat, std::move(out), ids, [ids, offsets, axis](Tape<S>& t, int self) {
    const auto& g = t.out_grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      const auto& v = t.value(ids[i]);
      if (axis == 0) t.accumulate(ids[i], g.middleRows(offsets[i], v.rows()));
      else t.accumulate(ids[i], g.middleCols(offsets[i], v.cols()));
    }
  });
}

template <typename S>
Tensor<S> concat(std::initializer_list<Tensor<S>> xs, int axis) {
  std::vector<Tensor<S>> v(xs);
  return concat<S>(std::span<const Tensor<S>>(v), axis);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length) {
  auto& tape = detail::common_tape<S>("slice", {&x});
  axis = detail::normalize_axis("slice", axis);
  const Index extent = axis == 0 ? x.rows() : x.cols();
  if (start < 0 || length <= 0 || start + length > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for shape " + x.shape().str());
  Matrix<S> out = axis == 0 ? Matrix<S>(x.value().middleRows(start, length))
                            : Matrix<S>(x.value().middleCols(start, length));
  const int ix = x.node_id();
  return tape.record(OpKind::kSlice, std::move(out), {ix}, [ix, axis, start, length](Tape<S>& t, int self) {
    if (!t.requires_grad(ix)) return;
    auto& gx = t.grad_ref(ix);
    if (axis == 0) gx.middleRows(start, length) += t.out_grad(self);
    else gx.middleCols(start, length) += t.out_grad(self);
  });
}

// Gathers rows of `table`; gradients scatter-add back in index order.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int> ids) {
  auto& tape = detail::common_tape<S>("embedding_lookup", {&table});
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  Matrix<S> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range for table " +
                       table.shape().str());
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  const int it = table.node_id();
  std::vector<int> idv(ids.begin(), ids.end());
  return tape.record(OpKind::kEmbeddingLookup, std::move(out), {it}, [it, idv](Tape<S>& t, int self) {
    if (!t.requires_grad(it)) return;
    auto& gt = t.grad_ref(it);
    const auto& g = t.out_grad(self);
    for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Index>(i));
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
  auto& tape = detail::common_tape<S>("softmax", {&x});
  axis = detail::normalize_axis("softmax", axis);
  Matrix<S> in = axis == 1 ? x.value() : Matrix<S>(x.value().transpose());
  for (Index r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  Matrix<S> out = axis == 1 ? std::move(in) : Matrix<S>(in.transpose());
  const int ix = x.node_id();
  return tape.record(OpKind::kSoftmax, std::move(out), {ix}, [ix, axis](Tape<S>& t, int self) {
    if (!t.requires_grad(ix)) return;
    const auto& y = t.value(self);
    const auto& g = t.out_grad(self);
    Matrix<S> gy = (g.array() * y.array()).matrix();
    if (axis == 1) {
      Matrix<S> dots = gy.rowwise().sum();
      Matrix<S> gx = gy;
      for (Index r = 0; r < gx.rows(); ++r) gx.row(r) -= dots(r, 0) * y.row(r);
      t.grad_ref(ix) += gx;
    } else {
      Matrix<S> dots = gy.colwise().sum();
      Matrix<S> gx = gy;
      for (Index c = 0; c < gx.cols(); ++c) gx.col(c) -= dots(0, c) * y.col(c);
      t.grad_ref(ix) += gx;
    }
  });
}

// Normalises to zero mean and unit variance along `axis`; no affine terms.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, int axis = -1, S eps = static_cast<S>(kLayerNormEps)) {
  auto& tape = detail::common_tape<S>("layernorm", {&x});
  axis = detail::normalize_axis("layernorm", axis);
  if (!(eps > S(0))) throw Error("layernorm: eps must be positive");
  Matrix<S> in = axis == 1 ? x.value() : Matrix<S>(x.value().transpose());
  const Index n = in.cols();
  Matrix<S> inv_std(in.rows(), 1);
  for (Index r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    const S mu = row.mean();
    row.array() -= mu;
    const S var = row.squaredNorm() / static_cast<S>(n);
    inv_std(r, 0) = S(1) / std::sqrt(var + eps);
    row *= inv_std(r, 0);
  }
  Matrix<S> out = axis == 1 ? in : Matrix<S>(in.transpose());
  const int ix = x.node_id();
  return tape.record(OpKind::kLayerNorm, std::move(out), {ix},
                     [ix, axis, inv_std = std::move(inv_std), xhat = std::move(in)](Tape<S>& t, int self) {
                       if (!t.requires_grad(ix)) return;
                       Matrix<S> g = axis == 1 ? t.out_grad(self) : Matrix<S>(t.out_grad(self).transpose());
                       const S n = static_cast<S>(g.cols());
                       for (Index r = 0; r < g.rows(); ++r) {
                         const S mean_g = g.row(r).sum() / n;
                         const S mean_gx = g.row(r).dot(xhat.row(r)) / n;
                         g.row(r) = inv_std(r, 0) *
                                    (g.row(r).array() - mean_g - xhat.row(r).array() * mean_gx).matrix();
                       }
                       if (axis == 1) t.grad_ref(ix) += g;
                       else t.grad_ref(ix) += g.transpose();
                     });
}

// tanh approximation.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  auto& tape = detail::common_tape<S>("gelu", {&x});
  // Tanh approximation, in array form so Eigen vectorizes it.
  const S c = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
  const auto xa = x.value().array();
  Matrix<S> out = (S(0.5) * xa * (S(1) + (c * (xa + S(0.044715) * xa.cube())).tanh())).matrix();
  const int ix = x.node_id();
  return tape.record(OpKind::kGelu, std::move(out), {ix}, [ix, c](Tape<S>& t, int self) {
    if (!t.requires_grad(ix)) return;
    const auto xv = t.value(ix).array();
    const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th =
        (c * (xv + S(0.044715) * xv.cube())).tanh();
    t.grad_ref(ix).array() += t.out_grad(self).array() *
                              (S(0.5) * (S(1) + th) +
                               S(0.5) * xv * (S(1) - th.square()) * c * (S(1) + S(3 * 0.044715) * xv.square()));
  });
}

// Mean along `axis` (0 -> 1 x cols, 1 -> rows x 1).
template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis) {
  auto& tape = detail::common_tape<S>("mean", {&x});
  axis = detail::normalize_axis("mean", axis);
  Matrix<S> out = axis == 0 ? Matrix<S>(x.value().colwise().mean()) : Matrix<S>(x.value().rowwise().mean());
  const int ix = x.node_id();
  const Shape sx = x.shape();
  return tape.record(OpKind::kMean, std::move(out), {ix}, [ix, axis, sx](Tape<S>& t, int self) {
    if (!t.requires_grad(ix)) return;
    const auto& g = t.out_grad(self);
    if (axis == 0) t.grad_ref(ix).rowwise() += g.row(0) / static_cast<S>(sx.rows);
    else t.grad_ref(ix).colwise() += g.col(0) / static_cast<S>(sx.cols);
  });
}

// Mean over all elements.
template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  auto& tape = detail::common_tape<S>("mean", {&x});
  Matrix<S> out(1, 1);
  out(0, 0) = x.value().mean();
  const int ix = x.node_id();
  const S n = static_cast<S>(x.value().size());
  return tape.record(OpKind::kMean, std::move(out), {ix}, [ix, n](Tape<S>& t, int self) {
    if (!t.requires_grad(ix)) return;
    t.grad_ref(ix).array() += t.out_grad(self)(0, 0) / n;
  });
}

template <typename S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  auto& tape = detail::common_tape<S>("mse", {&a, &b});
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  Matrix<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / static_cast<S>(a.value().size());
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record(OpKind::kMse, std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, int self) {
    const S scale = S(2) * t.out_grad(self)(0, 0) / static_cast<S>(t.value(ia).size());
    Matrix<S> diff = scale * (t.value(ia) - t.value(ib));
    if (t.requires_grad(ia)) t.grad_ref(ia) += diff;
    if (t.requires_grad(ib)) t.grad_ref(ib) -= diff;
  });
}

// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets) {
  auto& tape = detail::common_tape<S>("cross_entropy", {&logits});
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.shape().str());
  Matrix<S> probs = logits.value();
  S total = 0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= probs.cols())
      throw ShapeError("cross_entropy: target " + std::to_string(tgt) + " out of range for " + logits.shape().str());
    auto row = probs.row(r);
    const S mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    const S z = row.sum();
    total += std::log(z) - (logits.value()(r, tgt) - mx);
    row /= z;
  }
  Matrix<S> out(1, 1);
  out(0, 0) = total / static_cast<S>(probs.rows());
  const int il = logits.node_id();
  std::vector<int> tv(targets.begin(), targets.end());
  return tape.record(OpKind::kCrossEntropy, std::move(out), {il},
                     [il, tv, probs = std::move(probs)](Tape<S>& t, int self) {
                       if (!t.requires_grad(il)) return;
                       Matrix<S> g = probs;
                       for (std::size_t r = 0; r < tv.size(); ++r) g(static_cast<Index>(r), tv[r]) -= S(1);
                       t.grad_ref(il) += (t.out_grad(self)(0, 0) / static_cast<S>(g.rows())) * g;
                     });
}

// Convenience compositions of the primitives above.

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return multiply(x, x.tape()->constant(Matrix<S>::Constant(1, 1, c)));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return scale(mean(x), static_cast<S>(x.value().size()));
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, scale(b, S(-1)));
}

// Rows [start, start + length) of a stacked matrix that attend only to each
// other, with an optional additive score mask (length x length).
template <typename S>
struct AttentionSegment {
  Index start = 0;
  Index length = 0;
  const Matrix<S>* mask = nullptr;
};

// Multi-head scaled dot-product self-attention inside each segment. `qkv`
// holds queries, keys and values side by side ([N x 3d]); the result is
// [N x d] with heads concatenated. Rows outside every segment produce zeros.
template <typename S>
Tensor<S> segment_attention(const Tensor<S>& qkv, std::span<const AttentionSegment<S>> segments, int heads) {
  auto& tape = detail::common_tape<S>("attention", {&qkv});
  const Index n = qkv.rows();
  if (heads <= 0 || qkv.cols() % (3 * heads) != 0)
    throw ShapeError("attention: width " + std::to_string(qkv.cols()) + " is not 3 x heads x head_dim for " +
                     std::to_string(heads) + " heads");
  const Index d = qkv.cols() / 3, dh = d / heads;
  for (const auto& seg : segments) {
    if (seg.start < 0 || seg.length <= 0 || seg.start + seg.length > n)
      throw ShapeError("attention: segment [" + std::to_string(seg.start) + ", +" + std::to_string(seg.length) +
                       ") outside " + std::to_string(n) + " rows");
    if (seg.mask && (seg.mask->rows() != seg.length || seg.mask->cols() != seg.length))
      throw ShapeError("attention: mask " + shape_of(*seg.mask).str() + " for a segment of " +
                       std::to_string(seg.length) + " rows");
  }
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  const Matrix<S>& x = qkv.value();
  Matrix<S> out = Matrix<S>::Zero(n, d);
  std::vector<std::pair<Index, Index>> spans;
  std::vector<Matrix<S>> probs;
  spans.reserve(segments.size());
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& seg : segments) {
    spans.emplace_back(seg.start, seg.length);
    const Index r = seg.start, len = seg.length;
    for (int h = 0; h < heads; ++h) {
      Matrix<S> p(len, len);
      p.noalias() = x.block(r, h * dh, len, dh) * x.block(r, d + h * dh, len, dh).transpose();
      p *= scale;
      if (seg.mask) p += *seg.mask;
      for (Index i = 0; i < len; ++i) {
        auto row = p.row(i);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      out.block(r, h * dh, len, dh).noalias() = p * x.block(r, 2 * d + h * dh, len, dh);
      probs.push_back(std::move(p));
    }
  }
  const int ix = qkv.node_id();
  return tape.record(OpKind::kAttention, std::move(out), {ix},
                     [ix, heads, d, dh, scale, spans = std::move(spans), probs = std::move(probs)](Tape<S>& t, int self) {
                       if (!t.requires_grad(ix)) return;
                       const auto& g = t.out_grad(self);
                       const auto& x = t.value(ix);
                       auto& gx = t.grad_ref(ix);
                       std::size_t k = 0;
                       for (const auto& [r, len] : spans) {
                         for (int h = 0; h < heads; ++h, ++k) {
                           const Matrix<S>& p = probs[k];
                           const auto go = g.block(r, h * dh, len, dh);
                           gx.block(r, 2 * d + h * dh, len, dh).noalias() += p.transpose() * go;
                           Matrix<S> gs(len, len);
                           gs.noalias() = go * x.block(r, 2 * d + h * dh, len, dh).transpose();
                           for (Index i = 0; i < len; ++i) {
                             const S dot = (gs.row(i).array() * p.row(i).array()).sum();
                             gs.row(i).array() = p.row(i).array() * (gs.row(i).array() - dot) * scale;
                           }
                           gx.block(r, h * dh, len, dh).noalias() += gs * x.block(r, d + h * dh, len, dh);
                           gx.block(r, d + h * dh, len, dh).noalias() += gs.transpose() * x.block(r, h * dh, len, dh);
                         }
                       }
                     });
}

template <typename S>
struct OpAttrs {
  int axis = -1;
  S eps = static_cast<S>(kLayerNormEps);
  Shape shape{};
  Index start = 0;
  Index length = 0;
  std::vector<int> ids;
  std::vector<AttentionSegment<S>> segments;
  int heads = 1;
};

// Uniform entry point: dispatches `kind` to the matching primitive.
template <typename S>
Tensor<S> apply(OpKind kind, std::span<const Tensor<S>> in, const OpAttrs<S>& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::kMatmul: need(2); return matmul(in[0], in[1]);
    case OpKind::kAdd: need(2); return add(in[0], in[1]);
    case OpKind::kMultiply: need(2); return multiply(in[0], in[1]);
    case OpKind::kTranspose: need(1); return transpose(in[0]);
    case OpKind::kReshape: need(1); return reshape(in[0], attrs.shape);
    case OpKind::kConcat: return concat<S>(in, attrs.axis);
    case OpKind::kSlice: need(1); return slice(in[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::kEmbeddingLookup: need(1); return embedding_lookup(in[0], std::span<const int>(attrs.ids));
    case OpKind::kSoftmax: need(1); return softmax(in[0], attrs.axis);
    case OpKind::kLayerNorm: need(1); return layernorm(in[0], attrs.axis, attrs.eps);
    case OpKind::kGelu: need(1); return gelu(in[0]);
    case OpKind::kMean: need(1); return mean(in[0], attrs.axis);
    case OpKind::kMse: need(2); return mse(in[0], in[1]);
    case OpKind::kCrossEntropy: need(1); return cross_entropy(in[0], std::span<const int>(attrs.ids));
    case OpKind::kAttention: need(1); return segment_attention<S>(in[0], attrs.segments, attrs.heads);
    case OpKind::kLeaf: break;
  }
  throw Error("apply: leaf is not an operation");
}

}  // namespace itrl
