#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "itrl/error.hpp"

namespace itrl {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Every tensor is rank 2. Vectors are 1 x n rows, scalars are 1 x 1.
struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
  }
};

template <typename Derived>
Shape shape_of(const Eigen::MatrixBase<Derived>& m) {
  return {m.rows(), m.cols()};
}

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kMultiply,
  kTranspose,
  kReshape,
  kConcat,
  kSlice,
  kEmbeddingLookup,
  kSoftmax,
  kLayerNorm,
  kGelu,
  kMean,
  kMse,
  kCrossEntropy,
  kAttention,
};

std::string_view op_name(OpKind kind);

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
};

// Ordered, name-addressable set of trainable matrices. Element addresses are
// stable for the store's lifetime.
template <typename Scalar>
class ParamStore {
 public:
  using Mat = Matrix<Scalar>;

  Parameter<Scalar>& add(const std::string& name, Mat init) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter<Scalar>>(Parameter<Scalar>{name, std::move(init)}));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Parameter<Scalar>& at(const std::string& name) const { return *params_[index_of(name)]; }
  Parameter<Scalar>& at(const std::string& name) { return *params_[index_of(name)]; }
  const Parameter<Scalar>& at(std::size_t i) const { return *params_[i]; }
  Parameter<Scalar>& at(std::size_t i) { return *params_[i]; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& p : params_) out.add(p->name, p->value.template cast<Other>());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while its tape lives.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Shape shape() const { return shape_of(value()); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  int node_id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<Scalar>;
  Tensor(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode differentiation tape. Nodes are appended in execution order,
// so node ids are a topological order of the graph.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using TensorT = Tensor<Scalar>;
  // Propagates the gradient of node `self` into the gradients of its inputs.
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TensorT constant(Mat value) { return push(OpKind::kLeaf, std::move(value), {}, nullptr, false); }
  TensorT variable(Mat value) { return push(OpKind::kLeaf, std::move(value), {}, nullptr, true); }

  // Leaf bound to external parameter storage. Repeated calls return the same node.
  TensorT parameter(const Parameter<Scalar>& p, bool trainable = true) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return TensorT(this, it->second);
    Node n;
    n.kind = OpKind::kLeaf;
    n.external = &p.value;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    bound_.emplace(&p, id);
    return TensorT(this, id);
  }

  TensorT record(OpKind kind, Mat value, std::vector<int> inputs, Backward backward) {
    bool any = false;
    for (int i : inputs) any = any || nodes_[i].requires_grad;
    return push(kind, std::move(value), std::move(inputs), any ? std::move(backward) : nullptr, any);
  }

  // Accumulates d(loss)/d(node) for every node reachable from `loss`.
  void backward(const TensorT& loss) {
    if (loss.tape() != this) throw TapeError("backward: loss tensor belongs to a different tape");
    const Mat& lv = value(loss.node_id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw TapeError("backward: loss must be scalar, got shape " + shape_of(lv).str());
    if (!nodes_[loss.node_id()].requires_grad)
      throw TapeError("backward: loss is detached (no path to any differentiable leaf)");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_ref(loss.node_id()).setOnes();
    for (int id = loss.node_id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  // Gradient of the last backward() w.r.t. `t`; zeros when `t` is off the path.
  Mat grad(const TensorT& t) const {
    const Node& n = nodes_[t.node_id()];
    if (n.grad.size() == 0) return Mat::Zero(value(t.node_id()).rows(), value(t.node_id()).cols());
    return n.grad;
  }

  // Gradients aligned with `store` order; unused parameters receive zeros.
  std::vector<Mat> parameter_grads(const ParamStore<Scalar>& store) const {
    std::vector<Mat> out;
    out.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store.at(i);
      auto it = bound_.find(&p);
      if (it == bound_.end() || nodes_[it->second].grad.size() == 0) {
        out.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      } else {
        out.push_back(nodes_[it->second].grad);
      }
    }
    return out;
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  OpKind kind(int id) const { return nodes_[id].kind; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of node `id`, zero-initialised on first access.
  Mat& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Mat& v = value(id);
      n.grad = Mat::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }
  const Mat& out_grad(int id) const { return nodes_[id].grad; }

  // Accumulates `g` into input node `id` if it participates in differentiation.
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    if (!nodes_[id].requires_grad) return;
    grad_ref(id) += g;
  }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  TensorT push(OpKind kind, Mat value, std::vector<int> inputs, Backward backward, bool requires_grad) {
#ifndef NDEBUG
    bool inputs_finite = true;
    for (int i : inputs) inputs_finite = inputs_finite && this->value(i).allFinite();
    if (inputs_finite && !value.allFinite())
      throw Error(std::string(op_name(kind)) + ": non-finite output from finite inputs");
#endif
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return TensorT(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::deque<Node> nodes_;  // deque: value references stay valid as the tape grows
  std::unordered_map<const Parameter<Scalar>*, int> bound_;
};

}  // namespace itrl
