#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "trident/common.hpp"

namespace trident {

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One value in the recorded graph. Leaves have no backward rule.
struct Node {
  Dims dims;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool released = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline thread_local bool grad_mode_enabled = true;

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensors are cheap handles: copying a Tensor aliases the same storage.
/// Operations never mutate their inputs; they return new tensors and,
/// when any input requires grad, record a backward rule on the tape.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Dims dims, std::vector<Real> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    require(!dims.empty(), "tensor must have rank >= 1");
    for (std::size_t i = 0; i < dims.size(); ++i)
      require(dims[i] > 0, "tensor dimension ", i, " must be positive, got dims ", to_string(dims));
    require(product(dims) == values.size(), "tensor data length ", values.size(),
            " does not match dims ", to_string(dims));
    node_->dims = std::move(dims);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  static Tensor zeros(Dims dims, bool requires_grad = false) {
    auto n = product(dims);
    return Tensor(std::move(dims), std::vector<Real>(n, 0.0), requires_grad);
  }

  static Tensor full(Dims dims, Real value, bool requires_grad = false) {
    auto n = product(dims);
    return Tensor(std::move(dims), std::vector<Real>(n, value), requires_grad);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Dims& dims() const { return node().dims; }
  std::size_t rank() const { return node().dims.size(); }
  std::size_t dim(std::size_t i) const { return node().dims.at(i); }
  std::size_t numel() const { return node().data.size(); }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return !node().backward && !node().released; }

  std::span<const Real> data() const { return node().data; }
  // Direct write access; intended for leaves (initialization, optimizers, fixtures).
  std::span<Real> mutable_data() { return node().data; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const Real> grad() const {
    require(has_grad(), "tensor ", to_string(dims()), " has no gradient");
    return node().grad;
  }
  std::span<Real> mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.clear(); }

  Real item() const {
    require(numel() == 1, "item() requires a single-element tensor, got dims ", to_string(dims()));
    return node().data[0];
  }

  Real at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const auto& d = dims();
    return node().data[((n * d[1] + c) * d[2] + y) * d[3] + x];
  }

  // A fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(dims(), node().data, requires_grad);
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::Node& node() const {
    require(node_ != nullptr, "use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds the result of an operation. The backward rule receives the output
/// node (its grad is populated) and must accumulate into the inputs' grads.
/// Nothing is recorded when grad mode is off or no input requires grad.
inline Tensor record_op(Dims dims, std::vector<Real> values, const std::vector<Tensor>& inputs,
                        detail::BackwardFn backward) {
  Tensor out(std::move(dims), std::move(values));
  if (!detail::grad_mode_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& node = out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    require(!t.node().released, "operation input belongs to a graph that was already consumed");
    node.inputs.push_back(t.node_ptr());
  }
  node.backward = std::move(backward);
  return out;
}

/// Reverse-mode sweep from a scalar loss. Nodes are visited in reverse
/// construction order, so accumulation order is deterministic. The tape is
/// released afterwards; a second call on the same graph is rejected.
inline void backward(const Tensor& loss) {
  require(loss.defined(), "backward on an undefined tensor");
  require(loss.numel() == 1, "backward requires a scalar loss, got dims ", to_string(loss.dims()));
  auto* root = &loss.node();
  require(!root->released, "backward already ran on this graph; run a new forward pass");
  require(root->requires_grad && root->backward,
          "backward requires a loss produced by a recorded forward graph");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    require(!n->released, "backward reached a node from an already consumed graph");
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  root->ensure_grad()[0] += 1.0;
  for (auto* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Detach inputs only after every node is marked, since clearing one node's
  // inputs may free nodes still listed in `order`.
  std::vector<std::shared_ptr<detail::Node>> keep_alive;
  for (auto* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->released = true;
      for (auto& in : n->inputs) keep_alive.push_back(std::move(in));
      n->inputs.clear();
    }
  }
}

}  // namespace trident
