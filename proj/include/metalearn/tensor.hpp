#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "metalearn/common.hpp"

namespace metalearn {

/// Thread-local switch deciding whether newly created tensors join the
/// differentiation graph. Backward rules run under this guard with the
/// caller's create_graph flag, which is what makes gradients themselves
/// differentiable.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enable) : previous_(grad_mode_flag()) {
    grad_mode_flag() = enable;
  }
  ~GradModeGuard() { grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

template <class Scalar>
class TensorT;

/// One vertex of the differentiation graph. Parents are held by value so the
/// subgraph below an output stays alive exactly as long as some tensor refers
/// to it. backward_rule maps the incoming gradient to one gradient per parent
/// and is expressed in terms of public tensor ops, so running it with graph
/// recording enabled yields a differentiable gradient.
template <class Scalar>
struct NodeT {
  using Tensor = TensorT<Scalar>;
  using BackwardRule = std::function<std::vector<Tensor>(const Tensor& upstream)>;

  const char* op_kind = "leaf";
  std::vector<Tensor> parents;
  BackwardRule backward_rule;  // null for leaves
  std::optional<Tensor> grad_accumulator;
  std::uint64_t sequence = 0;  // creation order; parents always precede children

  bool is_leaf() const { return !backward_rule; }
};

inline std::uint64_t next_node_sequence() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

/// Dense row-major tensor of reals, optionally attached to a differentiation
/// graph. Handles have shared-value semantics: copying a TensorT aliases the
/// same storage and node. Ops never mutate their inputs; in-place data access
/// (mutable_data) exists for optimizer steps on leaves.
template <class Scalar>
class TensorT {
 public:
  using Node = NodeT<Scalar>;

  TensorT() = default;

  static TensorT from_data(Shape shape, std::vector<Scalar> data,
                           bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<Index>(data.size())) {
      throw ShapeError("tensor data of length " + std::to_string(data.size()) +
                       " does not fill shape " + shape_string(shape));
    }
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static TensorT scalar(Scalar value, bool requires_grad = false) {
    return from_data(Shape{}, {value}, requires_grad);
  }

  static TensorT full(Shape shape, Scalar value, bool requires_grad = false) {
    std::vector<Scalar> data(static_cast<std::size_t>(shape_numel(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Scalar(0), requires_grad);
  }

  static TensorT ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Scalar(1), requires_grad);
  }

  static TensorT zeros_like(const TensorT& other) { return zeros(other.shape()); }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  Index rank() const { return static_cast<Index>(checked().shape.size()); }
  Index numel() const { return static_cast<Index>(checked().data.size()); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const Scalar> data() const { return checked().data; }

  /// Raw write access for optimizer steps on leaves; bypasses the graph.
  std::span<Scalar> mutable_data() { return checked().data; }

  Scalar value() const {
    if (!is_scalar()) {
      throw ShapeError("value() requires a one-element tensor, got shape " +
                       shape_string(shape()));
    }
    return checked().data[0];
  }

  Scalar at(Index i) const { return checked().data.at(static_cast<std::size_t>(i)); }

  Scalar at(Index i, Index j) const {
    const auto& s = shape();
    if (s.size() != 2) throw ShapeError("at(i,j) requires rank 2, got " + shape_string(s));
    return checked().data.at(static_cast<std::size_t>(i * s[1] + j));
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  std::shared_ptr<Node> node() const { return impl_ ? impl_->node : nullptr; }

  /// Promote to a graph leaf (or drop graph membership entirely).
  TensorT& set_requires_grad(bool value) {
    auto& impl = checked();
    if (value && !impl.node) {
      impl.node = std::make_shared<Node>();
      impl.node->op_kind = "leaf";
      impl.node->sequence = next_node_sequence();
    } else if (!value) {
      impl.node = nullptr;
    }
    impl.requires_grad = value;
    return *this;
  }

  /// Same values, no graph node, requires_grad false.
  TensorT detach() const {
    const auto& impl = checked();
    return from_data(impl.shape, impl.data, false);
  }

  // --- leaf gradient accumulator -------------------------------------------

  bool has_grad() const {
    return impl_ && impl_->node && impl_->node->grad_accumulator.has_value();
  }

  /// Accumulated gradient of this leaf; zeros if backward never reached it.
  TensorT grad() const {
    if (has_grad()) return *impl_->node->grad_accumulator;
    return zeros(shape());
  }

  /// Explicit reset of the additive accumulator.
  void zero_grad() {
    if (impl_ && impl_->node) impl_->node->grad_accumulator.reset();
  }

  /// Used by ops to construct results; attaches a node only when grad mode is
  /// on and some parent participates in the graph.
  static TensorT make_op_result(const char* op_kind, Shape shape,
                                std::vector<Scalar> data,
                                std::vector<TensorT> parents,
                                typename Node::BackwardRule backward_rule) {
    TensorT out = from_data(std::move(shape), std::move(data), false);
    bool any_grad = false;
    for (const auto& p : parents) {
      if (p.requires_grad()) any_grad = true;
    }
    if (grad_enabled() && any_grad) {
      out.impl_->requires_grad = true;
      out.impl_->node = std::make_shared<Node>();
      out.impl_->node->op_kind = op_kind;
      out.impl_->node->parents = std::move(parents);
      out.impl_->node->backward_rule = std::move(backward_rule);
      out.impl_->node->sequence = next_node_sequence();
    }
    return out;
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<Scalar> data;
    bool requires_grad = false;
    std::shared_ptr<Node> node;
  };

  Impl& checked() {
    if (!impl_) throw GraphError("use of an undefined tensor");
    return *impl_;
  }
  const Impl& checked() const {
    if (!impl_) throw GraphError("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

namespace detail {

/// Nodes reachable from `root` in topological order (parents first).
/// Iterative DFS; the graph is acyclic by construction.
template <class Scalar>
std::vector<NodeT<Scalar>*> topological_order(const std::shared_ptr<NodeT<Scalar>>& root) {
  std::vector<NodeT<Scalar>*> order;
  std::unordered_set<NodeT<Scalar>*> visited;
  struct Frame {
    NodeT<Scalar>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (root) stack.push_back({root.get(), 0});
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (frame.next_parent == 0 && visited.count(frame.node)) {
      stack.pop_back();
      continue;
    }
    if (frame.next_parent < frame.node->parents.size()) {
      auto parent = frame.node->parents[frame.next_parent++].node();
      if (parent && !visited.count(parent.get())) {
        stack.push_back({parent.get(), 0});
      }
      continue;
    }
    visited.insert(frame.node);
    order.push_back(frame.node);
    stack.pop_back();
  }
  return order;
}

template <class Scalar>
TensorT<Scalar> value_add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return TensorT<Scalar>::from_data(a.shape(), std::move(out), false);
}

template <class Scalar>
void validate_backward_entry(const TensorT<Scalar>& output) {
  if (!output.defined()) throw GraphError("grad/backward called on an undefined tensor");
  if (!output.is_scalar()) {
    throw GraphError("grad/backward requires a scalar output, got shape " +
                     shape_string(output.shape()));
  }
  if (!output.node()) {
    throw GraphError("grad/backward called on a detached output");
  }
}

}  // namespace detail

// Declared here, defined in ops.hpp (backward accumulation uses the graph op).
template <class Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b);

/// d(output)/d(input) for each input, in order. Inputs unreachable from the
/// output receive exactly-zero gradients. With create_graph the returned
/// tensors are themselves graph-attached and differentiable; without it they
/// are detached values. Leaf accumulators are never touched.
template <class Scalar>
std::vector<TensorT<Scalar>> grad(const TensorT<Scalar>& output,
                                  const std::vector<TensorT<Scalar>>& inputs,
                                  bool create_graph = false) {
  detail::validate_backward_entry(output);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) {
      throw GraphError("grad: input " + std::to_string(i) + " does not require grad");
    }
  }

  auto order = detail::topological_order<Scalar>(output.node());
  std::unordered_map<NodeT<Scalar>*, TensorT<Scalar>> grads;
  grads.reserve(order.size());

  {
    GradModeGuard guard(create_graph);
    grads[output.node().get()] = TensorT<Scalar>::ones(output.shape());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT<Scalar>* node = *it;
      auto found = grads.find(node);
      if (found == grads.end()) continue;  // not on a path to the output
      if (node->is_leaf()) continue;
      const TensorT<Scalar> upstream = found->second;
      auto parent_grads = node->backward_rule(upstream);
      for (std::size_t p = 0; p < node->parents.size(); ++p) {
        const auto& parent = node->parents[p];
        if (!parent.node() || p >= parent_grads.size() || !parent_grads[p].defined()) {
          continue;
        }
        auto* key = parent.node().get();
        auto slot = grads.find(key);
        if (slot == grads.end()) {
          grads.emplace(key, parent_grads[p]);
        } else {
          slot->second = add(slot->second, parent_grads[p]);
        }
      }
    }
  }

  std::vector<TensorT<Scalar>> results;
  results.reserve(inputs.size());
  for (const auto& input : inputs) {
    auto found = grads.find(input.node().get());
    if (found == grads.end()) {
      results.push_back(TensorT<Scalar>::zeros(input.shape()));
    } else {
      results.push_back(create_graph ? found->second : found->second.detach());
    }
  }
  return results;
}

/// Accumulates d(output)/d(leaf) into the grad accumulator of every reachable
/// leaf that requires grad. Additive: calling twice doubles the accumulators.
template <class Scalar>
void backward(const TensorT<Scalar>& output) {
  detail::validate_backward_entry(output);
  auto order = detail::topological_order<Scalar>(output.node());
  std::unordered_map<NodeT<Scalar>*, TensorT<Scalar>> grads;
  grads.reserve(order.size());

  GradModeGuard guard(false);
  grads[output.node().get()] = TensorT<Scalar>::ones(output.shape());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<Scalar>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->is_leaf()) {
      if (node->grad_accumulator.has_value()) {
        node->grad_accumulator = detail::value_add(*node->grad_accumulator, found->second);
      } else {
        node->grad_accumulator = found->second.detach();
      }
      continue;
    }
    const TensorT<Scalar> upstream = found->second;
    auto parent_grads = node->backward_rule(upstream);
    for (std::size_t p = 0; p < node->parents.size(); ++p) {
      const auto& parent = node->parents[p];
      if (!parent.node() || p >= parent_grads.size() || !parent_grads[p].defined()) continue;
      auto* key = parent.node().get();
      auto slot = grads.find(key);
      if (slot == grads.end()) {
        grads.emplace(key, parent_grads[p]);
      } else {
        slot->second = detail::value_add(slot->second, parent_grads[p]);
      }
    }
  }
}

template <class Scalar>
TensorT<Scalar> detach(const TensorT<Scalar>& t) {
  return t.detach();
}

using Tensor = TensorT<double>;
using Node = NodeT<double>;

}  // namespace metalearn
