#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "remn/tensor.hpp"

namespace remn {

/// Named trainable tensor. `grad_ready` is set by Tape::backward and
/// cleared by the optimizer after it consumes the gradient.
template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool grad_ready = false;

  BasicParameter(std::string param_name, BasicTensor<T> initial)
      : name(std::move(param_name)), value(std::move(initial)), grad(value.shape()) {
    if (name.empty()) throw std::invalid_argument("parameter name must be nonempty");
  }

  void zero_grad() {
    grad.fill(T{0});
    grad_ready = false;
  }
};

using Parameter = BasicParameter<float>;

enum class OpKind {
  Conv2d,
  BatchNorm2d,
  Relu,
  Sigmoid,
  MaxPool2d,
  GlobalAvgPool,
  AdaptiveAvgPool,
  ChannelScale,
  Add,
  Linear,
  Reshape,
  SoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

/// Reverse-mode tape. Each op appends one record holding its output and a
/// backward closure over the intermediates its forward saved. Values live
/// in a deque, so references handed out stay valid while the tape grows.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using GradBuffer = std::vector<T>;
  /// Accumulates d(loss)/d(input_i) into input_grads[i]; null entries are
  /// inputs that do not require a gradient.
  using BackwardFn = std::function<void(const TensorT& grad_out, std::span<GradBuffer* const> input_grads)>;

  struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
  };

  struct OpRecord {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  /// With `record == false` no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  /// When enabled, piecewise ops (relu, max-pool) fold their branch
  /// decisions into branch_signature(); gradcheck uses it to detect
  /// perturbations that cross a kink.
  void track_branches(bool on) noexcept { track_branches_ = on; }
  bool tracking_branches() const noexcept { return track_branches_; }
  void mix_branch(std::uint64_t h) noexcept {
    branch_signature_ = (branch_signature_ ^ h) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
  }
  std::uint64_t branch_signature() const noexcept { return branch_signature_; }

  Var constant(TensorT value) { return push_owned(std::move(value), false); }

  /// Leaf that receives a gradient (used for inputs under test).
  Var input(TensorT value) { return push_owned(std::move(value), record_); }

  /// Leaf bound to a parameter; its gradient is accumulated into
  /// `param.grad` by backward(). The parameter must outlive the tape.
  Var parameter(BasicParameter<T>& param) {
    Node node;
    node.external = &param.value;
    node.requires_grad = record_;
    node.param = &param;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const TensorT& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward root with respect to `v`. Empty when no
  /// path connects them.
  const GradBuffer& grad(Var v) const { return node(v).grad; }

  Var record(OpKind kind, std::initializer_list<Var> inputs, TensorT output, BackwardFn backward) {
    bool needs_grad = false;
    for (Var in : inputs) needs_grad = needs_grad || node(in).requires_grad;
    Var out = push_owned(std::move(output), needs_grad);
    if (needs_grad) {
      OpRecord rec{kind, {}, out.id, std::move(backward)};
      for (Var in : inputs) rec.inputs.push_back(in.id);
      records_.push_back(std::move(rec));
    }
    return out;
  }

  std::span<const OpRecord> records() const noexcept { return records_; }

  /// Backpropagates from a scalar output with seed 1.
  void backward(Var root) {
    if (value(root).numel() != 1) {
      throw ShapeError("backward(root) needs a scalar root, got shape " + shape_str(value(root).shape()));
    }
    backward(root, TensorT(value(root).shape(), T{1}));
  }

  void backward(Var root, const TensorT& seed) {
    if (seed.shape() != value(root).shape()) {
      throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " != output shape " +
                       shape_str(value(root).shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!node(root).requires_grad) return;
    node(root).grad = seed.values();

    std::vector<GradBuffer*> slots;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      Node& out = nodes_[it->output];
      if (out.grad.empty()) continue;
      slots.clear();
      for (std::size_t in : it->inputs) {
        Node& n = nodes_[in];
        if (!n.requires_grad) {
          slots.push_back(nullptr);
          continue;
        }
        if (n.grad.empty()) n.grad.assign(value_of(n).numel(), T{0});
        slots.push_back(&n.grad);
      }
      const TensorT grad_out(value_of(out).shape(), out.grad);
      it->backward(grad_out, slots);
    }

    for (Node& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto& dst = n.param->grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      n.param->grad_ready = true;
    }
  }

 private:
  struct Node {
    TensorT owned;
    const TensorT* external = nullptr;
    BasicParameter<T>* param = nullptr;
    bool requires_grad = false;
    GradBuffer grad;
  };

  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  static const TensorT& value_of(const Node& n) { return n.external ? *n.external : n.owned; }

  Var push_owned(TensorT value, bool requires_grad) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0;
  std::deque<Node> nodes_;
  std::vector<OpRecord> records_;
};

}  // namespace remn
