#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "c2l/tensor.hpp"

namespace c2l {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive and has not been cleared.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive applications in creation order; backward() replays them
// in reverse, which is a valid reverse topological order because every node
// is created after its operands.
template <typename T>
class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  // Leaf bound to external storage; on backward its gradient is accumulated
  // into `param` when param.requires_grad() is set.
  Var<T> parameter(Tensor<T>& param) {
    Var<T> v = push(param, param.requires_grad(), nullptr, {});
    nodes_.back().bound = &param;
    return v;
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> operands, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& op : operands) {
      if (&op.tape() != this) throw std::logic_error("operand recorded on a different tape");
      needs = needs || requires_grad(op.id());
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, {});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator for node `id`, zero-initialised on first touch.
  std::span<T> grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  std::span<const T> grad(const Var<T>& v) const { return nodes_.at(v.id()).grad; }

  void backward(const Var<T>& loss) {
    if (consumed_) throw std::logic_error("backward already ran on this tape; double backward is unsupported");
    if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    consumed_ = true;
    if (!requires_grad(loss.id())) return;
    grad_buffer(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (check_finite_) {
        for (T g : n.grad) {
          if (!std::isfinite(g)) throw NumericError("non-finite gradient at tape node " + std::to_string(i));
        }
      }
      if (n.backward) {
        // Copy: the callee may grow other nodes' buffers but never this one.
        AlignedVector<T> g = n.grad;
        n.backward(*this, g);
      } else if (n.bound != nullptr) {
        n.bound->accumulate_grad(n.grad);
      }
    }
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
    AlignedVector<T> grad;
    Tensor<T>* bound = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, AlignedVector<T> grad) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericError("non-finite value " + shape_str(value.shape()) + " at tape node " +
                         std::to_string(nodes_.size()));
    }
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn), std::move(grad), nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool check_finite_;
  bool consumed_ = false;
};

}  // namespace c2l
