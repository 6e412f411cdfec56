#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>
#include <vector>

#include "wsds/tensor.hpp"

namespace wsds {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning Tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient of the node's output and accumulates into the
/// gradients of its inputs via Tape::grad_sink.
using BackwardFn = std::function<void(const Tensor& grad_out)>;

/// Wengert list for reverse-mode differentiation. Nodes are appended in
/// evaluation order, which is a topological order of the computation; the
/// backward sweep visits them once each in reverse. Single-owner, not
/// thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. Throws NumericsError if `value` has a non-finite
  /// entry. The backward rule is dropped when no input requires a gradient.
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 (root must hold one element) and sweeps.
  void backward(const Var& root);
  void backward(const Var& root, const Tensor& seed);

  /// Accumulation buffer for `v`'s gradient, allocated as zeros on first use;
  /// nullptr when `v` does not require a gradient.
  Tensor* grad_sink(const Var& v);

  /// Gradient of `v` after backward(); nullptr if none reached it.
  const Tensor* grad(const Var& v) const;
  /// Gradient of `v`, or zeros of its shape.
  Tensor grad_or_zeros(const Var& v) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor grad;
    bool has_grad = false;
  };

  Var check_owner(const Var& v) const;

  // deque keeps element references stable while ops append.
  std::deque<Node> nodes_;
};

}  // namespace wsds
