#include "wsds/autodiff.hpp"

#include <string>

#include "wsds/errors.hpp"

namespace wsds {

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::check_owner(const Var& v) const {
  if (!v.valid() || &v.tape() != this) throw Error("Var belongs to a different tape");
  return v;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericsError("non-finite value in leaf tensor");
  nodes_.push_back(Node{std::move(value), requires_grad, {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericsError("non-finite output from " + std::string(op));
  }
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || requires_grad(in.id());
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, {},
                        false});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_sink(const Var& v) {
  check_owner(v);
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return &node.grad;
}

const Tensor* Tape::grad(const Var& v) const {
  check_owner(v);
  const Node& node = nodes_[v.id()];
  return node.has_grad ? &node.grad : nullptr;
}

Tensor Tape::grad_or_zeros(const Var& v) const {
  if (const Tensor* g = grad(v)) return *g;
  return Tensor(v.shape(), 0.0);
}

void Tape::backward(const Var& root) {
  check_owner(root);
  if (root.numel() != 1) {
    throw ShapeError("backward() without a seed needs a one-element root, got " +
                     shape_str(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void Tape::backward(const Var& root, const Tensor& seed) {
  check_owner(root);
  if (seed.shape() != root.shape()) throw ShapeError("backward seed shape mismatch");
  Tensor* g = grad_sink(root);
  if (!g) return;
  for (std::size_t i = 0; i < seed.numel(); ++i) (*g)[i] += seed[i];
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.has_grad && node.backward) node.backward(node.grad);
  }
}

}  // namespace wsds
