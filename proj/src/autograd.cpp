#include "ecm/autograd.hpp"

#include "ecm/detail/kernels.hpp"

namespace ecm {

Parameter::Parameter(std::string name_in, Tensor value_in)
    : name(std::move(name_in)),
      value(std::move(value_in)),
      grad(value.shape(), value.dtype()),
      first_moment(value.shape(), value.dtype()),
      second_moment(value.shape(), value.dtype()) {}

void Parameter::zero_grad() { grad = Tensor(value.shape(), value.dtype()); }

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::int64_t ParameterSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

const Tensor& Var::value() const { return tape().value(*this); }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return *tape_;
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size())) {
    throw Error("Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

Tape::Node& Tape::node(const Var& v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

Var Tape::push(Node n) {
  if (!n.value.all_finite()) throw NumericError("non-finite value produced");
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = param.value;
  n.requires_grad = true;
  n.param = &param;
  Var v = push(std::move(n));
  param_nodes_.emplace(&param, v.id_);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (node(in).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

bool Tape::requires_grad(const Var& v) const { return node(v).requires_grad; }

void Tape::accumulate(const Var& v, const Tensor& grad) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (grad.shape() != n.value.shape() || grad.dtype() != n.value.dtype()) {
    throw ShapeError("gradient " + to_string(grad.shape()) + " does not match value " + to_string(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = grad;
    n.has_grad = true;
    return;
  }
  kernels::add_inplace(n.grad, grad);
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw Error("loss is not recorded on this tape");
  Node& root = node(loss);
  if (root.value.numel() != 1) throw ShapeError("loss must be scalar, got shape " + to_string(root.value.shape()));
  if (swept_) throw Error("backward() already ran on this tape");
  swept_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor::full(root.value.shape(), 1.0, root.value.dtype());
  root.has_grad = true;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) kernels::add_inplace(n.param->grad, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), n.value.dtype());
}

const Tensor& Tape::value(const Var& v) const { return node(v).value; }

std::vector<const Parameter*> Tape::parameters_used() const {
  std::vector<const Parameter*> out;
  for (const auto& n : nodes_) {
    if (n.param != nullptr) out.push_back(n.param);
  }
  return out;
}

}  // namespace ecm
