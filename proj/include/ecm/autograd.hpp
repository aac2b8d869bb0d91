#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecm/tensor.hpp"

namespace ecm {

/// Trainable tensor together with its gradient and Adam moments.
struct Parameter {
  Parameter(std::string name, Tensor value);

  void zero_grad();

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step = 0;
};

/// Ordered, address-stable collection of named parameters.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::int64_t total_elements() const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  DType dtype() const { return value().dtype(); }
  Tape& tape() const;
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations in execution order for one reverse-mode sweep.
///
/// Nodes are appended in topological order by construction, so backward()
/// walks them in reverse exactly once. Gradients accumulate (+=) so values
/// feeding several consumers receive the sum of all contributions.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (read back with grad()).
  Var leaf(Tensor value);
  /// Leaf bound to a Parameter; backward() adds into Parameter::grad.
  /// Binding the same Parameter twice returns the same Var.
  Var parameter(Parameter& param);

  /// Appends an op output. `backward` may be empty for non-differentiable ops.
  /// Throws NumericError if `value` contains NaN or Inf.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  bool requires_grad(const Var& v) const;
  void accumulate(const Var& v, const Tensor& grad);

  void backward(const Var& loss);

  /// Gradient accumulated for `v`; zeros when nothing reached it.
  Tensor grad(const Var& v) const;
  const Tensor& value(const Var& v) const;

  std::vector<const Parameter*> parameters_used() const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  const Node& node(const Var& v) const;
  Node& node(const Var& v);
  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool swept_ = false;
};

}  // namespace ecm
