#pragma once

#include "dvpe/num/tensor.hpp"

#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvpe::num {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T item() const;
};

/// Error raised when an op produces a non-finite value while checking is on.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& op, std::string tag)
      : std::runtime_error("non-finite value produced by op '" + op + "'" + (tag.empty() ? "" : " in " + tag)),
        op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

/// Records ops in creation order; creation order is a topological order, so
/// backward walks the node list once from the end.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr, "constant"); }
  Var<T> input(Tensor<T> v) { return push(std::move(v), true, nullptr, "input"); }

  /// Leaf bound to a persistent parameter; backward accumulates into p.grad.
  Var<T> param(Param<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Var<T> v = push(p.value, grad_enabled_, nullptr, "param");
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  template <typename... Vs>
  Var<T> record(Tensor<T> value, const char* op, BackwardFn fn, Vs... inputs) {
    const bool rg = grad_enabled_ && (... || requires_grad(inputs.id));
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, op);
  }

  Var<T> record_n(Tensor<T> value, const char* op, BackwardFn fn, const std::vector<Var<T>>& inputs) {
    bool rg = false;
    for (const auto& v : inputs) rg = rg || requires_grad(v.id);
    rg = rg && grad_enabled_;
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, op);
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<T>& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var<T> out) {
    if (out.size() != 1) throw std::invalid_argument("Tape::backward: output must be a single element");
    if (!requires_grad(out.id)) return;
    grad(out.id)[0] = T{1};
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg.assign(n.grad.size(), T{0});
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  void set_check_finite(bool on, std::string tag = {}) {
    check_finite_ = on;
    tag_ = std::move(tag);
  }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Param<T>* param = nullptr;
    const char* op = "";
  };

  Var<T> push(Tensor<T> v, bool rg, BackwardFn fn, const char* op) {
    if (check_finite_) {
      for (const T& x : v.data)
        if (!std::isfinite(x)) throw NonFiniteError(op, tag_);
    }
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    n.op = op;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, int> param_nodes_;
  bool check_finite_ = false;
  bool grad_enabled_ = true;
  std::string tag_;
};

template <typename T>
T Var<T>::item() const {
  if (size() != 1) throw std::invalid_argument("Var::item: not a scalar");
  return value().data[0];
}

}  // namespace dvpe::num
