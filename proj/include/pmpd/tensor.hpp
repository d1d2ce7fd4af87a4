#pragma once

// Dense double-precision tensor with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle onto a shared node. Operators produce new nodes
// whose value buffers are never written again; only leaves (parameters) are
// updated in place, and only between graph constructions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pmpd/errors.hpp"

namespace pmpd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, same length as values
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>* grad_buffer() {
    if (!requires_grad) return nullptr;
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    return &grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from(Shape{1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->values.size(); }
  const char* op() const { return node_->op; }

  std::span<const double> values() const { return node_->values; }
  // In-place access is for leaves only (parameter init and optimizer steps).
  std::span<double> mutable_values() {
    if (!node_->is_leaf) {
      throw ContractError("in-place write to a non-leaf tensor produced by '" +
                          std::string(node_->op) + "'");
    }
    return node_->values;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  std::span<const double> grad() const {
    node_->grad_buffer();
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    auto* g = node_->grad_buffer();
    if (!g) throw ContractError("tensor does not require grad");
    return *g;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
  }

  double item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->values[0];
  }

  // Row-major flat offset for a 4-D index.
  std::size_t offset(std::size_t b, std::size_t c, std::size_t h,
                     std::size_t w) const {
    const auto& s = node_->shape;
    return ((b * s[1] + c) * s[2] + h) * s[3] + w;
  }
  double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return node_->values[offset(b, c, h, w)];
  }

  // Copy of the values with no graph linkage.
  Tensor detach(bool requires_grad = false) const {
    return from(shape(), node_->values, requires_grad);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Wraps a freshly computed buffer as an operator result. The backward closure
// and the parent links are only kept when some parent needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> parents,
                          const char* op, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->is_leaf = false;
  node->op = op;
  bool any = false;
  if (grad_mode())
    for (const Tensor* p : parents) any = any || p->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor* p : parents) node->parents.push_back(p->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& parents, const char* op,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->is_leaf = false;
  node->op = op;
  bool any = false;
  if (grad_mode())
    for (const Tensor& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// intermediate gradients are reset so the same graph can be swept again.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "<null>"));
  }
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (!node->is_leaf) node->grad.assign(node->values.size(), 0.0);
  }
  root->grad_buffer()->at(0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered, name-unique set of parameters. Iteration order is insertion order,
// which fixes checkpoint layout and optimizer traversal.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor, bool trainable = true) {
    if (index_.count(name)) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
    if (tensor.requires_grad() != trainable) {
      tensor = tensor.detach(trainable);
    }
    index_.emplace(name, params_.size());
    params_.push_back(Parameter{std::move(name), std::move(tensor), trainable});
    return params_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter '" + name + "'");
    return params_[it->second].tensor;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  // Deep copy: new leaves with identical values.
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& p : params_) {
      out.add(p.name, p.tensor.detach(p.trainable), p.trainable);
    }
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pmpd
