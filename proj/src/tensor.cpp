#include "stformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stformer/errors.hpp"

namespace stf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

detail::NodePtr make_leaf(Shape shape, std::vector<double> values,
                          bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " +
                                     shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const detail::NodePtr& node) {
  if (!node) throw std::logic_error("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  if (!node_->is_leaf()) {
    throw std::logic_error("cannot write into a non-leaf tensor");
  }
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  const Shape& s = shape();
  if (s.size() != 2 || i >= s[0] || j >= s[1]) {
    throw DimensionError("at(" + std::to_string(i) + ", " + std::to_string(j) +
                         ") on shape " + shape_string(s));
  }
  return node_->value[i * s[1] + j];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(node_);
  if (!node_->is_leaf()) {
    throw std::logic_error("requires_grad can only be set on leaves");
  }
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return checked(node_).is_leaf(); }

const char* Tensor::op_name() const { return checked(node_).op; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return from(n.shape, n.value, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, detail::BackwardFn backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) +
                           " produced a non-finite value for output shape " +
                           shape_string(shape));
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;

  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

GradGraph GradGraph::from(const Tensor& root) {
  GradGraph graph;
  if (!root.defined()) return graph;
  // Iterative post-order DFS.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      graph.order_.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

void backward(const Tensor& loss) { backward(loss, GradGraph::from(loss)); }

void backward(const Tensor& loss, const GradGraph& graph) {
  if (loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " +
                         shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (detail::Node* node : graph.entries()) {
    if (!node->is_leaf()) node->grad.clear();
  }
  loss.node()->grad_buffer()[0] += 1.0;
  auto entries = graph.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    node->backward(*node);
  }
}

}  // namespace stf
