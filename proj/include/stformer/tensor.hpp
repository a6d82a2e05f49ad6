#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class Mode { train, eval };

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule of one recorded primitive. Reads `out.grad` and adds the
/// vector-Jacobian products into the grads of `out.inputs` that require
/// gradients.
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  /// Grad buffer, zero-filled on first access.
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles. Copies are shallow handles onto the
/// same node; use `detach()` for an independent value copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Only leaves may be written; writing an
  /// interior node would desynchronize saved backward state.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  const char* op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Records the result of a primitive. When gradient recording is enabled and
/// any input requires a gradient, the result keeps its inputs alive and
/// `backward` is registered; otherwise the result is a constant.
/// Throws NumericalError if `value` holds a NaN or infinity.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, detail::BackwardFn backward);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Recorded primitive applications reachable from a root, in topological
/// order (inputs before consumers).
class GradGraph {
 public:
  static GradGraph from(const Tensor& root);

  std::span<detail::Node* const> entries() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<detail::Node*> order_;
};

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate (sum)
/// across calls until `zero_grad`; interior gradients are reset per call.
/// Throws DimensionError for a non-scalar loss.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const GradGraph& graph);

}  // namespace stf
