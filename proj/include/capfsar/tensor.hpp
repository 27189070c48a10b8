#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace capfsar {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Propagates `out.grad` into the gradients of `out.inputs`.
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  /// Gradient buffer, zero-filled on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Thread-local switch that disables graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor of 64-bit floats with optional reverse-mode history.
///
/// A Tensor is a cheap handle; copies share storage. Values produced by an
/// operation are never modified afterwards. Only leaves (tensors created
/// directly, such as parameters) expose mutable storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return values().size(); }

  std::span<const double> values() const;
  /// Scalar value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Accumulated gradient; empty span when nothing has been propagated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Writable storage. Only valid on leaves.
  std::span<double> mutable_values();

  /// New leaf with a copy of the values and no history.
  Tensor detach(bool requires_grad = false) const;

  /// Internal: builds an op result. Records history only when grad mode is on
  /// and at least one input requires grad.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        const char* op, detail::BackwardFn backward);

  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

/// The recorded operations reachable from a root, in topological order.
///
/// Replaying backward visits every operation in reverse topological order
/// exactly once.
class GradTape {
 public:
  explicit GradTape(const Tensor& root);

  std::size_t size() const noexcept { return ops_.size(); }
  /// Operation names in recorded (forward) order.
  std::vector<std::string> op_names() const;

  /// Seeds d(root) = 1 (root must be a single element) and propagates.
  void backward();

 private:
  Tensor root_;
  std::vector<detail::Node*> ops_;
};

/// Convenience: GradTape(root).backward().
void backward(const Tensor& root);

}  // namespace capfsar
