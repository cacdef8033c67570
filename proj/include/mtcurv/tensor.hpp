#pragma once

// Dense NCHW tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Ops record their parents and
// a backward closure on the result node when any input requires a gradient
// (and gradient recording is enabled). backward() orders the reachable graph
// into a Tape, runs the closures in reverse, then releases the graph so the
// next training step starts from a clean tape.
//
// Both float (training) and double (finite-difference checks) are
// instantiated.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtcurv/error.hpp"

namespace mtcurv::tensor {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  /// Gradient storage, zero-filled on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  /// Scalar value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or an empty span when none has been written.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

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

bool grad_enabled();

/// Creates the result node of an op. Parents and the closure are kept only
/// if recording is on and some parent requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward);

/// Reverse-topological schedule of the graph reachable from a root:
/// parents precede children in `order`.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);
  const std::vector<Node<T>*>& order() const { return order_; }

 private:
  std::vector<Node<T>*> order_;
};

/// Seeds d(loss)/d(loss) = 1 and back-propagates. Leaf gradients accumulate
/// (sum) across uses and calls; intermediate gradients and the recorded graph
/// are released afterwards. Throws DomainError for a non-scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

/// Throws NumericFailure naming `where` if any value is NaN/Inf.
template <typename T>
void check_finite(std::span<const T> values, const char* where);

// Fault injection for the self-check: corrupts the named backward pass.
namespace testing {
enum class Fault { None, Conv2dBackward };
void inject_fault(Fault fault);
Fault active_fault();
}  // namespace testing

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mtcurv::tensor
