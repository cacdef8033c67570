#include "mtcurv/tensor.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>

namespace mtcurv::tensor {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<testing::Fault> g_fault{testing::Fault::None};
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace testing {
void inject_fault(Fault fault) { g_fault.store(fault); }
Fault active_fault() { return g_fault.load(); }
}  // namespace testing

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
  if (values.size() != element_count(shape))
    throw DomainError("tensor of shape " + to_string(shape) + " given " +
                      std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw DomainError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  if (needs) {
    node->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) {
  // Iterative post-order DFS so deep U-Net graphs cannot blow the stack.
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw DomainError("backward() needs a scalar loss, got shape " +
                      (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) throw DomainError("backward(): loss does not depend on any parameter");

  Tape<T> tape(loss);
  Node<T>& root = loss.node();
  root.grad_buffer()[0] += T{1};

  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (Node<T>* node : order) {
    if (node->is_leaf()) continue;
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->backward = nullptr;
    node->parents.clear();
  }
}

template <typename T>
void check_finite(std::span<const T> values, const char* where) {
  for (const T& v : values)
    if (!std::isfinite(v)) throw NumericFailure(std::string("non-finite value in ") + where);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> make_result<float>(Shape, std::vector<float>, const char*,
                                          std::vector<Tensor<float>>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(Shape, std::vector<double>, const char*,
                                            std::vector<Tensor<double>>,
                                            std::function<void(Node<double>&)>);
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);

}  // namespace mtcurv::tensor
