#pragma once

// Dense 2-D arrays with reverse-mode gradients.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a backward closure; calling
// backward() on a scalar walks the graph in reverse topological order.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace expt::nn {

template <typename T>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<T> values, std::size_t rows, std::size_t cols, bool requires_grad = false);

  static Tensor scalar(T v, bool requires_grad = false) { return from({v}, 1, 1, requires_grad); }

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::array<std::size_t, 2> shape() const { return {node_->rows, node_->cols}; }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  /// Accumulated gradient; empty until backward() reaches this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const { return node_->value.at(0); }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  T& at(std::size_t r, std::size_t c) { return node_->value[r * node_->cols + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const char* op() const { return node_->op; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Deep copy of the values as a new leaf.
  Tensor detach(bool requires_grad = false) const { return from(node_->value, rows(), cols(), requires_grad); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<T> values, std::size_t rows, std::size_t cols, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (n->value.size() != rows * cols) throw std::invalid_argument("Tensor::from: element count mismatch");
  return Tensor(std::move(n));
}

/// Disables graph construction on the current thread while alive.
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

/// Reverse-mode accumulation from a scalar. Gradients are added into the
/// `grad` buffers of every tensor with requires_grad on the path.
/// Throws InputError for a non-scalar loss and NumericError naming the first
/// node whose value or gradient is not finite.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace expt::nn
