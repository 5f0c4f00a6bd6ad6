#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "expt/errors.hpp"
#include "expt/nn/mask.hpp"
#include "expt/nn/tensor.hpp"

namespace expt::nn {
namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (const T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss) throw InputError("backward: empty tensor");
  if (loss.size() != 1) {
    throw InputError("backward: loss must be scalar, got shape [" + std::to_string(loss.rows()) + ", " +
                     std::to_string(loss.cols()) + "]");
  }
  Node<T>* root = loss.node();

  // Iterative post-order DFS; inputs precede consumers in `order`.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!all_finite(order[i]->value)) {
      throw NumericError(std::string("non-finite value produced by '") + order[i]->op + "' node (#" +
                         std::to_string(i) + " in evaluation order)");
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!order[i]->backward && !all_finite(order[i]->grad)) {
      throw NumericError(std::string("non-finite gradient reached '") + order[i]->op + "' leaf (#" +
                         std::to_string(i) + " in evaluation order)");
    }
  }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

void AttentionMask::validate() const {
  for (std::size_t i = 0; i < n_; ++i) {
    if (!allow(i, i)) throw InputError("attention mask: row " + std::to_string(i) + " does not allow itself");
  }
}

kernels::AttentionPattern AttentionMask::pattern() const {
  kernels::AttentionPattern p;
  p.row_ptr.reserve(n_ + 1);
  p.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j)
      if (allow(i, j)) p.cols.push_back(static_cast<std::uint32_t>(j));
    if (p.cols.size() == p.row_ptr.back())
      throw InputError("attention mask: row " + std::to_string(i) + " allows no tokens");
    p.row_ptr.push_back(static_cast<std::uint32_t>(p.cols.size()));
  }
  return p;
}

}  // namespace expt::nn
