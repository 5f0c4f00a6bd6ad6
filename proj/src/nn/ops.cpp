#include "expt/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "expt/errors.hpp"

namespace expt::nn {
namespace {

using kernels::Trans;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
Tensor<T> make_result(std::size_t rows, std::size_t cols, std::vector<T> value, const char* op,
                      std::vector<NodePtr<T>> inputs, BackwardFn<T> fn) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->op = op;
  const bool needs = grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const NodePtr<T>& p) { return p->requires_grad; });
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(fn);
  }
  return Tensor<T>(std::move(n));
}

/// Gradient buffer of input k, or nullptr when it does not need one.
template <typename T>
T* grad_of(Node<T>& self, std::size_t k) {
  Node<T>& in = *self.inputs[k];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw InputError(std::string(op) + ": shape mismatch (" + detail + ")");
}

template <typename T>
std::string dims(const Tensor<T>& t) {
  return "[" + std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + "]";
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, dims(a) + " vs " + dims(b));
}

}  // namespace

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * (T(1) / std::numbers::sqrt2_v<T>)));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) shape_error("matmul", dims(a) + " x " + dims(b));
  const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
  std::vector<T> out(M * N);
  kernels::gemm(Trans::kNo, Trans::kNo, M, N, K, a.data(), b.data(), out.data(), false);
  return make_result<T>(M, N, std::move(out), "matmul", {a.shared(), b.shared()}, [M, N, K](Node<T>& self) {
    const T* A = self.inputs[0]->value.data();
    const T* B = self.inputs[1]->value.data();
    if (T* dA = grad_of(self, 0)) kernels::gemm(Trans::kNo, Trans::kYes, M, K, N, self.grad.data(), B, dA, true);
    if (T* dB = grad_of(self, 1)) kernels::gemm(Trans::kYes, Trans::kNo, K, N, M, A, self.grad.data(), dB, true);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols())
    shape_error("linear", dims(x) + " * " + dims(weight) + " + " + dims(bias));
  const std::size_t M = x.rows(), K = x.cols(), N = weight.cols();
  std::vector<T> out(M * N);
  for (std::size_t i = 0; i < M; ++i) std::copy(bias.data(), bias.data() + N, out.begin() + i * N);
  kernels::gemm(Trans::kNo, Trans::kNo, M, N, K, x.data(), weight.data(), out.data(), true);
  return make_result<T>(M, N, std::move(out), "linear", {x.shared(), weight.shared(), bias.shared()},
                        [M, N, K](Node<T>& self) {
                          const T* X = self.inputs[0]->value.data();
                          const T* W = self.inputs[1]->value.data();
                          const T* G = self.grad.data();
                          if (T* dX = grad_of(self, 0)) kernels::gemm(Trans::kNo, Trans::kYes, M, K, N, G, W, dX, true);
                          if (T* dW = grad_of(self, 1)) kernels::gemm(Trans::kYes, Trans::kNo, K, N, M, X, G, dW, true);
                          if (T* db = grad_of(self, 2)) {
                            for (std::size_t i = 0; i < M; ++i)
                              for (std::size_t j = 0; j < N; ++j) db[j] += G[i * N + j];
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), "add", {a.shared(), b.shared()}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (T* d = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), "sub", {a.shared(), b.shared()}, [](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    if (T* d = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), "mul", {a.shared(), b.shared()}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * bv[i];
    if (T* d = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result<T>(a.rows(), a.cols(), std::move(out), "scale", {a.shared()}, [s](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(x.data()[i]);
  return make_result<T>(x.rows(), x.cols(), std::move(out), "gelu", {x.shared()}, [](Node<T>& self) {
    T* d = grad_of(self, 0);
    if (!d) return;
    const auto& xv = self.inputs[0]->value;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * (T(1) / std::numbers::sqrt2_v<T>);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * (T(1) / std::numbers::sqrt2_v<T>)));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      d[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  return make_result<T>(x.rows(), x.cols(), std::move(out), "tanh", {x.shared()}, [](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  return make_result<T>(x.rows(), x.cols(), std::move(out), "exp", {x.shared()}, [](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.values()) s += v;
  return make_result<T>(1, 1, {s}, "sum", {x.shared()}, [](Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      const T g = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) d[i] += g;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw InputError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("squared_error", a, b);
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T diff = a.data()[i] - b.data()[i];
    s += diff * diff;
  }
  return make_result<T>(1, 1, {s}, "squared_error", {a.shared(), b.shared()}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T g = T(2) * self.grad[0];
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) d[i] += g * (av[i] - bv[i]);
    if (T* d = grad_of(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) d[i] -= g * (av[i] - bv[i]);
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InputError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", dims(parts[0]) + " vs " + dims(p));
    offsets.push_back(cols);
    cols += p.cols();
    inputs.push_back(p.shared());
  }
  std::vector<T> out(rows * cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t pc = parts[k].cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].data() + r * pc, pc, out.begin() + r * cols + offsets[k]);
  }
  return make_result<T>(rows, cols, std::move(out), "concat_cols", std::move(inputs),
                        [offsets, rows, cols](Node<T>& self) {
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            T* d = grad_of(self, k);
                            if (!d) continue;
                            const std::size_t pc = self.inputs[k]->cols;
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < pc; ++c) d[r * pc + c] += self.grad[r * cols + offsets[k] + c];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InputError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<NodePtr<T>> inputs;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", dims(parts[0]) + " vs " + dims(p));
    rows += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
    inputs.push_back(p.shared());
  }
  return make_result<T>(rows, cols, std::move(out), "concat_rows", std::move(inputs), [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t n = self.inputs[k]->value.size();
      if (T* d = grad_of(self, k))
        for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[offset + i];
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) shape_error("slice_cols", dims(x) + " cols " + std::to_string(begin) + ".." +
                                                                    std::to_string(end));
  const std::size_t rows = x.rows(), cols = x.cols(), w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * cols + begin, w, out.begin() + r * w);
  return make_result<T>(rows, w, std::move(out), "slice_cols", {x.shared()}, [rows, cols, w, begin](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += self.grad[r * w + c];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) shape_error("slice_rows", dims(x) + " rows " + std::to_string(begin) + ".." +
                                                                    std::to_string(end));
  const std::size_t cols = x.cols();
  std::vector<T> out(x.data() + begin * cols, x.data() + end * cols);
  return make_result<T>(end - begin, cols, std::move(out), "slice_rows", {x.shared()}, [begin, cols](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[begin * cols + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  const std::size_t cols = x.cols();
  std::vector<T> out(index.size() * cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows()) shape_error("gather_rows", "index " + std::to_string(index[r]) + " into " + dims(x));
    std::copy_n(x.data() + index[r] * cols, cols, out.begin() + r * cols);
  }
  return make_result<T>(index.size(), cols, std::move(out), "gather_rows", {x.shared()}, [index, cols](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) d[index[r] * cols + c] += self.grad[r * cols + c];
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.size() != cols || bias.size() != cols) shape_error("layer_norm", dims(x) + " with gain " + dims(gain));
  auto xhat = std::make_shared<std::vector<T>>(rows * cols);
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(rows * cols);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (std::ptrdiff_t ri = 0; ri < n; ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const T* xr = x.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gain.data()[c] + bias.data()[c];
    }
  }
  return make_result<T>(rows, cols, std::move(out), "layer_norm", {x.shared(), gain.shared(), bias.shared()},
                        [xhat, rstd, rows, cols](Node<T>& self) {
                          const T* g = self.inputs[1]->value.data();
                          const T* G = self.grad.data();
                          if (T* dg = grad_of(self, 1))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c) dg[c] += G[r * cols + c] * (*xhat)[r * cols + c];
                          if (T* db = grad_of(self, 2))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c) db[c] += G[r * cols + c];
                          if (T* dx = grad_of(self, 0)) {
                            const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
                            for (std::ptrdiff_t ri = 0; ri < n; ++ri) {
                              const auto r = static_cast<std::size_t>(ri);
                              T m1 = 0, m2 = 0;
                              for (std::size_t c = 0; c < cols; ++c) {
                                const T dh = G[r * cols + c] * g[c];
                                m1 += dh;
                                m2 += dh * (*xhat)[r * cols + c];
                              }
                              m1 /= static_cast<T>(cols);
                              m2 /= static_cast<T>(cols);
                              for (std::size_t c = 0; c < cols; ++c) {
                                const T dh = G[r * cols + c] * g[c];
                                dx[r * cols + c] += (*rstd)[r] * (dh - m1 - (*xhat)[r * cols + c] * m2);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  if (rate >= 1.0) throw InputError("dropout: rate must be < 1");
  const T keep_scale = T(1) / static_cast<T>(1.0 - rate);
  auto keep = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = rng->uniform() < rate ? T(0) : keep_scale;
    out[i] = x.data()[i] * (*keep)[i];
  }
  return make_result<T>(x.rows(), x.cols(), std::move(out), "dropout", {x.shared()}, [keep](Node<T>& self) {
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * (*keep)[i];
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                    std::size_t heads, double dropout_rate, Rng* rng) {
  require_same("attention", q, k);
  require_same("attention", q, v);
  mask.validate();
  const std::size_t seq = mask.size();
  if (seq == 0 || q.rows() % seq != 0)
    shape_error("attention", dims(q) + " rows not a multiple of mask size " + std::to_string(seq));
  if (heads == 0 || q.cols() % heads != 0)
    shape_error("attention", "model dim " + std::to_string(q.cols()) + " not divisible by " + std::to_string(heads) +
                                 " heads");
  kernels::AttentionShape shape{q.rows() / seq, seq, heads, q.cols() / heads};
  auto pattern = std::make_shared<kernels::AttentionPattern>(mask.pattern());
  const std::size_t weights = shape.batch * heads * pattern->nnz();
  auto probs = std::make_shared<std::vector<T>>(weights);
  auto keep = std::make_shared<std::vector<T>>();
  if (rng != nullptr && dropout_rate > 0.0) {
    const T keep_scale = T(1) / static_cast<T>(1.0 - dropout_rate);
    keep->resize(weights);
    for (auto& w : *keep) w = rng->uniform() < dropout_rate ? T(0) : keep_scale;
  }
  std::vector<T> out(q.size());
  kernels::attention_forward<T>(shape, *pattern, q.data(), k.data(), v.data(), *keep, probs->data(), out.data());
  return make_result<T>(q.rows(), q.cols(), std::move(out), "attention", {q.shared(), k.shared(), v.shared()},
                        [shape, pattern, probs, keep](Node<T>& self) {
                          // The kernel writes all three gradients; route unused ones to scratch.
                          std::vector<T> scratch;
                          T* d[3];
                          for (std::size_t i = 0; i < 3; ++i) {
                            d[i] = grad_of(self, i);
                            if (!d[i]) {
                              if (scratch.empty()) scratch.assign(self.value.size(), T(0));
                              d[i] = scratch.data();
                            }
                          }
                          kernels::attention_backward<T>(shape, *pattern, self.inputs[0]->value.data(),
                                                         self.inputs[1]->value.data(), self.inputs[2]->value.data(),
                                                         *keep, probs->data(), self.grad.data(), d[0], d[1], d[2]);
                        });
}

template <typename T>
Tensor<T> kl_diag_gaussian(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same("kl_diag_gaussian", mu, logvar);
  T s = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const T m = mu.data()[i], lv = logvar.data()[i];
    s += m * m + std::exp(lv) - T(1) - lv;
  }
  return make_result<T>(1, 1, {T(0.5) * s}, "kl_diag_gaussian", {mu.shared(), logvar.shared()}, [](Node<T>& self) {
    const T g = self.grad[0];
    const auto& m = self.inputs[0]->value;
    const auto& lv = self.inputs[1]->value;
    if (T* d = grad_of(self, 0))
      for (std::size_t i = 0; i < m.size(); ++i) d[i] += g * m[i];
    if (T* d = grad_of(self, 1))
      for (std::size_t i = 0; i < lv.size(); ++i) d[i] += g * T(0.5) * (std::exp(lv[i]) - T(1));
  });
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, Rng& rng) {
  require_same("reparameterize", mu, logvar);
  auto eps = std::make_shared<std::vector<T>>(mu.size());
  std::vector<T> out(mu.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*eps)[i] = static_cast<T>(rng.normal());
    out[i] = mu.data()[i] + std::exp(T(0.5) * logvar.data()[i]) * (*eps)[i];
  }
  return make_result<T>(mu.rows(), mu.cols(), std::move(out), "reparameterize", {mu.shared(), logvar.shared()},
                        [eps](Node<T>& self) {
                          const auto& lv = self.inputs[1]->value;
                          if (T* d = grad_of(self, 0))
                            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
                          if (T* d = grad_of(self, 1))
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              d[i] += self.grad[i] * (*eps)[i] * T(0.5) * std::exp(T(0.5) * lv[i]);
                        });
}

#define EXPT_INSTANTIATE_OPS(T)                                                                                   \
  template T gelu_scalar<T>(T);                                                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> squared_error<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                               \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                               \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<std::size_t>&);                           \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng*);                                                  \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionMask&,     \
                                  std::size_t, double, Rng*);                                                     \
  template Tensor<T> kl_diag_gaussian<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> reparameterize<T>(const Tensor<T>&, const Tensor<T>&, Rng&);

EXPT_INSTANTIATE_OPS(float)
EXPT_INSTANTIATE_OPS(double)

}  // namespace expt::nn
