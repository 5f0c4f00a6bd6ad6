#pragma once

// Differentiable operations over Tensor. Shapes are checked eagerly and a
// mismatch throws InputError naming the operation.

#include <cstddef>
#include <vector>

#include "expt/kernels.hpp"
#include "expt/nn/mask.hpp"
#include "expt/nn/tensor.hpp"
#include "expt/rng.hpp"

namespace expt::nn {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[n, in] * W[in, out] + bias[1, out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

/// Sum of all elements, as a 1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// sum((a - b)^2)
template <typename T>
Tensor<T> squared_error(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// out[r] = x[index[r]]; gradient scatters back with accumulation.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

/// Inverted dropout; identity when rng is null or rate is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng* rng);

/// Multi-head attention over `batch` independent sequences of length
/// mask.size() stacked along rows. q, k, v: [batch*seq, heads*head_dim].
/// When rng is non-null and dropout_rate > 0 the attention weights are
/// dropped out.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                    std::size_t heads, double dropout_rate = 0.0, Rng* rng = nullptr);

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar): KL(N(mu, diag exp(logvar)) || N(0, I)).
template <typename T>
Tensor<T> kl_diag_gaussian(const Tensor<T>& mu, const Tensor<T>& logvar);

/// mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from rng.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, Rng& rng);

template <typename T>
T gelu_scalar(T x);

}  // namespace expt::nn
