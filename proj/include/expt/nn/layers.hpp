#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "expt/nn/mask.hpp"
#include "expt/nn/ops.hpp"
#include "expt/nn/tensor.hpp"
#include "expt/rng.hpp"

namespace expt::nn {

/// Ordered, named collection of trainable tensors. Names are unique and the
/// insertion order is the serialization order.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> uniform(const std::string& name, std::size_t rows, std::size_t cols, double bound, Rng& rng);
  Tensor<T> constant(const std::string& name, std::size_t rows, std::size_t cols, T value);

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  /// Throws InputError for an unknown name.
  Tensor<T> find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Tensor<T> add(const std::string& name, Tensor<T> t);
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Training-mode switch and the RNG stream that dropout and sampling draw from.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  Rng* dropout_rng() const { return training ? rng : nullptr; }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [1, out]

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

enum class Activation { kGelu, kTanh };

/// `depth` linear maps in -> hidden -> ... -> hidden -> out with the
/// activation between them (none after the last).
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      std::size_t depth, Activation act, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  const std::vector<Linear<T>>& layers() const { return layers_; }

 private:
  std::vector<Linear<T>> layers_;
  Activation act_ = Activation::kGelu;
};

struct TransformerLayerConfig {
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t ff_hidden = 512;
  double dropout = 0.1;
};

/// Pre-norm block: x + Attn(LN(x)), then + FF(LN(.)) with a GELU feedforward.
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterStore<T>& store, const std::string& name, const TransformerLayerConfig& cfg, Rng& rng);

  /// tokens: [batch * mask.size(), dim].
  Tensor<T> operator()(const Tensor<T>& tokens, const AttentionMask& mask, const ForwardContext& ctx) const;

  LayerNorm<T> norm1, norm2;
  Linear<T> qkv, proj, ff1, ff2;

 private:
  TransformerLayerConfig cfg_;
};

template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore<T>& store, const std::string& name, std::size_t layers,
                     const TransformerLayerConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& tokens, const AttentionMask& mask, const ForwardContext& ctx) const;

 private:
  std::vector<TransformerLayer<T>> layers_;
  LayerNorm<T> final_norm_;
};

}  // namespace expt::nn
