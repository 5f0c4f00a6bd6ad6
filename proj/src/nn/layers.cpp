#include "expt/nn/layers.hpp"

#include <cmath>

#include "expt/errors.hpp"

namespace expt::nn {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Tensor<T> t) {
  for (const auto& [existing, _] : entries_)
    if (existing == name) throw InputError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::uniform(const std::string& name, std::size_t rows, std::size_t cols, double bound,
                                     Rng& rng) {
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return add(name, Tensor<T>::from(std::move(v), rows, cols, true));
}

template <typename T>
Tensor<T> ParameterStore<T>::constant(const std::string& name, std::size_t rows, std::size_t cols, T value) {
  return add(name, Tensor<T>::from(std::vector<T>(rows * cols, value), rows, cols, true));
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> ParameterStore<T>::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw InputError("unknown parameter '" + name + "'");
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.uniform(name + ".weight", in, out, bound, rng);
  bias = store.uniform(name + ".bias", 1, out, bound, rng);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
  gain = store.constant(name + ".gain", 1, dim, T(1));
  bias = store.constant(name + ".bias", 1, dim, T(0));
}

template <typename T>
Mlp<T>::Mlp(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
            std::size_t depth, Activation act, Rng& rng)
    : act_(act) {
  if (depth == 0) throw ConfigError(name + ": MLP depth must be >= 1");
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t fan_in = i == 0 ? in : hidden;
    const std::size_t fan_out = i + 1 == depth ? out : hidden;
    layers_.emplace_back(store, name + "." + std::to_string(i), fan_in, fan_out, rng);
  }
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = act_ == Activation::kGelu ? gelu(h) : nn::tanh(h);
  }
  return h;
}

template <typename T>
TransformerLayer<T>::TransformerLayer(ParameterStore<T>& store, const std::string& name,
                                      const TransformerLayerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0)
    throw ConfigError(name + ": dim " + std::to_string(cfg.dim) + " not divisible by heads " +
                      std::to_string(cfg.heads));
  norm1 = LayerNorm<T>(store, name + ".norm1", cfg.dim);
  qkv = Linear<T>(store, name + ".qkv", cfg.dim, 3 * cfg.dim, rng);
  proj = Linear<T>(store, name + ".proj", cfg.dim, cfg.dim, rng);
  norm2 = LayerNorm<T>(store, name + ".norm2", cfg.dim);
  ff1 = Linear<T>(store, name + ".ff1", cfg.dim, cfg.ff_hidden, rng);
  ff2 = Linear<T>(store, name + ".ff2", cfg.ff_hidden, cfg.dim, rng);
}

template <typename T>
Tensor<T> TransformerLayer<T>::operator()(const Tensor<T>& tokens, const AttentionMask& mask,
                                          const ForwardContext& ctx) const {
  if (tokens.cols() != cfg_.dim)
    throw InputError("transformer_layer: token dim " + std::to_string(tokens.cols()) + " != " +
                     std::to_string(cfg_.dim));
  const std::size_t D = cfg_.dim;
  Tensor<T> a = qkv(norm1(tokens));
  Tensor<T> att = attention(slice_cols(a, 0, D), slice_cols(a, D, 2 * D), slice_cols(a, 2 * D, 3 * D), mask,
                            cfg_.heads, cfg_.dropout, ctx.dropout_rng());
  Tensor<T> x = add(tokens, proj(att));
  Tensor<T> f = ff2(gelu(ff1(norm2(x))));
  return add(x, dropout(f, cfg_.dropout, ctx.dropout_rng()));
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(ParameterStore<T>& store, const std::string& name, std::size_t layers,
                                          const TransformerLayerConfig& cfg, Rng& rng) {
  for (std::size_t i = 0; i < layers; ++i)
    layers_.emplace_back(store, name + ".layer" + std::to_string(i), cfg, rng);
  final_norm_ = LayerNorm<T>(store, name + ".norm", cfg.dim);
}

template <typename T>
Tensor<T> TransformerEncoder<T>::operator()(const Tensor<T>& tokens, const AttentionMask& mask,
                                            const ForwardContext& ctx) const {
  Tensor<T> h = tokens;
  for (const auto& layer : layers_) h = layer(h, mask, ctx);
  return final_norm_(h);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template class Mlp<float>;
template class Mlp<double>;
template class TransformerLayer<float>;
template class TransformerLayer<double>;
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

}  // namespace expt::nn
