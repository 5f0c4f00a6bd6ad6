#pragma once

// ExPT: an in-context transformer encoder over (y, x) context pairs and
// target y tokens, followed by a conditional VAE that models p(x | h).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "expt/nn/layers.hpp"
#include "expt/nn/mask.hpp"
#include "expt/nn/tensor.hpp"
#include "expt/rng.hpp"
#include "expt/synthfn.hpp"

namespace expt::model {

using synthfn::Episode;
using synthfn::Points;
using synthfn::Values;

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t dim = 128;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t ff_mult = 4;
};

struct VaeConfig {
  std::size_t enc_layers = 4;
  std::size_t dec_layers = 4;
  std::size_t hidden = 512;
  std::size_t latent = 32;
};

struct ExPTConfig {
  std::size_t d_x = 32;
  EncoderConfig encoder;
  VaeConfig vae;
  double kl_weight = 1.0;
  double recon_variance = 1.0;
  /// Multiplier applied to z-scored y values at adaptation time.
  double match_scale = 1.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Context rows i < m attend exactly the context; target rows i >= m attend
/// the context and themselves. Throws InputError unless 0 < m < n.
nn::AttentionMask build_mask(std::size_t m, std::size_t n);

/// Labeled points an in-context model conditions on.
struct ContextSet {
  Points x;
  Values y;
  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

/// Affine map applied to y values before they reach the network at
/// adaptation: (y - mean) / max(std, 1e-6) * match_scale, statistics taken
/// over the context.
struct YScaling {
  double mean = 0.0;
  double stddev = 1.0;
  double match_scale = 1.0;

  static YScaling fit(const Values& y, double match_scale);
  double apply(double y) const { return (y - mean) / stddev * match_scale; }
  Values apply(const Values& y) const;
};

/// Pair/target embedders and the masked transformer stack shared by ExPT and
/// the forward baseline. Targets carry `target_width` features per token.
template <typename T>
class InContextEncoder {
 public:
  InContextEncoder() = default;
  InContextEncoder(nn::ParameterStore<T>& store, std::size_t d_x, std::size_t target_width,
                   const EncoderConfig& cfg, Rng& rng);

  /// Encodes `batch` sequences with m context pairs and t target tokens each.
  /// pair_tokens: [batch*m, d_x+1] rows (y, x); target_tokens: [batch*t,
  /// target_width]. Returns hidden states of the target positions [batch*t, D].
  nn::Tensor<T> encode_targets(const nn::Tensor<T>& pair_tokens, const nn::Tensor<T>& target_tokens,
                               std::size_t batch, std::size_t m, std::size_t t, const nn::ForwardContext& ctx) const;

  /// Hidden states of every token [batch*(m+t), D] in sequence order.
  nn::Tensor<T> encode_all(const nn::Tensor<T>& pair_tokens, const nn::Tensor<T>& target_tokens, std::size_t batch,
                           std::size_t m, std::size_t t, const nn::ForwardContext& ctx) const;

  std::size_t d_x() const { return d_x_; }
  std::size_t dim() const { return cfg_.dim; }

  nn::Linear<T> pair_embedder;
  nn::Linear<T> target_embedder;

 private:
  std::size_t d_x_ = 0;
  EncoderConfig cfg_;
  nn::TransformerEncoder<T> encoder_;
};

/// Rows (y, x) for every context point of every context set, in order.
template <typename T>
nn::Tensor<T> pair_tokens(std::span<const ContextSet* const> contexts, const YScaling* scaling = nullptr);

template <typename T>
nn::Tensor<T> to_tensor(const Points& x);
template <typename T>
nn::Tensor<T> to_tensor(const Values& y);
template <typename T>
Points to_points(const nn::Tensor<T>& t);

template <typename T>
class ExPTModel {
 public:
  ExPTModel(const ExPTConfig& config, std::uint64_t seed);
  ExPTModel(const ExPTModel&) = delete;
  ExPTModel& operator=(const ExPTModel&) = delete;
  ExPTModel(ExPTModel&&) = default;

  const ExPTConfig& config() const { return config_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }
  const InContextEncoder<T>& encoder() const { return encoder_; }

  /// Hidden states for the target y values, one row per target [T, D].
  nn::Tensor<T> embed_and_encode(const ContextSet& context, const Values& target_y,
                                 const nn::ForwardContext& ctx) const;

  /// Sum over rows of beta * KL(q(z|x,h) || N(0,I)) + |x - decode(z,h)|^2 / (2 var),
  /// z drawn by reparameterization from rng.
  nn::Tensor<T> elbo_sum(const nn::Tensor<T>& x, const nn::Tensor<T>& h, Rng& rng) const;
  /// Single-point negative ELBO.
  nn::Tensor<T> elbo_loss(const nn::Tensor<T>& x, const nn::Tensor<T>& h, Rng& rng) const { return elbo_sum(x, h, rng); }

  /// Mean over targets of the negative ELBO for one episode.
  nn::Tensor<T> pretrain_loss(const Episode& episode, Rng& rng, const nn::ForwardContext& ctx) const;
  /// Mean of pretrain_loss over episodes of equal shape, in one batched pass.
  nn::Tensor<T> batch_loss(std::span<const Episode> episodes, Rng& rng, const nn::ForwardContext& ctx) const;

  /// Decoder mean for latent codes z [R, k] and hidden states h [R, D].
  nn::Tensor<T> decode(const nn::Tensor<T>& z, const nn::Tensor<T>& h) const;

  /// Q candidates conditioned on the context and y_star, each decoded from an
  /// independent z ~ N(0, I). Candidates are clipped to `box` when given.
  Points generate_candidates(const ContextSet& few_shot, double y_star, std::size_t q, Rng& rng,
                             std::optional<synthfn::Interval> box) const;

 private:
  ExPTConfig config_;
  nn::ParameterStore<T> store_;
  InContextEncoder<T> encoder_;
  nn::Mlp<T> vae_encoder_;
  nn::Mlp<T> vae_decoder_;
};

}  // namespace expt::model
