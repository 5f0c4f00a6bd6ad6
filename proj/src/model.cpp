#include "expt/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "expt/errors.hpp"
#include "expt/nn/ops.hpp"

namespace expt::model {

void ExPTConfig::validate() const {
  if (d_x == 0) throw ConfigError("model.d_x must be positive");
  if (encoder.dim == 0 || encoder.heads == 0 || encoder.dim % encoder.heads != 0)
    throw ConfigError("model.encoder.dim must be divisible by model.encoder.heads");
  if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) throw ConfigError("model.encoder.dropout must lie in [0, 1)");
  if (encoder.ff_mult == 0) throw ConfigError("model.encoder.ff_mult must be positive");
  if (vae.latent == 0) throw ConfigError("model.vae.latent must be >= 1");
  if (vae.enc_layers == 0 || vae.dec_layers == 0) throw ConfigError("model.vae layer counts must be >= 1");
  if (vae.hidden == 0) throw ConfigError("model.vae.hidden must be positive");
  if (!(kl_weight >= 0.0)) throw ConfigError("model.kl_weight must be non-negative");
  if (!(recon_variance > 0.0)) throw ConfigError("model.recon_variance must be positive");
  if (!(match_scale > 0.0)) throw ConfigError("model.match_scale must be positive");
}

nn::AttentionMask build_mask(std::size_t m, std::size_t n) {
  if (m == 0 || m >= n)
    throw InputError("build_mask: need 0 < m < N, got m=" + std::to_string(m) + " N=" + std::to_string(n));
  nn::AttentionMask mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask.set(i, j, true);
    if (i >= m) mask.set(i, i, true);
  }
  return mask;
}

YScaling YScaling::fit(const Values& y, double match_scale) {
  YScaling s;
  s.match_scale = match_scale;
  if (y.size() == 0) return s;
  s.mean = y.mean();
  const double var = (y.array() - s.mean).square().sum() / static_cast<double>(y.size());
  s.stddev = std::max(std::sqrt(var), 1e-6);
  return s;
}

Values YScaling::apply(const Values& y) const {
  Values out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = apply(y[i]);
  return out;
}

template <typename T>
nn::Tensor<T> to_tensor(const Points& x) {
  std::vector<T> v(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) v[static_cast<std::size_t>(i * x.cols() + c)] = static_cast<T>(x(i, c));
  return nn::Tensor<T>::from(std::move(v), static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(x.cols()));
}

template <typename T>
nn::Tensor<T> to_tensor(const Values& y) {
  std::vector<T> v(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<T>(y[i]);
  return nn::Tensor<T>::from(std::move(v), static_cast<std::size_t>(y.size()), 1);
}

template <typename T>
Points to_points(const nn::Tensor<T>& t) {
  Points p(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t c = 0; c < t.cols(); ++c)
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<double>(t.at(i, c));
  return p;
}

template <typename T>
nn::Tensor<T> pair_tokens(std::span<const ContextSet* const> contexts, const YScaling* scaling) {
  std::size_t rows = 0, d = 0;
  for (const auto* c : contexts) {
    rows += c->size();
    d = static_cast<std::size_t>(c->x.cols());
  }
  std::vector<T> v;
  v.reserve(rows * (d + 1));
  for (const auto* c : contexts) {
    if (static_cast<std::size_t>(c->x.cols()) != d) throw InputError("pair_tokens: mixed context dimensions");
    if (c->y.size() != c->x.rows()) throw InputError("pair_tokens: context x/y row count mismatch");
    for (Eigen::Index i = 0; i < c->x.rows(); ++i) {
      v.push_back(static_cast<T>(scaling ? scaling->apply(c->y[i]) : c->y[i]));
      for (Eigen::Index k = 0; k < c->x.cols(); ++k) v.push_back(static_cast<T>(c->x(i, k)));
    }
  }
  return nn::Tensor<T>::from(std::move(v), rows, d + 1);
}

template <typename T>
InContextEncoder<T>::InContextEncoder(nn::ParameterStore<T>& store, std::size_t d_x, std::size_t target_width,
                                      const EncoderConfig& cfg, Rng& rng)
    : d_x_(d_x), cfg_(cfg) {
  pair_embedder = nn::Linear<T>(store, "pair_embedder", d_x + 1, cfg.dim, rng);
  target_embedder = nn::Linear<T>(store, "target_embedder", target_width, cfg.dim, rng);
  nn::TransformerLayerConfig layer{cfg.dim, cfg.heads, cfg.ff_mult * cfg.dim, cfg.dropout};
  encoder_ = nn::TransformerEncoder<T>(store, "encoder", cfg.layers, layer, rng);
}

template <typename T>
nn::Tensor<T> InContextEncoder<T>::encode_all(const nn::Tensor<T>& pairs, const nn::Tensor<T>& targets,
                                              std::size_t batch, std::size_t m, std::size_t t,
                                              const nn::ForwardContext& ctx) const {
  if (pairs.cols() != d_x_ + 1)
    throw InputError("encoder: context tokens have " + std::to_string(pairs.cols() - 1) + " x-features, model expects " +
                     std::to_string(d_x_));
  if (pairs.rows() != batch * m || targets.rows() != batch * t)
    throw InputError("encoder: token counts do not match batch layout");
  nn::Tensor<T> embedded = nn::concat_rows<T>({pair_embedder(pairs), target_embedder(targets)});
  const std::size_t n = m + t;
  std::vector<std::size_t> order;
  order.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) order.push_back(b * m + i);
    for (std::size_t i = 0; i < t; ++i) order.push_back(batch * m + b * t + i);
  }
  return encoder_(nn::gather_rows(embedded, order), build_mask(m, n), ctx);
}

template <typename T>
nn::Tensor<T> InContextEncoder<T>::encode_targets(const nn::Tensor<T>& pairs, const nn::Tensor<T>& targets,
                                                  std::size_t batch, std::size_t m, std::size_t t,
                                                  const nn::ForwardContext& ctx) const {
  nn::Tensor<T> all = encode_all(pairs, targets, batch, m, t, ctx);
  std::vector<std::size_t> rows;
  rows.reserve(batch * t);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < t; ++i) rows.push_back(b * (m + t) + m + i);
  return nn::gather_rows(all, rows);
}

template <typename T>
ExPTModel<T>::ExPTModel(const ExPTConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::stream(seed, 0x65787074);
  encoder_ = InContextEncoder<T>(store_, config.d_x, 1, config.encoder, rng);
  const std::size_t D = config.encoder.dim;
  const auto& v = config.vae;
  vae_encoder_ = nn::Mlp<T>(store_, "vae_encoder", config.d_x + D, v.hidden, 2 * v.latent, v.enc_layers,
                            nn::Activation::kGelu, rng);
  vae_decoder_ = nn::Mlp<T>(store_, "vae_decoder", v.latent + D, v.hidden, config.d_x, v.dec_layers,
                            nn::Activation::kGelu, rng);
}

template <typename T>
nn::Tensor<T> ExPTModel<T>::embed_and_encode(const ContextSet& context, const Values& target_y,
                                             const nn::ForwardContext& ctx) const {
  if (context.size() == 0) throw InputError("embed_and_encode: empty context");
  if (target_y.size() == 0) throw InputError("embed_and_encode: no targets");
  if (static_cast<std::size_t>(context.x.cols()) != config_.d_x)
    throw InputError("embed_and_encode: context dimension " + std::to_string(context.x.cols()) + " != model d_x " +
                     std::to_string(config_.d_x));
  const ContextSet* ptr = &context;
  return encoder_.encode_targets(pair_tokens<T>(std::span<const ContextSet* const>(&ptr, 1)), to_tensor<T>(target_y),
                                 1, context.size(), static_cast<std::size_t>(target_y.size()), ctx);
}

template <typename T>
nn::Tensor<T> ExPTModel<T>::decode(const nn::Tensor<T>& z, const nn::Tensor<T>& h) const {
  return vae_decoder_(nn::concat_cols<T>({z, h}));
}

template <typename T>
nn::Tensor<T> ExPTModel<T>::elbo_sum(const nn::Tensor<T>& x, const nn::Tensor<T>& h, Rng& rng) const {
  const std::size_t k = config_.vae.latent;
  nn::Tensor<T> stats = vae_encoder_(nn::concat_cols<T>({x, h}));
  nn::Tensor<T> mu = nn::slice_cols(stats, 0, k);
  nn::Tensor<T> logvar = nn::slice_cols(stats, k, 2 * k);
  nn::Tensor<T> z = nn::reparameterize(mu, logvar, rng);
  nn::Tensor<T> recon = nn::scale(nn::squared_error(decode(z, h), x), static_cast<T>(0.5 / config_.recon_variance));
  if (config_.kl_weight == 0.0) return recon;
  return nn::add(nn::scale(nn::kl_diag_gaussian(mu, logvar), static_cast<T>(config_.kl_weight)), recon);
}

template <typename T>
nn::Tensor<T> ExPTModel<T>::pretrain_loss(const Episode& episode, Rng& rng, const nn::ForwardContext& ctx) const {
  return batch_loss(std::span<const Episode>(&episode, 1), rng, ctx);
}

template <typename T>
nn::Tensor<T> ExPTModel<T>::batch_loss(std::span<const Episode> episodes, Rng& rng,
                                       const nn::ForwardContext& ctx) const {
  if (episodes.empty()) throw InputError("batch_loss: empty batch");
  const std::size_t m = episodes[0].context_size();
  const std::size_t t = episodes[0].target_size();
  std::vector<ContextSet> contexts;
  contexts.reserve(episodes.size());
  Points target_x(static_cast<Eigen::Index>(episodes.size() * t), static_cast<Eigen::Index>(config_.d_x));
  Values target_y(static_cast<Eigen::Index>(episodes.size() * t));
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    const Episode& ep = episodes[b];
    if (ep.context_size() != m || ep.target_size() != t) throw InputError("batch_loss: episodes differ in shape");
    if (ep.dim() != config_.d_x)
      throw InputError("batch_loss: episode dimension " + std::to_string(ep.dim()) + " != model d_x " +
                       std::to_string(config_.d_x));
    contexts.push_back({ep.context_x, ep.context_y});
    target_x.middleRows(static_cast<Eigen::Index>(b * t), static_cast<Eigen::Index>(t)) = ep.target_x;
    target_y.segment(static_cast<Eigen::Index>(b * t), static_cast<Eigen::Index>(t)) = ep.target_y;
  }
  std::vector<const ContextSet*> ptrs;
  for (const auto& c : contexts) ptrs.push_back(&c);
  nn::Tensor<T> h = encoder_.encode_targets(pair_tokens<T>(ptrs), to_tensor<T>(target_y), episodes.size(), m, t, ctx);
  nn::Tensor<T> total = elbo_sum(to_tensor<T>(target_x), h, rng);
  return nn::scale(total, static_cast<T>(1.0 / static_cast<double>(episodes.size() * t)));
}

template <typename T>
Points ExPTModel<T>::generate_candidates(const ContextSet& few_shot, double y_star, std::size_t q, Rng& rng,
                                         std::optional<synthfn::Interval> box) const {
  if (few_shot.size() == 0) throw InputError("generate_candidates: empty context");
  if (q == 0) throw InputError("generate_candidates: Q must be positive");
  nn::NoGradGuard no_grad;
  const YScaling scaling = YScaling::fit(few_shot.y, config_.match_scale);
  const ContextSet* ptr = &few_shot;
  std::vector<T> targets(q, static_cast<T>(scaling.apply(y_star)));
  nn::Tensor<T> h = encoder_.encode_targets(pair_tokens<T>(std::span<const ContextSet* const>(&ptr, 1), &scaling),
                                            nn::Tensor<T>::from(std::move(targets), q, 1), 1, few_shot.size(), q,
                                            nn::ForwardContext{});
  std::vector<T> zv(q * config_.vae.latent);
  for (auto& z : zv) z = static_cast<T>(rng.normal());
  Points out = to_points(decode(nn::Tensor<T>::from(std::move(zv), q, config_.vae.latent), h));
  if (box) out = out.cwiseMax(box->lo).cwiseMin(box->hi);
  return out;
}

template nn::Tensor<float> to_tensor<float>(const Points&);
template nn::Tensor<double> to_tensor<double>(const Points&);
template nn::Tensor<float> to_tensor<float>(const Values&);
template nn::Tensor<double> to_tensor<double>(const Values&);
template Points to_points<float>(const nn::Tensor<float>&);
template Points to_points<double>(const nn::Tensor<double>&);
template nn::Tensor<float> pair_tokens<float>(std::span<const ContextSet* const>, const YScaling*);
template nn::Tensor<double> pair_tokens<double>(std::span<const ContextSet* const>, const YScaling*);
template class InContextEncoder<float>;
template class InContextEncoder<double>;
template class ExPTModel<float>;
template class ExPTModel<double>;

}  // namespace expt::model
