#include "agentpose/score_agent.hpp"

#include <cmath>
#include <numeric>

#include "agentpose/error.hpp"

namespace agentpose::agent {

using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;
using vpsde::NoiseSchedule;

std::size_t ScoreNetworkConfig::bottleneck() const {
  return std::max(min_bottleneck, width / std::max<std::size_t>(bottleneck_ratio, 1));
}

std::vector<double> timestep_embedding(double t, std::size_t embed_dim) {
  const std::size_t half = embed_dim / 2;
  std::vector<double> e(embed_dim, 0.0);
  for (std::size_t j = 0; j < half; ++j) {
    const double frac = half > 1 ? static_cast<double>(j) / static_cast<double>(half - 1) : 0.0;
    const double w = std::pow(64.0, frac);
    e[j] = std::sin(w * t);
    e[half + j] = std::cos(w * t);
  }
  return e;
}

ScoreNetwork::ScoreNetwork(const ScoreNetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.channels == 0 || cfg.width == 0 || cfg.embed_dim < 2)
    throw InvalidArgument("ScoreNetwork: channels, width and embed_dim must be positive");
  const std::size_t bn = cfg.bottleneck();
  stem_ = nn::make_linear(cfg.channels, cfg.width, rng);
  stem_.register_in(params_, "stem");
  for (std::size_t b = 0; b < 2; ++b) {
    Block blk{nn::make_linear(cfg.width, bn, rng), nn::make_linear(bn, bn, rng),
              nn::make_linear(bn, cfg.width, rng), nn::make_linear(cfg.embed_dim, bn, rng)};
    const std::string p = "block" + std::to_string(b);
    blk.reduce.register_in(params_, p + ".reduce");
    blk.transform.register_in(params_, p + ".transform");
    blk.expand.register_in(params_, p + ".expand");
    blk.time_bias.register_in(params_, p + ".time_bias");
    blocks_.push_back(std::move(blk));
  }
  head_ = nn::make_zero_linear(cfg.width, cfg.channels);
  head_.register_in(params_, "head");
}

NdArray ScoreNetwork::forward(const NdArray& x, std::span<const double> t, bool frozen) const {
  if (x.ndim() != 4) throw InvalidArgument("score_forward: expected B x d x H x W");
  if (x.dim(1) != cfg_.channels)
    throw InvalidArgument("score_forward: network expects " + std::to_string(cfg_.channels) +
                          " channels, got " + std::to_string(x.dim(1)));
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
  if (t.size() != b && t.size() != 1) throw InvalidArgument("score_forward: need one timestep per batch element");

  std::vector<double> emb;
  emb.reserve(b * hw * cfg_.embed_dim);
  for (std::size_t n = 0; n < b; ++n) {
    const double tn = t.size() == 1 ? t[0] : t[n];
    if (!(tn >= 0.0 && tn <= 1.0)) throw InvalidArgument("score_forward: t must lie in [0, 1]");
    const auto e = timestep_embedding(tn, cfg_.embed_dim);
    for (std::size_t p = 0; p < hw; ++p) emb.insert(emb.end(), e.begin(), e.end());
  }
  const NdArray temb = NdArray::from({b * hw, cfg_.embed_dim}, std::move(emb));

  NdArray hidden = stem_.forward(nchw_to_rows(x), frozen);
  for (const auto& blk : blocks_) {
    NdArray u = gelu(add(blk.reduce.forward(hidden, frozen), blk.time_bias.forward(temb, frozen)));
    NdArray v = gelu(blk.transform.forward(u, frozen));
    hidden = add(hidden, blk.expand.forward(v, frozen));
  }
  return rows_to_nchw(head_.forward(hidden, frozen), b, h, w);
}

NdArray ScoreNetwork::forward(const NdArray& x, double t, bool frozen) const {
  const double ts[1] = {t};
  return forward(x, std::span<const double>(ts, 1), frozen);
}

vpsde::ScoreFn make_score_fn(const ScoreNetwork& net, ScoreTarget target, const NoiseSchedule& schedule,
                             bool frozen) {
  return [&net, target, &schedule, frozen](const NdArray& x, double t) {
    NdArray out = net.forward(x, t, frozen);
    if (target == ScoreTarget::kConsistent) return out;
    return scale(out, -1.0 / schedule.marginal_coeffs(t).noise_std);
  };
}

DsmDraw draw_dsm(const Shape& shape, const NoiseSchedule& /*schedule*/, Rng& rng) {
  if (shape.size() != 4) throw InvalidArgument("draw_dsm: expected B x d x H x W");
  DsmDraw d;
  d.t.resize(shape[0]);
  for (auto& t : d.t) t = rng.uniform();
  d.z = sample_standard_normal(shape, rng);
  return d;
}

NdArray dsm_loss(const BatchScoreFn& model, const FeatureBatch& latent_teacher, const DsmDraw& draw,
                 const NoiseSchedule& schedule, const DsmOptions& opts) {
  if (latent_teacher.origin() != FeatureOrigin::kLatentTeacher)
    throw InvalidArgument("dsm_loss: expected latent teacher features, got " + to_string(latent_teacher.origin()));
  const NdArray& x0 = latent_teacher.values();
  if (x0.requires_grad()) throw InvalidArgument("dsm_loss: latent teacher features must be detached");
  if (draw.z.shape() != x0.shape() || draw.t.size() != x0.dim(0))
    throw InvalidArgument("dsm_loss: draw does not match the batch");

  const std::size_t b = x0.dim(0), hw = x0.dim(2) * x0.dim(3), per = x0.size() / b;
  std::vector<double> noisy(x0.size()), sigma_rows(b * hw);
  for (std::size_t n = 0; n < b; ++n) {
    const auto c = schedule.marginal_coeffs(draw.t[n]);
    for (std::size_t i = 0; i < per; ++i) noisy[n * per + i] = c.mean_scale * x0[n * per + i] + c.noise_std * draw.z[n * per + i];
    for (std::size_t p = 0; p < hw; ++p) sigma_rows[n * hw + p] = c.noise_std;
  }
  const NdArray x_t = NdArray::from(x0.shape(), std::move(noisy));
  const NdArray s = nchw_to_rows(model(x_t, draw.t));
  const NdArray z = nchw_to_rows(draw.z);

  NdArray residual;
  if (opts.target == ScoreTarget::kPaperLiteral) {
    residual = sub(s, z);
  } else if (opts.weighting == DsmWeighting::kSigmaSquared) {
    residual = add(scale_rows(s, sigma_rows), z);
  } else {
    std::vector<double> inv(sigma_rows.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / sigma_rows[i];
    residual = add(s, scale_rows(z, inv));
  }
  NdArray loss = mean(square(residual));
  if (!std::isfinite(loss.item())) throw NumericError("dsm_loss: non-finite loss");
  return loss;
}

NdArray dsm_loss(const ScoreNetwork& net, const FeatureBatch& latent_teacher, const NoiseSchedule& schedule,
                 Rng& rng, const DsmOptions& opts) {
  const DsmDraw draw = draw_dsm(latent_teacher.values().shape(), schedule, rng);
  return dsm_loss([&net](const NdArray& x, std::span<const double> t) { return net.forward(x, t); },
                  latent_teacher, draw, schedule, opts);
}

NdArray analytic_gaussian_score(const NdArray& x, double mean, double variance, double t,
                                const NoiseSchedule& schedule) {
  if (!(variance > 0.0)) throw InvalidArgument("analytic_gaussian_score: variance must be positive");
  const auto c = schedule.marginal_coeffs(t);
  const double m_t = c.mean_scale * mean;
  const double v_t = c.mean_scale * c.mean_scale * variance + c.noise_std * c.noise_std;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (m_t - x[i]) / v_t;
  return NdArray::from(x.shape(), std::move(out));
}

NdArray gather_batch(const NdArray& x, std::span<const std::size_t> indices) {
  if (x.ndim() < 1) throw InvalidArgument("gather_batch: empty shape");
  const std::size_t per = x.size() / x.dim(0);
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto i : indices) {
    if (i >= x.dim(0)) throw InvalidArgument("gather_batch: index out of range");
    const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(per));
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  return NdArray::from(std::move(shape), std::move(out));
}

void shuffle(std::span<std::size_t> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.uniform_index(i)]);
}

AgentTrainResult train_agent(const FeatureBatch& teacher_latents, const NoiseSchedule& schedule,
                             const AgentTrainConfig& cfg) {
  const NdArray& data = teacher_latents.values();
  if (data.dim(0) == 0) throw InvalidArgument("train_agent: empty dataset");
  if (teacher_latents.origin() != FeatureOrigin::kLatentTeacher)
    throw InvalidArgument("train_agent: expected latent teacher features");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw InvalidArgument("train_agent: epochs and batch size must be positive");

  Rng init_rng = Rng(cfg.seed).split(0);
  Rng rng = Rng(cfg.seed).split(1);
  ScoreNetworkConfig net_cfg = cfg.net;
  net_cfg.channels = data.dim(1);
  AgentTrainResult result{ScoreNetwork(net_cfg, init_rng), {}};
  AdamW opt(result.net.parameters().arrays(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  const std::size_t n = data.dim(0);
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t first = s * cfg.batch_size;
      const std::size_t count = std::min(cfg.batch_size, n - first);
      FeatureBatch batch(gather_batch(data, std::span(order).subspan(first, count)), FeatureOrigin::kLatentTeacher);
      opt.set_lr(cosine_lr(cfg.lr, cfg.lr_floor, step, total_steps));
      NdArray loss = dsm_loss(result.net, batch, schedule, rng, cfg.dsm);
      backward(loss);
      opt.step();
      epoch_loss += loss.item();
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  return result;
}

}  // namespace agentpose::agent
