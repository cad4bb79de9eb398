#include "agentpose/autoencoder.hpp"

#include <numeric>

#include "agentpose/error.hpp"
#include "agentpose/optim.hpp"
#include "agentpose/score_agent.hpp"

namespace agentpose::ae {

using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;

LinearAutoencoder::LinearAutoencoder(std::size_t teacher_channels, std::size_t latent_channels, Rng& rng) {
  if (latent_channels == 0 || latent_channels > teacher_channels)
    throw InvalidArgument("LinearAutoencoder: need 0 < d <= C_tea");
  encoder_ = nn::make_orthogonal_linear(teacher_channels, latent_channels, rng);
  // Decoder starts as the encoder transpose.
  const auto w = encoder_.weight.data();
  std::vector<double> wt(w.size());
  for (std::size_t r = 0; r < latent_channels; ++r)
    for (std::size_t c = 0; c < teacher_channels; ++c) wt[c * latent_channels + r] = w[r * teacher_channels + c];
  decoder_.weight = NdArray::from({teacher_channels, latent_channels}, std::move(wt), true);
  encoder_.register_in(params_, "encoder");
  decoder_.register_in(params_, "decoder");
}

LinearAutoencoder::LinearAutoencoder(NdArray encoder_weight, NdArray decoder_weight) {
  if (encoder_weight.ndim() != 2 || decoder_weight.ndim() != 2 ||
      encoder_weight.dim(0) != decoder_weight.dim(1) || encoder_weight.dim(1) != decoder_weight.dim(0))
    throw InvalidArgument("LinearAutoencoder: encoder/decoder shapes are not transposes of each other");
  if (encoder_weight.dim(0) > encoder_weight.dim(1)) throw InvalidArgument("LinearAutoencoder: need d <= C_tea");
  encoder_.weight = encoder_weight.clone(true);
  decoder_.weight = decoder_weight.clone(true);
  encoder_.register_in(params_, "encoder");
  decoder_.register_in(params_, "decoder");
}

FeatureBatch encode(const LinearAutoencoder& ae, const FeatureBatch& f_tea) {
  if (f_tea.origin() != FeatureOrigin::kTeacher)
    throw InvalidArgument("encode: expected teacher features, got " + to_string(f_tea.origin()));
  if (f_tea.channels() != ae.teacher_channels())
    throw InvalidArgument("encode: autoencoder expects " + std::to_string(ae.teacher_channels()) + " channels");
  return FeatureBatch(ae.encoder().forward_nchw(f_tea.values()), FeatureOrigin::kLatentTeacher);
}

FeatureBatch decode(const LinearAutoencoder& ae, const FeatureBatch& latent) {
  if (latent.origin() != FeatureOrigin::kLatentTeacher)
    throw InvalidArgument("decode: expected latent teacher features, got " + to_string(latent.origin()));
  if (latent.channels() != ae.latent_channels())
    throw InvalidArgument("decode: autoencoder expects " + std::to_string(ae.latent_channels()) + " latent channels");
  return FeatureBatch(ae.decoder().forward_nchw(latent.values()), FeatureOrigin::kReconstructed);
}

FeatureBatch detached(const FeatureBatch& f) { return FeatureBatch(f.values().detach(), f.origin(), f.t()); }

NdArray rec_loss(const FeatureBatch& f_tea, const FeatureBatch& f_tea_rec) {
  if (f_tea.values().shape() != f_tea_rec.values().shape())
    throw InvalidArgument("rec_loss: shape mismatch " + shape_str(f_tea.values().shape()) + " vs " +
                          shape_str(f_tea_rec.values().shape()));
  return sum(square(sub(f_tea_rec.values(), f_tea.values())));
}

StudentAdapters StudentAdapters::orthogonal(std::size_t student_channels, std::size_t latent_channels,
                                            std::size_t head_channels, Rng& rng) {
  return {nn::make_orthogonal_linear(student_channels, latent_channels, rng),
          nn::make_orthogonal_linear(latent_channels, head_channels, rng)};
}

StudentAdapters StudentAdapters::identity(std::size_t student_channels, std::size_t latent_channels,
                                          std::size_t head_channels) {
  return {nn::make_identity_linear(student_channels, latent_channels),
          nn::make_identity_linear(latent_channels, head_channels)};
}

void StudentAdapters::register_in(nn::ParameterSet& set) {
  pre.register_in(set, "adapter.pre");
  post.register_in(set, "adapter.post");
}

double reconstruction_mse(const LinearAutoencoder& ae, const FeatureBatch& f_tea) {
  FeatureBatch rec = decode(ae, detached(encode(ae, detached(f_tea))));
  return rec_loss(detached(f_tea), rec).item() / static_cast<double>(f_tea.values().size());
}

std::pair<LinearAutoencoder, double> fit_autoencoder(const FeatureBatch& f_tea, std::size_t latent_channels,
                                                     const AutoencoderFit& fit) {
  Rng init = Rng(fit.seed).split(0);
  Rng rng = Rng(fit.seed).split(1);
  LinearAutoencoder ae(f_tea.channels(), latent_channels, init);
  AdamW opt(ae.parameters().arrays(), {.lr = fit.lr});
  const NdArray& data = f_tea.values();
  const std::size_t n = data.dim(0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;
  for (std::size_t step = 0; step < fit.steps; ++step) {
    if (cursor + fit.batch_size > n) {
      agent::shuffle(order, rng);
      cursor = 0;
    }
    const std::size_t count = std::min(fit.batch_size, n);
    FeatureBatch batch(agent::gather_batch(data, std::span(order).subspan(cursor, count)), FeatureOrigin::kTeacher);
    cursor += count;
    opt.set_lr(cosine_lr(fit.lr, fit.lr * 1e-3, step, fit.steps));
    NdArray loss = rec_loss(batch, decode(ae, encode(ae, batch)));
    backward(loss);
    opt.step();
  }
  const double mse = reconstruction_mse(ae, f_tea);
  return {std::move(ae), mse};
}

}  // namespace agentpose::ae
