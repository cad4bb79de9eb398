#pragma once

#include <cstddef>
#include <cstdint>

#include "agentpose/ndarray.hpp"
#include "agentpose/nn.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose::ae {

/// Two bias-free 1x1 projections: C_tea -> d -> C_tea.
class LinearAutoencoder {
 public:
  /// Orthogonal encoder, decoder initialised to its transpose.
  LinearAutoencoder(std::size_t teacher_channels, std::size_t latent_channels, Rng& rng);
  /// Explicit weights (encoder d x C, decoder C x d).
  LinearAutoencoder(NdArray encoder_weight, NdArray decoder_weight);

  std::size_t teacher_channels() const { return encoder_.in_features(); }
  std::size_t latent_channels() const { return encoder_.out_features(); }
  const nn::Linear& encoder() const { return encoder_; }
  const nn::Linear& decoder() const { return decoder_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

 private:
  nn::Linear encoder_, decoder_;
  nn::ParameterSet params_;
};

/// Teacher features -> latent teacher features (still attached to the encoder).
vpsde::FeatureBatch encode(const LinearAutoencoder& ae, const vpsde::FeatureBatch& f_tea);
/// Latent teacher features -> reconstructed teacher features.
vpsde::FeatureBatch decode(const LinearAutoencoder& ae, const vpsde::FeatureBatch& latent);
/// Same origin and values, cut from the graph.
vpsde::FeatureBatch detached(const vpsde::FeatureBatch& f);

/// Sum of squared differences (no normalisation).
NdArray rec_loss(const vpsde::FeatureBatch& f_tea, const vpsde::FeatureBatch& f_tea_rec);

/// Student-side channel adapters around the agent.
struct StudentAdapters {
  nn::Linear pre;   // C_stu -> d
  nn::Linear post;  // d -> C_head

  static StudentAdapters orthogonal(std::size_t student_channels, std::size_t latent_channels,
                                    std::size_t head_channels, Rng& rng);
  static StudentAdapters identity(std::size_t student_channels, std::size_t latent_channels,
                                  std::size_t head_channels);

  void register_in(nn::ParameterSet& set);
  std::size_t latent_channels() const { return pre.out_features(); }
};

struct AutoencoderFit {
  double lr = 1e-2;
  std::size_t steps = 2000;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

/// Fits an autoencoder by rec_loss alone; returns it with its final
/// per-element reconstruction MSE on the full data.
std::pair<LinearAutoencoder, double> fit_autoencoder(const vpsde::FeatureBatch& f_tea, std::size_t latent_channels,
                                                     const AutoencoderFit& fit);

/// Mean squared reconstruction error per element.
double reconstruction_mse(const LinearAutoencoder& ae, const vpsde::FeatureBatch& f_tea);

}  // namespace agentpose::ae
