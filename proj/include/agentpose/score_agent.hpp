#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "agentpose/ndarray.hpp"
#include "agentpose/nn.hpp"
#include "agentpose/optim.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose::agent {

// kConsistent: the network regresses the true score -z / noise_std.
// kPaperLiteral: the network regresses +z; the score is recovered as
// -output / noise_std when the agent is used for calibration.
enum class ScoreTarget { kConsistent, kPaperLiteral };

// kSigmaSquared multiplies the squared residual by noise_std^2 (the usual
// lambda(t) = sigma_t^2 weighting). It only affects kConsistent, where it
// turns the residual into noise_std * S + z.
enum class DsmWeighting { kSigmaSquared, kNone };

struct ScoreNetworkConfig {
  std::size_t channels = 16;         // latent channels d
  std::size_t width = 16;            // residual stream width
  std::size_t bottleneck_ratio = 4;  // width -> width / ratio -> width
  std::size_t min_bottleneck = 4;
  std::size_t embed_dim = 16;        // sinusoidal timestep features
  std::size_t bottleneck() const;
};

/// Sinusoidal features of t: [sin(w_j t), cos(w_j t)] with w_j geometric on [1, 64].
std::vector<double> timestep_embedding(double t, std::size_t embed_dim);

/// S_theta(x, t): input projection, two residual bottleneck blocks with a
/// timestep bias, and a zero-initialised 1x1 output head.
class ScoreNetwork {
 public:
  ScoreNetwork(const ScoreNetworkConfig& cfg, Rng& rng);

  const ScoreNetworkConfig& config() const noexcept { return cfg_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

  /// x: B x d x H x W; t: one timestep per batch element (or a single one).
  NdArray forward(const NdArray& x, std::span<const double> t, bool frozen = false) const;
  NdArray forward(const NdArray& x, double t, bool frozen = false) const;

 private:
  struct Block {
    nn::Linear reduce, transform, expand, time_bias;
  };
  ScoreNetworkConfig cfg_;
  nn::Linear stem_;
  std::vector<Block> blocks_;
  nn::Linear head_;
  nn::ParameterSet params_;
};

/// Batched score model signature: x (B x d x H x W), one t per batch element.
using BatchScoreFn = std::function<NdArray(const NdArray& x, std::span<const double> t)>;

/// Calibration-ready score function (converts +z outputs for kPaperLiteral).
vpsde::ScoreFn make_score_fn(const ScoreNetwork& net, ScoreTarget target,
                             const vpsde::NoiseSchedule& schedule, bool frozen = true);

struct DsmOptions {
  ScoreTarget target = ScoreTarget::kConsistent;
  DsmWeighting weighting = DsmWeighting::kSigmaSquared;
};

/// Per-batch-element timesteps and the matching noise draw.
struct DsmDraw {
  std::vector<double> t;
  NdArray z;
};

DsmDraw draw_dsm(const Shape& shape, const vpsde::NoiseSchedule& schedule, Rng& rng);

/// DSM loss for a fixed draw (mean squared residual over all elements).
NdArray dsm_loss(const BatchScoreFn& model, const vpsde::FeatureBatch& latent_teacher,
                 const DsmDraw& draw, const vpsde::NoiseSchedule& schedule, const DsmOptions& opts);

/// DSM loss with t ~ U[0, 1] per batch element and fresh noise.
NdArray dsm_loss(const ScoreNetwork& net, const vpsde::FeatureBatch& latent_teacher,
                 const vpsde::NoiseSchedule& schedule, Rng& rng, const DsmOptions& opts);

/// Closed-form score of N(mean, variance) pushed through the VP marginal at t.
NdArray analytic_gaussian_score(const NdArray& x, double mean, double variance, double t,
                                const vpsde::NoiseSchedule& schedule);

struct AgentTrainConfig {
  ScoreNetworkConfig net;
  DsmOptions dsm;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  double lr_floor = 1e-5;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct AgentTrainResult {
  ScoreNetwork net;
  std::vector<double> loss_history;  // mean loss per epoch
};

/// Fits a score network to a dataset of latent teacher features.
AgentTrainResult train_agent(const vpsde::FeatureBatch& teacher_latents, const vpsde::NoiseSchedule& schedule,
                             const AgentTrainConfig& cfg);

/// Rows [first, first + count) of a B x C x H x W array, in the given order.
NdArray gather_batch(const NdArray& x, std::span<const std::size_t> indices);

/// In-place Fisher-Yates shuffle driven by our own generator.
void shuffle(std::span<std::size_t> items, Rng& rng);

}  // namespace agentpose::agent
