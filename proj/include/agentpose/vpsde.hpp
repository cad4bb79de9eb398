#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agentpose/ndarray.hpp"
#include "agentpose/rng.hpp"

namespace agentpose::vpsde {

// kDiscrete: beta_i is a per-step rate over N steps (DDPM reading). A reverse
// jump of dt compounds the per-step rates it spans.
// kContinuous: beta(t) is used verbatim as the SDE rate.
enum class ScheduleMode { kDiscrete, kContinuous };

struct ScheduleParams {
  std::size_t n_steps = 1000;
  double beta_min = 0.0001;
  double beta_max = 0.02;
  ScheduleMode mode = ScheduleMode::kDiscrete;
};

struct MarginalCoeffs {
  double mean_scale;
  double noise_std;
};

class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleParams params = {});

  const ScheduleParams& params() const noexcept { return params_; }
  std::size_t n_steps() const noexcept { return params_.n_steps; }
  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

  /// Nearest step index round(t * (N - 1)); exact halves round down.
  std::size_t index_of(double t) const;
  /// Linear rate beta_min + t (beta_max - beta_min).
  double beta_at(double t) const;
  /// Rate of the continuous-time SDE at t (see ScheduleMode).
  double sde_rate(double t) const;
  /// Effective beta(t) * dt of one reverse jump from t to t - dt. Discrete
  /// mode: 1 - alpha_bar(t) / alpha_bar(t - dt), which is beta_k for dt = 1/N.
  double step_rate(double t, double dt) const;
  /// Closed-form marginal x(t) = mean_scale x(0) + noise_std z.
  MarginalCoeffs marginal_coeffs(double t) const;

 private:
  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

enum class FeatureOrigin { kTeacher, kStudent, kLatentTeacher, kReconstructed, kDenoisedStudent, kNoisy };

std::string to_string(FeatureOrigin origin);

/// A B x C x H x W feature map tagged with where it came from.
class FeatureBatch {
 public:
  FeatureBatch(NdArray values, FeatureOrigin origin, std::optional<double> t = std::nullopt);

  const NdArray& values() const noexcept { return values_; }
  FeatureOrigin origin() const noexcept { return origin_; }
  std::optional<double> t() const noexcept { return t_; }
  bool is_noisy() const noexcept { return origin_ == FeatureOrigin::kNoisy; }

  std::size_t batch() const { return values_.dim(0); }
  std::size_t channels() const { return values_.dim(1); }
  std::size_t height() const { return values_.dim(2); }
  std::size_t width() const { return values_.dim(3); }

 private:
  NdArray values_;
  FeatureOrigin origin_;
  std::optional<double> t_;
};

/// Score of the noisy input at time t, same shape as x.
using ScoreFn = std::function<NdArray(const NdArray& x, double t)>;

struct Perturbed {
  FeatureBatch noisy;
  NdArray z;
};

/// Forward VP-SDE perturbation of clean features to time t in (0, 1].
Perturbed perturb(const FeatureBatch& x0, double t, const NoiseSchedule& schedule, Rng& rng);

/// Same perturbation on a raw array with a caller-supplied noise draw;
/// differentiable in x0.
NdArray perturb_values(const NdArray& x0, const NdArray& z, MarginalCoeffs c);

/// One Euler-Maruyama step of the reverse VP-SDE from t to t - dt:
///   (x + r score) / sqrt(1 - r) + sqrt(r) z,  r = step_rate(t, dt).
NdArray reverse_step(const NdArray& x_t, double t, const NdArray& score, double dt,
                     const NoiseSchedule& schedule, Rng& rng, bool stochastic);

/// Uniform reverse grid t_s, t_s - dt, ..., dt with dt = t_s / n_steps.
std::vector<double> calibration_grid(double t_s, std::size_t n_steps);

struct CalibrateOptions {
  bool stochastic = true;
  // The last update never injects noise.
  bool deterministic_final_step = true;
};

/// Reverse-SDE calibration of noisy features from t_s down to 0.
FeatureBatch calibrate(const FeatureBatch& x_ts, const ScoreFn& score, double t_s,
                       std::size_t n_infer_steps, const NoiseSchedule& schedule, Rng& rng,
                       CalibrateOptions opts = {});

}  // namespace agentpose::vpsde
