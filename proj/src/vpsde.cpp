#include "agentpose/vpsde.hpp"

#include <cmath>

#include "agentpose/error.hpp"

namespace agentpose::vpsde {

namespace {

void require_unit_interval(double t, const char* op) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument(std::string(op) + ": t must lie in [0, 1], got " + std::to_string(t));
}

}  // namespace

NoiseSchedule::NoiseSchedule(ScheduleParams params) : params_(params) {
  if (params_.n_steps < 2) throw InvalidArgument("NoiseSchedule: need at least 2 steps");
  if (!(params_.beta_min > 0.0 && params_.beta_min < params_.beta_max && params_.beta_max < 1.0))
    throw InvalidArgument("NoiseSchedule: require 0 < beta_min < beta_max < 1");
  const std::size_t n = params_.n_steps;
  betas_.resize(n);
  alpha_bars_.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    betas_[i] = params_.beta_min + (params_.beta_max - params_.beta_min) * static_cast<double>(i) /
                                       static_cast<double>(n - 1);
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
  }
}

std::size_t NoiseSchedule::index_of(double t) const {
  require_unit_interval(t, "index_of");
  const double x = t * static_cast<double>(params_.n_steps - 1);
  return static_cast<std::size_t>(std::ceil(x - 0.5));
}

double NoiseSchedule::beta_at(double t) const {
  require_unit_interval(t, "beta_at");
  return params_.beta_min + t * (params_.beta_max - params_.beta_min);
}

double NoiseSchedule::sde_rate(double t) const {
  const double b = beta_at(t);
  return params_.mode == ScheduleMode::kDiscrete ? b * static_cast<double>(params_.n_steps) : b;
}

double NoiseSchedule::step_rate(double t, double dt) const {
  if (params_.mode == ScheduleMode::kContinuous) return beta_at(t) * dt;
  const double from = alpha_bars_[index_of(t)];
  const double to = alpha_bars_[index_of(std::max(t - dt, 0.0))];
  return 1.0 - from / to;
}

MarginalCoeffs NoiseSchedule::marginal_coeffs(double t) const {
  require_unit_interval(t, "marginal_coeffs");
  double alpha_bar;
  if (params_.mode == ScheduleMode::kDiscrete) {
    alpha_bar = alpha_bars_[index_of(t)];
  } else {
    const double integral = params_.beta_min * t + 0.5 * t * t * (params_.beta_max - params_.beta_min);
    alpha_bar = std::exp(-integral);
  }
  return {std::sqrt(alpha_bar), std::sqrt(1.0 - alpha_bar)};
}

std::string to_string(FeatureOrigin origin) {
  switch (origin) {
    case FeatureOrigin::kTeacher: return "teacher";
    case FeatureOrigin::kStudent: return "student";
    case FeatureOrigin::kLatentTeacher: return "latent-teacher";
    case FeatureOrigin::kReconstructed: return "reconstructed";
    case FeatureOrigin::kDenoisedStudent: return "denoised-student";
    case FeatureOrigin::kNoisy: return "noisy";
  }
  return "unknown";
}

FeatureBatch::FeatureBatch(NdArray values, FeatureOrigin origin, std::optional<double> t)
    : values_(std::move(values)), origin_(origin), t_(t) {
  if (!values_.defined() || values_.ndim() != 4)
    throw InvalidArgument("FeatureBatch: values must be B x C x H x W");
  if (origin_ == FeatureOrigin::kNoisy) {
    if (!t_) throw InvalidArgument("FeatureBatch: noisy features need a timestep");
    require_unit_interval(*t_, "FeatureBatch");
  } else if (t_ && *t_ != 0.0) {
    throw InvalidArgument("FeatureBatch: clean features cannot carry a nonzero timestep");
  }
}

NdArray perturb_values(const NdArray& x0, const NdArray& z, MarginalCoeffs c) {
  return add(scale(x0, c.mean_scale), scale(z, c.noise_std));
}

Perturbed perturb(const FeatureBatch& x0, double t, const NoiseSchedule& schedule, Rng& rng) {
  if (x0.is_noisy()) throw InvalidArgument("perturb: input is already noisy");
  if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("perturb: t must lie in (0, 1]");
  NdArray z = sample_standard_normal(x0.values().shape(), rng);
  NdArray noisy = perturb_values(x0.values(), z, schedule.marginal_coeffs(t));
  return {FeatureBatch(std::move(noisy), FeatureOrigin::kNoisy, t), std::move(z)};
}

NdArray reverse_step(const NdArray& x_t, double t, const NdArray& score, double dt,
                     const NoiseSchedule& schedule, Rng& rng, bool stochastic) {
  constexpr double kSlack = 1e-12;
  if (!(dt > 0.0)) throw InvalidArgument("reverse_step: dt must be positive");
  if (t - dt < -kSlack) throw InvalidArgument("reverse_step: step would cross t = 0");
  if (x_t.shape() != score.shape()) throw InvalidArgument("reverse_step: score shape differs from x_t");
  const double rdt = schedule.step_rate(t, dt);
  if (rdt >= 1.0) throw NumericError("reverse_step: beta(t) * dt >= 1, step size too large");
  NdArray drift = scale(add(x_t, scale(score, rdt)), 1.0 / std::sqrt(1.0 - rdt));
  if (!stochastic) return drift;
  NdArray z = sample_standard_normal(x_t.shape(), rng);
  return add(drift, scale(z, std::sqrt(rdt)));
}

std::vector<double> calibration_grid(double t_s, std::size_t n_steps) {
  if (!(t_s > 0.0 && t_s <= 1.0)) throw InvalidArgument("calibration_grid: t_s must lie in (0, 1]");
  if (n_steps == 0) throw InvalidArgument("calibration_grid: need at least one step");
  std::vector<double> grid(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i)
    grid[i] = t_s * static_cast<double>(n_steps - i) / static_cast<double>(n_steps);
  return grid;
}

FeatureBatch calibrate(const FeatureBatch& x_ts, const ScoreFn& score, double t_s,
                       std::size_t n_infer_steps, const NoiseSchedule& schedule, Rng& rng,
                       CalibrateOptions opts) {
  if (!x_ts.is_noisy() || !x_ts.t() || std::abs(*x_ts.t() - t_s) > 1e-12)
    throw InvalidArgument("calibrate: input must be noisy features at t_s");
  const auto grid = calibration_grid(t_s, n_infer_steps);
  const double dt = t_s / static_cast<double>(n_infer_steps);
  NdArray x = x_ts.values();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const bool last = i + 1 == grid.size();
    const bool noise = opts.stochastic && !(last && opts.deterministic_final_step);
    x = reverse_step(x, grid[i], score(x, grid[i]), dt, schedule, rng, noise);
  }
  return FeatureBatch(std::move(x), FeatureOrigin::kDenoisedStudent);
}

}  // namespace agentpose::vpsde
