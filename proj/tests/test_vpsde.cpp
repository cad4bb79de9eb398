#include <cmath>

#include "agentpose/error.hpp"
#include "agentpose/vpsde.hpp"
#include "doctest.h"

using namespace agentpose;
using namespace agentpose::vpsde;

namespace {

struct Moments {
  double mean, var;
};

Moments moments(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, s / (n - 1)};
}

FeatureBatch constant_batch(std::size_t b, double value, FeatureOrigin origin = FeatureOrigin::kTeacher) {
  return FeatureBatch(NdArray::full({b, 1, 1, 1}, value), origin);
}

// Score of N(mean, var) after the forward marginal at t.
ScoreFn gaussian_score(double mean, double var, const NoiseSchedule& s) {
  return [=, &s](const NdArray& x, double t) {
    const auto c = s.marginal_coeffs(t);
    const double m = c.mean_scale * mean, v = c.mean_scale * c.mean_scale * var + c.noise_std * c.noise_std;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (m - x[i]) / v;
    return NdArray::from(x.shape(), std::move(out));
  };
}

}  // namespace

TEST_CASE("schedule shape and monotonicity") {
  const NoiseSchedule s;
  REQUIRE(s.betas().size() == 1000);
  for (std::size_t i = 1; i < 1000; ++i) {
    CHECK(s.betas()[i] > s.betas()[i - 1]);
    CHECK(s.alpha_bars()[i] < s.alpha_bars()[i - 1]);
  }
  CHECK(s.betas().front() > 0.0);
  CHECK(s.betas().back() < 1.0);
  CHECK(s.alpha_bars()[0] == 1.0 - 1e-4);
  CHECK(s.alpha_bars()[999] < 1e-4);
}

TEST_CASE("alpha_bar matches an independent product oracle") {
  const NoiseSchedule s;
  double prod = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const double beta = 1e-4 + (0.02 - 1e-4) * i / 999.0;
    prod *= 1.0 - beta;
    CHECK(s.alpha_bars()[i] == doctest::Approx(prod).epsilon(1e-12));
  }
}

TEST_CASE("index_of rounds to nearest with ties down") {
  const NoiseSchedule s({.n_steps = 5});
  CHECK(s.index_of(0.0) == 0);
  CHECK(s.index_of(1.0) == 4);
  CHECK(s.index_of(0.125) == 0);  // 0.5 -> 0
  CHECK(s.index_of(0.375) == 1);  // 1.5 -> 1
  CHECK(s.index_of(0.38) == 2);
  CHECK(NoiseSchedule().index_of(0.4) == 400);  // 399.6
}

TEST_CASE("beta_at examples and domain") {
  const NoiseSchedule s;
  CHECK(s.beta_at(0.0) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(s.beta_at(1.0) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(s.beta_at(0.5) == doctest::Approx(0.01005).epsilon(1e-12));
  CHECK_THROWS_AS(s.beta_at(-0.1), InvalidArgument);
  CHECK_THROWS_AS(s.beta_at(1.01), InvalidArgument);
}

TEST_CASE("marginal_coeffs examples") {
  const NoiseSchedule s;
  const auto c0 = s.marginal_coeffs(0.0);
  CHECK(c0.mean_scale == doctest::Approx(std::sqrt(0.9999)).epsilon(1e-12));
  CHECK(c0.noise_std == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(std::abs(s.marginal_coeffs(1.0).noise_std - 1.0) < 1e-3);
  for (const auto mode : {ScheduleMode::kDiscrete, ScheduleMode::kContinuous}) {
    const NoiseSchedule sm({.mode = mode});
    for (int i = 0; i <= 100; ++i) {
      const auto c = sm.marginal_coeffs(i / 100.0);
      CHECK(std::abs(c.mean_scale * c.mean_scale + c.noise_std * c.noise_std - 1.0) < 1e-14);
    }
  }
  CHECK_THROWS_AS(s.marginal_coeffs(2.0), InvalidArgument);
}

TEST_CASE("continuous mode keeps the verbatim rate and barely perturbs at t=1") {
  const NoiseSchedule s({.mode = ScheduleMode::kContinuous});
  CHECK(s.sde_rate(0.5) == doctest::Approx(0.01005));
  CHECK(s.marginal_coeffs(1.0).noise_std < 0.15);
  CHECK(s.step_rate(0.5, 0.1) == doctest::Approx(0.001005));
  CHECK(NoiseSchedule().sde_rate(0.5) == doctest::Approx(10.05));
}

TEST_CASE("discrete step_rate compounds per-step rates") {
  const NoiseSchedule s;
  // One grid step recovers beta_k exactly.
  CHECK(s.step_rate(400.0 / 999.0, 1.0 / 999.0) == doctest::Approx(s.betas()[400]).epsilon(1e-12));
  double keep = 1.0;
  for (std::size_t i = 321; i <= 400; ++i) keep *= 1.0 - s.betas()[i];
  CHECK(s.step_rate(400.0 / 999.0, 80.0 / 999.0) == doctest::Approx(1.0 - keep).epsilon(1e-12));
}

TEST_CASE("FeatureBatch validates origin and timestep") {
  CHECK_THROWS_AS(FeatureBatch(NdArray::zeros({1, 1, 1, 1}), FeatureOrigin::kNoisy), InvalidArgument);
  CHECK_THROWS_AS(FeatureBatch(NdArray::zeros({1, 1, 1, 1}), FeatureOrigin::kTeacher, 0.3), InvalidArgument);
  CHECK_THROWS_AS(FeatureBatch(NdArray::zeros({1, 1}), FeatureOrigin::kTeacher), InvalidArgument);
  CHECK_NOTHROW(FeatureBatch(NdArray::zeros({1, 1, 1, 1}), FeatureOrigin::kTeacher, 0.0));
}

TEST_CASE("perturb examples") {
  const NoiseSchedule s;
  Rng rng(1);
  SUBCASE("zero input gives noise_std * z exactly") {
    const auto p = perturb(constant_batch(8, 0.0), 0.4, s, rng);
    const double sd = s.marginal_coeffs(0.4).noise_std;
    for (std::size_t i = 0; i < 8; ++i) CHECK(p.noisy.values()[i] == sd * p.z[i]);
    CHECK(p.noisy.is_noisy());
    CHECK(*p.noisy.t() == 0.4);
  }
  SUBCASE("small t leaves the input nearly unchanged") {
    const auto p = perturb(constant_batch(64, 2.0), 1e-6, s, rng);
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(p.noisy.values()[i] - 2.0) < 0.05);
  }
  SUBCASE("errors") {
    const auto p = perturb(constant_batch(2, 1.0), 0.5, s, rng);
    CHECK_THROWS_AS(perturb(p.noisy, 0.5, s, rng), InvalidArgument);
    CHECK_THROWS_AS(perturb(constant_batch(2, 1.0), 0.0, s, rng), InvalidArgument);
    CHECK_THROWS_AS(perturb(constant_batch(2, 1.0), 1.5, s, rng), InvalidArgument);
  }
}

TEST_CASE("forward marginal matches closed form within 3 Monte-Carlo standard errors") {
  const NoiseSchedule s;
  Rng rng(77);
  const std::size_t n = 100000;
  for (double t : {0.1, 0.4, 0.9}) {
    const auto p = perturb(constant_batch(n, 1.0), t, s, rng);
    const auto [m, v] = moments(p.noisy.values().data());
    const auto c = s.marginal_coeffs(t);
    const double var = c.noise_std * c.noise_std;
    INFO("t = " << t);
    CHECK(std::abs(m - c.mean_scale) < 3.0 * std::sqrt(var / n));
    // Var of the sample variance of a Gaussian is 2 sigma^4 / (n - 1).
    CHECK(std::abs(v - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("reverse_step examples") {
  for (const auto mode : {ScheduleMode::kDiscrete, ScheduleMode::kContinuous}) {
    const NoiseSchedule s({.mode = mode});
    const double t = 0.5, dt = 0.01, rdt = s.step_rate(t, dt);
    Rng rng(3);
    const NdArray x = NdArray::from({3}, {1.0, -2.0, 0.5});
    const NdArray y = reverse_step(x, t, NdArray::zeros({3}), dt, s, rng, false);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 - rdt)).epsilon(1e-14));

    const std::size_t n = 100000;
    const NdArray noise = reverse_step(NdArray::zeros({n}), t, NdArray::zeros({n}), dt, s, rng, true);
    const auto [m, v] = moments(noise.data());
    CHECK(std::abs(m) < 3.0 * std::sqrt(rdt / n));
    CHECK(std::abs(v - rdt) < 3.0 * rdt * std::sqrt(2.0 / (n - 1)));
  }
  const NoiseSchedule s;
  Rng rng(0);
  // Valid schedules keep the jump rate below one, so the numeric guard is unreachable.
  CHECK(s.step_rate(1.0, 1.0) < 1.0);
  CHECK(NoiseSchedule({.beta_max = 0.999, .mode = ScheduleMode::kContinuous}).step_rate(1.0, 1.0) < 1.0);
  CHECK_THROWS_AS(reverse_step(NdArray::zeros({2}), 0.1, NdArray::zeros({2}), 0.2, s, rng, false), InvalidArgument);
  CHECK_THROWS_AS(reverse_step(NdArray::zeros({2}), 0.5, NdArray::zeros({3}), 0.1, s, rng, false), InvalidArgument);
}

TEST_CASE("calibration grid") {
  const auto g = calibration_grid(0.4, 5);
  REQUIRE(g.size() == 5);
  const double expect[] = {0.4, 0.32, 0.24, 0.16, 0.08};
  for (int i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("calibrate with a zero agent is a pure rescale") {
  const NoiseSchedule s;
  Rng rng(5);
  const auto noisy = perturb(constant_batch(4, 1.0), 0.4, s, rng).noisy;
  std::size_t calls = 0;
  const ScoreFn zero = [&](const NdArray& x, double) {
    ++calls;
    return NdArray::zeros(x.shape());
  };
  const auto out = calibrate(noisy, zero, 0.4, 5, s, rng, {.stochastic = false});
  CHECK(calls == 5);
  CHECK(out.origin() == FeatureOrigin::kDenoisedStudent);
  double factor = 1.0;
  for (double t : calibration_grid(0.4, 5)) factor /= std::sqrt(1.0 - s.step_rate(t, 0.08));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.values()[i] == doctest::Approx(noisy.values()[i] * factor).epsilon(1e-13));
  CHECK_THROWS_AS(calibrate(noisy, zero, 0.0, 5, s, rng), InvalidArgument);
  CHECK_THROWS_AS(calibrate(noisy, zero, 0.4, 0, s, rng), InvalidArgument);
  CHECK_THROWS_AS(calibrate(constant_batch(4, 1.0), zero, 0.4, 5, s, rng), InvalidArgument);
}

TEST_CASE("reverse consistency from t=1 with the analytic score") {
  const NoiseSchedule s;
  const std::size_t n = 10000;
  for (const auto& [mu, var] : {std::pair{0.0, 1.0}, std::pair{3.0, 4.0}}) {
    Rng rng(2024);
    const auto start = FeatureBatch(sample_standard_normal({n, 1, 1, 1}, rng), FeatureOrigin::kNoisy, 1.0);
    const auto out = calibrate(start, gaussian_score(mu, var, s), 1.0, 500, s, rng);
    const auto [m, v] = moments(out.values().data());
    INFO("mu = " << mu << ", var = " << var);
    CHECK(std::abs(m - mu) < 0.1 * std::max(1.0, std::abs(mu)));
    CHECK(std::abs(v - var) < 0.1 * var);
  }
}

TEST_CASE("calibrate from t_s recovers the data mean") {
  const NoiseSchedule s;
  const double mu = 3.0, var = 4.0, t_s = 0.4;
  const std::size_t n = 10000;
  Rng rng(8);
  std::vector<double> x0(n);
  for (auto& v : x0) v = mu + std::sqrt(var) * rng.normal();
  const auto clean = FeatureBatch(NdArray::from({n, 1, 1, 1}, x0), FeatureOrigin::kStudent);
  const auto noisy = perturb(clean, t_s, s, rng).noisy;
  const auto out = calibrate(noisy, gaussian_score(mu, var, s), t_s, 50, s, rng);
  const auto [m, v] = moments(out.values().data());
  CHECK(std::abs(m - mu) < 3.0 * std::sqrt(v / n));
}
