#include <cmath>

#include "agentpose/autoencoder.hpp"
#include "agentpose/error.hpp"
#include "agentpose/score_agent.hpp"
#include "doctest.h"

using namespace agentpose;
using namespace agentpose::agent;
using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;
using vpsde::NoiseSchedule;

namespace {

FeatureBatch gaussian_latents(std::size_t n, std::size_t d, double mean, double var, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = mean + std::sqrt(var) * rng.normal();
  return FeatureBatch(NdArray::from({n, d, 1, 1}, std::move(v)), FeatureOrigin::kLatentTeacher);
}

// Relative L2 error of the learned score against the analytic one on fresh points drawn from p_t.
double score_error(const ScoreNetwork& net, double mean, double var, double t, const NoiseSchedule& s, Rng& rng) {
  const auto c = s.marginal_coeffs(t);
  const double sd = std::sqrt(c.mean_scale * c.mean_scale * var + c.noise_std * c.noise_std);
  const std::size_t d = net.config().channels;
  std::vector<double> xs(512 * d);
  for (auto& x : xs) x = c.mean_scale * mean + sd * rng.normal();
  const NdArray x = NdArray::from({512, d, 1, 1}, std::move(xs));
  const NdArray learned = net.forward(x, t);
  const NdArray exact = analytic_gaussian_score(x, mean, var, t, s);
  return relative_error(learned.data(), exact.data());
}

double log_density(double x, double mean, double var, double t, const NoiseSchedule& s) {
  const auto c = s.marginal_coeffs(t);
  const double m = c.mean_scale * mean, v = c.mean_scale * c.mean_scale * var + c.noise_std * c.noise_std;
  return -0.5 * std::log(2.0 * M_PI * v) - 0.5 * (x - m) * (x - m) / v;
}

}  // namespace

TEST_CASE("score_forward preserves shape and starts at zero") {
  Rng rng(1);
  const ScoreNetwork net({.channels = 6, .width = 12}, rng);
  for (const Shape& shape : {Shape{3, 6, 1, 1}, Shape{2, 6, 4, 5}}) {
    const NdArray x = sample_standard_normal(shape, rng);
    const NdArray y = net.forward(x, 0.3);
    CHECK(y.shape() == x.shape());
    for (double v : y.data()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(net.forward(NdArray::zeros({2, 5, 1, 1}), 0.3), InvalidArgument);
  CHECK_THROWS_AS(net.forward(NdArray::zeros({2, 6, 1, 1}), 1.3), InvalidArgument);
}

TEST_CASE("agent is small relative to the tiny student") {
  Rng rng(1);
  const ScoreNetwork net({.channels = 16, .width = 16}, rng);
  CHECK(net.parameters().count() < 1400);  // 10% of the ~13.6k-parameter T tier
}

TEST_CASE("analytic_gaussian_score examples") {
  const NoiseSchedule s;
  const auto c = s.marginal_coeffs(0.4);
  const NdArray mode = NdArray::full({1}, 3.0 * c.mean_scale);
  CHECK(analytic_gaussian_score(mode, 3.0, 4.0, 0.4, s)[0] == doctest::Approx(0.0));
  const NdArray x = NdArray::from({3}, {-1.0, 0.5, 2.0});
  const NdArray std_score = analytic_gaussian_score(x, 0.0, 1.0, 0.7, s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std_score[i] == doctest::Approx(-x[i]).epsilon(1e-12));
  // Finite-difference of the log-density oracle.
  for (double xv : {-2.0, 0.3, 1.0, 4.5}) {
    const double h = 1e-5;
    const double fd = (log_density(xv + h, 3.0, 4.0, 0.4, s) - log_density(xv - h, 3.0, 4.0, 0.4, s)) / (2 * h);
    CHECK(std::abs(analytic_gaussian_score(NdArray::full({1}, xv), 3.0, 4.0, 0.4, s)[0] - fd) < 1e-6);
  }
  CHECK_THROWS_AS(analytic_gaussian_score(x, 0.0, 0.0, 0.5, s), InvalidArgument);
}

TEST_CASE("dsm_loss examples") {
  const NoiseSchedule s;
  Rng rng(2);
  const FeatureBatch latents = gaussian_latents(4000, 4, 0.0, 1.0, rng);
  const DsmDraw draw = draw_dsm(latents.values().shape(), s, rng);

  SUBCASE("the target oracle has zero loss") {
    const BatchScoreFn oracle = [&](const NdArray&, std::span<const double> t) {
      std::vector<double> out(draw.z.size());
      const std::size_t per = out.size() / t.size();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = -draw.z[i] / s.marginal_coeffs(t[i / per]).noise_std;
      return NdArray::from(draw.z.shape(), std::move(out));
    };
    for (auto w : {DsmWeighting::kSigmaSquared, DsmWeighting::kNone})
      CHECK(dsm_loss(oracle, latents, draw, s, {.weighting = w}).item() < 1e-20);
    const BatchScoreFn literal = [&](const NdArray&, std::span<const double>) { return draw.z; };
    CHECK(dsm_loss(literal, latents, draw, s, {.target = ScoreTarget::kPaperLiteral}).item() == 0.0);
  }
  SUBCASE("zero network under the paper-literal target starts near one") {
    Rng init(3);
    const ScoreNetwork net({.channels = 4}, init);
    const double loss = dsm_loss(net, latents, s, rng, {.target = ScoreTarget::kPaperLiteral}).item();
    // Mean of 16000 chi-square(1) draws: standard error ~0.011.
    CHECK(std::abs(loss - 1.0) < 0.05);
  }
  SUBCASE("wrong origin or attached values are rejected") {
    Rng init(3);
    const ScoreNetwork net({.channels = 4}, init);
    const FeatureBatch teacher(latents.values(), FeatureOrigin::kTeacher);
    CHECK_THROWS_AS(dsm_loss(net, teacher, s, rng, {}), InvalidArgument);
    const FeatureBatch attached(latents.values().clone(true), FeatureOrigin::kLatentTeacher);
    CHECK_THROWS_AS(dsm_loss(net, attached, s, rng, {}), InvalidArgument);
  }
}

TEST_CASE("dsm_loss gradients match finite differences on a downsized network") {
  const NoiseSchedule s;
  Rng rng(4);
  const ScoreNetworkConfig cfg{.channels = 3, .width = 8, .min_bottleneck = 2, .embed_dim = 4};
  const FeatureBatch latents = gaussian_latents(6, 3, 0.5, 2.0, rng);
  const DsmDraw draw = draw_dsm(latents.values().shape(), s, rng);
  for (auto opts : {DsmOptions{}, DsmOptions{.target = ScoreTarget::kPaperLiteral},
                    DsmOptions{.weighting = DsmWeighting::kNone}}) {
    Rng init(5);
    ScoreNetwork net(cfg, init);
    // Move away from the zero head so every parameter receives gradient.
    for (auto& p : net.parameters().arrays())
      for (auto& v : p.mutable_data()) v += 0.3 * rng.normal();
    auto fn = [&](const NdArray& x, std::span<const double> t) { return net.forward(x, t); };
    net.parameters().zero_grad();
    backward(dsm_loss(fn, latents, draw, s, opts));
    for (const auto& name : net.parameters().names()) {
      NdArray p = net.parameters().at(name);
      const NdArray p0 = p.clone();
      const NdArray fd = finite_difference_grad(
          [&](const NdArray& q) {
            std::copy(q.data().begin(), q.data().end(), p.mutable_data().begin());
            return dsm_loss(fn, latents, draw, s, opts).item();
          },
          p0, 1e-6);
      std::copy(p0.data().begin(), p0.data().end(), p.mutable_data().begin());
      INFO(name);
      CHECK(relative_error(p.grad(), fd.data(), 1e-8) < 1e-4);
    }
  }
}

TEST_CASE("detach barrier: agent training leaves the autoencoder without gradients") {
  const NoiseSchedule s;
  Rng rng(6);
  const ae::LinearAutoencoder autoenc(8, 4, rng);
  const FeatureBatch teacher(sample_standard_normal({16, 8, 1, 1}, rng), FeatureOrigin::kTeacher);
  const FeatureBatch latent = ae::encode(autoenc, teacher);
  CHECK(latent.values().requires_grad());
  const ScoreNetwork net({.channels = 4}, rng);
  backward(dsm_loss(net, ae::detached(latent), s, rng, {}));
  for (const auto& p : autoenc.parameters().arrays()) CHECK_FALSE(p.has_grad());
  CHECK(net.parameters().at("head.weight").has_grad());
}

TEST_CASE("train_agent: overfitting a single sample decreases the loss") {
  const NoiseSchedule s;
  const NdArray one = NdArray::from({1, 4, 1, 1}, {0.5, -1.0, 2.0, 0.0});
  std::vector<double> rep;
  for (int i = 0; i < 1024; ++i) rep.insert(rep.end(), one.data().begin(), one.data().end());
  const FeatureBatch data(NdArray::from({1024, 4, 1, 1}, rep), FeatureOrigin::kLatentTeacher);
  const auto result = train_agent(data, s, {.net = {.width = 32}, .epochs = 50, .batch_size = 256, .lr = 3e-3, .seed = 1});
  REQUIRE(result.loss_history.size() == 50);
  // Means over consecutive windows of 10 epochs.
  std::vector<double> windows;
  for (std::size_t w = 0; w < 5; ++w) {
    double m = 0.0;
    for (std::size_t e = 0; e < 10; ++e) m += result.loss_history[w * 10 + e];
    windows.push_back(m / 10.0);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] < windows[w - 1]);
}

TEST_CASE("train_agent is deterministic and rejects empty data") {
  const NoiseSchedule s;
  Rng rng(7);
  const FeatureBatch data = gaussian_latents(100, 2, 0.0, 1.0, rng);
  const AgentTrainConfig cfg{.net = {.width = 8}, .epochs = 5, .batch_size = 32, .seed = 9};
  const auto a = train_agent(data, s, cfg), b = train_agent(data, s, cfg);
  for (const auto& name : a.net.parameters().names()) {
    const auto pa = a.net.parameters().at(name).data(), pb = b.net.parameters().at(name).data();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin()));
  }
  CHECK(a.loss_history == b.loss_history);
  const FeatureBatch empty(NdArray::zeros({0, 2, 1, 1}), FeatureOrigin::kLatentTeacher);
  CHECK_THROWS_AS(train_agent(empty, s, cfg), InvalidArgument);
}

TEST_CASE("oracle recovery on Gaussian latents") {
  const NoiseSchedule s;
  Rng rng(10);
  SUBCASE("2-D Gaussian, t in [0.1, 0.9]") {
    const double mean = 1.5, var = 0.5;
    const FeatureBatch data = gaussian_latents(512, 2, mean, var, rng);
    const auto result = train_agent(data, s, {.net = {.width = 32}, .epochs = 2000, .batch_size = 256, .seed = 3});
    double total = 0.0;
    int count = 0;
    for (double t = 0.1; t < 0.95; t += 0.1, ++count) {
      const double err = score_error(result.net, mean, var, t, s, rng);
      INFO("t = " << t << " err = " << err);
      total += err;
    }
    CHECK(total / count < 0.15);
  }
  SUBCASE("standard normal: sign at small t and accuracy at t = 0.9") {
    const FeatureBatch data = gaussian_latents(512, 4, 0.0, 1.0, rng);
    const auto result = train_agent(data, s, {.net = {.width = 32}, .epochs = 300, .batch_size = 256, .seed = 4});
    const NdArray x = NdArray::full({1, 4, 1, 1}, 2.0);
    const NdArray score = result.net.forward(x, 0.02);
    for (double v : score.data()) CHECK(v < 0.0);
    CHECK(score_error(result.net, 0.0, 1.0, 0.9, s, rng) < 0.2);
  }
}

TEST_CASE("paper-literal and consistent targets calibrate to the same distribution") {
  const NoiseSchedule s;
  Rng rng(12);
  const double mean = 2.0, var = 1.0;
  const FeatureBatch data = gaussian_latents(1024, 1, mean, var, rng);
  std::vector<std::pair<double, double>> moments;
  for (auto target : {ScoreTarget::kConsistent, ScoreTarget::kPaperLiteral}) {
    const auto result = train_agent(data, s, {.net = {.width = 32, .min_bottleneck = 8}, .dsm = {.target = target},
                                              .epochs = 400, .batch_size = 256, .seed = 5});
    Rng run(13);
    const FeatureBatch clean(gaussian_latents(4000, 1, mean, var, run).values(), FeatureOrigin::kStudent);
    const auto noisy = vpsde::perturb(clean, 0.4, s, run).noisy;
    const auto out = vpsde::calibrate(noisy, make_score_fn(result.net, target, s), 0.4, 5, s, run);
    double m = 0.0, q = 0.0;
    for (double v : out.values().data()) m += v, q += v * v;
    m /= 4000.0;
    moments.emplace_back(m, q / 4000.0 - m * m);
  }
  INFO("consistent " << moments[0].first << " / " << moments[0].second << ", literal " << moments[1].first
                     << " / " << moments[1].second);
  CHECK(std::abs(moments[0].first - moments[1].first) < 0.1);
  CHECK(std::abs(moments[0].second - moments[1].second) < 0.15);
  CHECK(std::abs(moments[0].first - mean) < 0.1);
}
