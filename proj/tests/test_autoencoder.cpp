#include <Eigen/Dense>
#include <cmath>

#include "agentpose/autoencoder.hpp"
#include "agentpose/error.hpp"
#include "doctest.h"

using namespace agentpose;
using namespace agentpose::ae;
using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;

namespace {

// n samples of C-channel features lying in a random rank-r subspace.
FeatureBatch low_rank_features(std::size_t n, std::size_t c, std::size_t r, Rng& rng, double noise = 0.0) {
  std::vector<double> basis(r * c);
  for (auto& v : basis) v = rng.normal();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const double coef = rng.normal() * (1.0 + static_cast<double>(j));
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += coef * basis[j * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] += noise * rng.normal();
  }
  return FeatureBatch(NdArray::from({n, c, 1, 1}, std::move(out)), FeatureOrigin::kTeacher);
}

// Optimal rank-d bias-free reconstruction MSE: trailing eigenvalues of the second-moment matrix.
double pca_mse(const FeatureBatch& f, std::size_t d) {
  const std::size_t n = f.batch(), c = f.channels();
  Eigen::MatrixXd x(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) x(i, k) = f.values()[i * c + k];
  const Eigen::MatrixXd m = x.transpose() * x;
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues();  // ascending
  double tail = 0.0;
  for (std::size_t k = 0; k < c - d; ++k) tail += ev(static_cast<Eigen::Index>(k));
  return tail / static_cast<double>(n * c);
}

}  // namespace

TEST_CASE("encode and decode shape contracts") {
  Rng rng(1);
  const LinearAutoencoder autoenc(8, 3, rng);
  const FeatureBatch f(sample_standard_normal({2, 8, 3, 2}, rng), FeatureOrigin::kTeacher);
  const FeatureBatch z = encode(autoenc, f);
  CHECK(z.values().shape() == Shape{2, 3, 3, 2});
  CHECK(z.origin() == FeatureOrigin::kLatentTeacher);
  const FeatureBatch r = decode(autoenc, z);
  CHECK(r.values().shape() == Shape{2, 8, 3, 2});
  CHECK(r.origin() == FeatureOrigin::kReconstructed);
  CHECK_THROWS_AS(encode(autoenc, FeatureBatch(NdArray::zeros({1, 7, 1, 1}), FeatureOrigin::kTeacher)), InvalidArgument);
  CHECK_THROWS_AS(encode(autoenc, FeatureBatch(NdArray::zeros({1, 8, 1, 1}), FeatureOrigin::kStudent)), InvalidArgument);
  CHECK_THROWS_AS(decode(autoenc, f), InvalidArgument);
  CHECK_THROWS_AS(LinearAutoencoder(4, 5, rng), InvalidArgument);
}

TEST_CASE("identity encoder at d = C passes features through") {
  Rng rng(2);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const LinearAutoencoder autoenc(NdArray::from({4, 4}, eye, true), NdArray::from({4, 4}, eye, true));
  const FeatureBatch f(sample_standard_normal({3, 4, 1, 1}, rng), FeatureOrigin::kTeacher);
  const FeatureBatch z = encode(autoenc, f);
  for (std::size_t i = 0; i < f.values().size(); ++i) CHECK(z.values()[i] == f.values()[i]);
}

TEST_CASE("zero latent decodes to zero") {
  Rng rng(3);
  const LinearAutoencoder autoenc(6, 3, rng);
  const FeatureBatch r = decode(autoenc, FeatureBatch(NdArray::zeros({2, 3, 1, 1}), FeatureOrigin::kLatentTeacher));
  for (double v : r.values().data()) CHECK(v == 0.0);
}

TEST_CASE("orthogonal init: decoder is the encoder transpose") {
  Rng rng(4);
  const LinearAutoencoder autoenc(8, 4, rng);
  const auto e = autoenc.encoder().weight, d = autoenc.decoder().weight;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(e[i * 8 + j] == d[j * 4 + i]);
}

TEST_CASE("encode is linear") {
  Rng rng(5);
  const LinearAutoencoder autoenc(8, 4, rng);
  const NdArray x = sample_standard_normal({3, 8, 2, 2}, rng), y = sample_standard_normal({3, 8, 2, 2}, rng);
  const double a = 1.7, b = -0.4;
  const auto ex = encode(autoenc, FeatureBatch(x, FeatureOrigin::kTeacher)).values();
  const auto ey = encode(autoenc, FeatureBatch(y, FeatureOrigin::kTeacher)).values();
  const auto exy = encode(autoenc, FeatureBatch(add(scale(x, a), scale(y, b)), FeatureOrigin::kTeacher)).values();
  for (std::size_t i = 0; i < exy.size(); ++i) CHECK(std::abs(exy[i] - (a * ex[i] + b * ey[i])) < 1e-13);
}

TEST_CASE("rec_loss examples and gradient") {
  Rng rng(6);
  const FeatureBatch f(NdArray::from({1, 6, 1, 1}, {1, 2, 3, 4, 5, 6}), FeatureOrigin::kTeacher);
  CHECK(rec_loss(f, FeatureBatch(f.values(), FeatureOrigin::kReconstructed)).item() == 0.0);
  const FeatureBatch shifted(add_scalar(f.values(), -1.0), FeatureOrigin::kReconstructed);
  CHECK(rec_loss(f, shifted).item() == 6.0);
  CHECK_THROWS_AS(rec_loss(f, FeatureBatch(NdArray::zeros({1, 5, 1, 1}), FeatureOrigin::kReconstructed)),
                  InvalidArgument);

  LinearAutoencoder autoenc(6, 2, rng);
  const FeatureBatch x(sample_standard_normal({5, 6, 1, 1}, rng), FeatureOrigin::kTeacher);
  // At the tied init the encoder gradient vanishes exactly; move off it first.
  for (auto& v : autoenc.parameters().at("encoder.weight").mutable_data()) v += 0.2 * rng.normal();
  NdArray w = autoenc.parameters().at("encoder.weight");
  backward(rec_loss(x, decode(autoenc, encode(autoenc, x))));
  const NdArray w0 = w.clone();
  const NdArray fd = finite_difference_grad(
      [&](const NdArray& q) {
        std::copy(q.data().begin(), q.data().end(), w.mutable_data().begin());
        return rec_loss(x, decode(autoenc, encode(autoenc, x))).item();
      },
      w0, 1e-6);
  CHECK(relative_error(w.grad(), fd.data(), 1e-8) < 1e-4);
}

TEST_CASE("fitting rank-d data recovers it and tracks the PCA optimum") {
  Rng rng(7);
  const FeatureBatch f = low_rank_features(512, 16, 4, rng);
  CHECK(pca_mse(f, 4) < 1e-12);
  const auto [autoenc, mse] = fit_autoencoder(f, 4, {.seed = 1});
  CHECK(mse < 1e-3);
  const auto round = decode(autoenc, encode(autoenc, f));
  CHECK(round.values().shape() == f.values().shape());
  CHECK(reconstruction_mse(autoenc, f) == doctest::Approx(mse));

  const FeatureBatch noisy = low_rank_features(512, 16, 8, rng, 0.1);
  const auto [ae2, mse2] = fit_autoencoder(noisy, 4, {.seed = 2});
  const double optimum = pca_mse(noisy, 4);
  INFO("fitted " << mse2 << " vs PCA " << optimum);
  CHECK(mse2 >= optimum * (1 - 1e-9));
  CHECK(mse2 < optimum * 1.05);
}

TEST_CASE("reconstruction error is non-increasing in d") {
  Rng rng(8);
  const FeatureBatch f = low_rank_features(512, 16, 8, rng);
  double prev = INFINITY;
  for (std::size_t d : {2, 4, 8}) {
    const double mse = fit_autoencoder(f, d, {.seed = 3}).second;
    INFO("d = " << d << " mse = " << mse);
    CHECK(mse <= prev);
    prev = mse;
  }
}

TEST_CASE("student adapters") {
  Rng rng(9);
  const auto a = StudentAdapters::orthogonal(16, 8, 16, rng);
  CHECK(a.latent_channels() == 8);
  CHECK(a.pre.weight.shape() == Shape{8, 16});
  CHECK(a.post.weight.shape() == Shape{16, 8});
  nn::ParameterSet set;
  auto copy = a;
  copy.register_in(set);
  CHECK(set.contains("adapter.pre.weight"));
  CHECK(set.contains("adapter.post.weight"));
}
