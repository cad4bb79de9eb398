#include <cmath>
#include <numeric>

#include "agentpose/error.hpp"
#include "agentpose/kernels.hpp"
#include "agentpose/ndarray.hpp"
#include "agentpose/nn.hpp"
#include "agentpose/optim.hpp"
#include "agentpose/rng.hpp"
#include "doctest.h"

using namespace agentpose;

namespace {

NdArray random_array(Shape shape, Rng& rng, bool requires_grad = false, double scale_by = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = scale_by * rng.normal();
  return NdArray::from(std::move(shape), std::move(v), requires_grad);
}

// Autodiff gradient of f at x versus central differences.
double grad_check(const std::function<NdArray(const NdArray&)>& f, const NdArray& x0) {
  NdArray x = x0.clone(true);
  backward(f(x));
  const NdArray fd = finite_difference_grad([&](const NdArray& p) { return f(p).item(); }, x0, 1e-5);
  return relative_error(x.grad(), fd.data(), 1e-8);
}

}  // namespace

TEST_CASE("xoshiro256** matches the reference sequence") {
  // Frozen from an independent Python implementation of splitmix64 + xoshiro256**.
  Rng rng(42);
  CHECK(rng.next_u64() == 0x15780b2e0c2ec716ULL);
  CHECK(rng.next_u64() == 0x6104d9866d113a7eULL);
  CHECK(rng.next_u64() == 0xae17533239e499a1ULL);
  CHECK(Rng(42).uniform() == 0.08386297105988216);
}

TEST_CASE("split streams depend only on seed and stream id") {
  Rng a(7);
  const Rng child_before = a.split(3);
  for (int i = 0; i < 10; ++i) a.next_u64();
  Rng c1 = child_before, c2 = a.split(3), c3 = a.split(4);
  const auto v1 = c1.next_u64();
  CHECK(v1 == c2.next_u64());
  CHECK(v1 != c3.next_u64());
}

TEST_CASE("sample_standard_normal moments over 1e6 draws") {
  Rng rng(2024);
  const NdArray x = sample_standard_normal({1000000}, rng);
  // Two-pass statistics, independent of the generator code path.
  const double n = static_cast<double>(x.size());
  const double m = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x.data()) ss += (v - m) * (v - m);
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(ss / (n - 1) - 1.0) < 0.01);
}

TEST_CASE("sample_standard_normal is deterministic and rejects empty shapes") {
  Rng a(42), b(42);
  const NdArray x = sample_standard_normal({2, 3}, a), y = sample_standard_normal({2, 3}, b);
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  Rng r(1);
  CHECK_THROWS_AS(sample_standard_normal({0}, r), InvalidArgument);
  CHECK_THROWS_AS(sample_standard_normal({}, r), InvalidArgument);
}

TEST_CASE("backward: sum of squares") {
  NdArray x = NdArray::from({3}, {1, 2, 3}, true);
  backward(sum(square(x)));
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);

  SUBCASE("repeated calls accumulate") {
    backward(sum(mul(x, x)));
    CHECK(x.grad()[2] == 12.0);
  }
}

TEST_CASE("backward: detached operands never get a gradient buffer") {
  NdArray x = NdArray::from({3}, {1, 2, 3}, true);
  NdArray y = NdArray::from({3}, {0.5, 0.5, 0.5}, true);
  backward(mean(square(sub(x, y.detach()))));
  CHECK(x.has_grad());
  CHECK_FALSE(y.has_grad());
}

TEST_CASE("backward rejects non-scalar losses") {
  NdArray x = NdArray::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(square(x)), InvalidArgument);
}

TEST_CASE("non-finite values are an error state") {
  NdArray x = NdArray::from({1}, {1e300});
  CHECK_THROWS_AS(square(x), NumericError);
  CHECK_THROWS_AS(NdArray::from({1}, {std::nan("")}), NumericError);
}

TEST_CASE("finite_difference_grad basics") {
  Rng rng(3);
  const NdArray x = random_array({4, 2}, rng);
  const NdArray g = finite_difference_grad([](const NdArray& p) { return sum(p).item(); }, x, 1e-5);
  for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  const NdArray g2 = finite_difference_grad([](const NdArray& p) { return p[0] * p[0]; }, NdArray::scalar(3.0), 1e-5);
  CHECK(std::abs(g2[0] - 6.0) < 1e-6);
  CHECK_THROWS_AS(finite_difference_grad([](const NdArray&) { return 0.0; }, x, 0.0), InvalidArgument);
  CHECK_THROWS_AS(finite_difference_grad([](const NdArray&) { return INFINITY; }, x, 1e-5), NumericError);
}

TEST_CASE("gradient property: every op matches finite differences over 100 random trials") {
  Rng rng(11);
  const NdArray w = random_array({3, 4}, rng);
  const NdArray bias = random_array({3}, rng);
  const std::vector<double> factors{0.5, -2.0, 1.5, 3.0};
  const NdArray fixed = random_array({4, 4}, rng);
  const NdArray fixed_cols = random_array({4, 36}, rng);
  const NdArray fixed_profiles = random_array({2, 12}, rng);
  const std::vector<std::pair<const char*, std::function<NdArray(const NdArray&)>>> ops = {
      {"add", [&](const NdArray& x) { return sum(square(add(x, x))); }},
      {"sub", [&](const NdArray& x) { return sum(square(sub(x, scale(x, 0.3)))); }},
      {"mul", [&](const NdArray& x) { return sum(mul(x, tanh(x))); }},
      {"gelu", [&](const NdArray& x) { return sum(gelu(x)); }},
      {"tanh", [&](const NdArray& x) { return sum(tanh(x)); }},
      {"add_scalar", [&](const NdArray& x) { return sum(square(add_scalar(x, 0.7))); }},
      {"matmul", [&](const NdArray& x) { return sum(square(matmul(x, reshape(w, {4, 3})))); }},
      {"linear", [&](const NdArray& x) { return sum(gelu(linear(x, w, bias))); }},
      {"add_row_vector", [&](const NdArray& x) { return sum(square(add_row_vector(x, NdArray::from({4}, {1, -2, 3, 0.5})))); }},
      {"scale_rows", [&](const NdArray& x) { return sum(square(scale_rows(x, factors))); }},
      {"repeat_rows", [&](const NdArray& x) { return sum(tanh(repeat_rows(x, 3))); }},
      {"log_softmax", [&](const NdArray& x) { return sum(mul(log_softmax(x), fixed)); }},
      {"mean", [&](const NdArray& x) { return mean(square(x)); }},
      {"nchw", [&](const NdArray& x) {
         NdArray img = reshape(x, {1, 4, 2, 2});
         NdArray rows = nchw_to_rows(img);
         return sum(mul(rows_to_nchw(tanh(rows), 1, 2, 2), reshape(fixed, {1, 4, 2, 2})));
       }},
      {"im2col_rows", [&](const NdArray& x) { return sum(mul(tanh(im2col_rows(x, 1, 2, 2, 3)), fixed_cols)); }},
      {"axis_profiles_rows",
       [&](const NdArray& x) { return sum(mul(tanh(axis_profiles_rows(x, 2, 1, 2)), fixed_profiles)); }},
  };
  for (const auto& [name, f] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, grad_check(f, random_array({4, 4}, rng)));
    INFO(std::string(name));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("im2col_rows gathers zero-padded neighbourhoods") {
  // 1 x 2 x 3 image, one channel: [[1 2 3] [4 5 6]].
  const NdArray rows = NdArray::from({6, 1}, {1, 2, 3, 4, 5, 6});
  const NdArray cols = im2col_rows(rows, 1, 2, 3, 3);
  REQUIRE(cols.shape() == Shape{6, 9});
  const std::vector<double> top_left{0, 0, 0, 0, 1, 2, 0, 4, 5};
  const std::vector<double> bottom_mid{1, 2, 3, 4, 5, 6, 0, 0, 0};
  for (std::size_t j = 0; j < 9; ++j) {
    CHECK(cols[j] == top_left[j]);
    CHECK(cols[4 * 9 + j] == bottom_mid[j]);
  }
  CHECK(im2col_rows(rows, 1, 2, 3, 1).data()[4] == 5.0);
  CHECK_THROWS_AS(im2col_rows(rows, 1, 2, 3, 2), InvalidArgument);
  CHECK_THROWS_AS(im2col_rows(rows, 1, 3, 3, 3), InvalidArgument);
}

TEST_CASE("axis_profiles_rows averages columns then rows per channel") {
  // Two channels; channel 0 = [[1 2 3] [4 5 6]], channel 1 = 10 x channel 0.
  std::vector<double> v;
  for (double p = 1; p <= 6; ++p) v.insert(v.end(), {p, 10 * p});
  const NdArray prof = axis_profiles_rows(NdArray::from({6, 2}, v), 1, 2, 3);
  REQUIRE(prof.shape() == Shape{1, 10});
  const std::vector<double> expect{2.5, 25, 3.5, 35, 4.5, 45, 2, 20, 5, 50};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(prof[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("backward through a random 3-layer network matches finite differences") {
  Rng rng(5);
  const auto l1 = nn::make_linear(6, 8, rng), l2 = nn::make_linear(8, 8, rng), l3 = nn::make_linear(8, 2, rng);
  const NdArray x = random_array({5, 6}, rng);
  auto net = [&](const NdArray& w1) {
    NdArray h = gelu(linear(x, w1, l1.bias));
    h = tanh(l2.forward(h));
    return mean(square(l3.forward(h)));
  };
  CHECK(grad_check(net, l1.weight.clone()) < 1e-4);
  // Gradient with respect to the input as well.
  auto net_x = [&](const NdArray& input) { return mean(square(l3.forward(gelu(l2.forward(gelu(l1.forward(input))))))); };
  CHECK(grad_check(net_x, x) < 1e-4);
}

TEST_CASE("kernels: serial and parallel variants agree bitwise") {
  Rng rng(9);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const kernels::GemmDims d{70, 53, 41, ta, tb};
      const NdArray a = random_array({d.m * d.k}, rng), b = random_array({d.k * d.n}, rng);
      std::vector<double> c1(d.m * d.n, 1.0), c2(d.m * d.n, 1.0), ref(d.m * d.n, 1.0);
      kernels::gemm_serial(d, a.data(), b.data(), c1, 0.5);
      kernels::gemm_parallel(d, a.data(), b.data(), c2, 0.5);
      CHECK(c1 == c2);
      // Naive oracle with explicit indexing.
      for (std::size_t i = 0; i < d.m; ++i)
        for (std::size_t j = 0; j < d.n; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < d.k; ++p)
            s += (ta ? a[p * d.m + i] : a[i * d.k + p]) * (tb ? b[j * d.k + p] : b[p * d.n + j]);
          ref[i * d.n + j] = 0.5 * ref[i * d.n + j] + s;
        }
      CHECK(relative_error(c1, ref) < 1e-13);
    }
  }
  const NdArray x = random_array({300 * 40}, rng);
  std::vector<double> s1(x.size()), s2(x.size());
  kernels::log_softmax_rows_serial(300, 40, x.data(), s1);
  kernels::log_softmax_rows_parallel(300, 40, x.data(), s2);
  CHECK(s1 == s2);
  const NdArray p = random_array({300 * 7}, rng), q = random_array({250 * 7}, rng);
  const double d1 = kernels::pairwise_distance_sum_serial(300, 250, 7, p.data(), q.data());
  const double d2 = kernels::pairwise_distance_sum_parallel(300, 250, 7, p.data(), q.data());
  CHECK(d1 == d2);
  double naive = 0.0;
  for (std::size_t i = 0; i < 300; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 250; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += (p[i * 7 + c] - q[j * 7 + c]) * (p[i * 7 + c] - q[j * 7 + c]);
      row += std::sqrt(s);
    }
    naive += row;
  }
  CHECK(d1 == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("adamw: zero gradient leaves parameters unchanged") {
  std::vector<NdArray> p{NdArray::from({2}, {1.0, -2.0}, true)};
  std::vector<std::vector<double>> g{{0.0, 0.0}};
  AdamWState st;
  adamw_step(p, g, st, {.lr = 0.1, .weight_decay = 0.0});
  CHECK(p[0][0] == 1.0);
  CHECK(p[0][1] == -2.0);
  CHECK(st.step == 1);
}

TEST_CASE("adamw: one step on w^2 descends") {
  std::vector<NdArray> p{NdArray::from({1}, {1.0}, true)};
  std::vector<std::vector<double>> g{{2.0}};
  AdamWState st;
  adamw_step(p, g, st, {.lr = 0.1});
  CHECK(std::abs(p[0][0]) < 1.0);
}

TEST_CASE("adamw: 200 steps on a 2-D quadratic bowl converge") {
  NdArray w = NdArray::from({2}, {2.0, -1.5}, true);
  AdamW opt({w}, {.lr = 0.05});
  for (int i = 0; i < 200; ++i) {
    opt.set_lr(cosine_lr(0.05, 1e-4, static_cast<std::size_t>(i), 200));
    // f(w) = w0^2 + 3 w1^2
    NdArray l = sum(mul(square(w), NdArray::from({2}, {1.0, 3.0})));
    backward(l);
    opt.step();
  }
  const double final_loss = w[0] * w[0] + 3 * w[1] * w[1];
  CHECK(final_loss < 1e-3);
}

TEST_CASE("adamw: shape mismatch is rejected") {
  std::vector<NdArray> p{NdArray::from({2}, {1.0, 2.0}, true)};
  std::vector<std::vector<double>> g{{1.0, 2.0, 3.0}};
  AdamWState st;
  CHECK_THROWS_AS(adamw_step(p, g, st, {.lr = 0.1}), InvalidArgument);
}

TEST_CASE("orthogonal_matrix has orthonormal rows") {
  Rng rng(4);
  const auto m = nn::orthogonal_matrix(3, 7, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t q = 0; q < 7; ++q) dot += m[i * 7 + q] * m[j * 7 + q];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
}
