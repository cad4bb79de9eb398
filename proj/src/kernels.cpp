#include "agentpose/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

namespace agentpose::kernels {

namespace {

std::atomic<Policy> g_policy{Policy::kParallel};

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

inline void gemm_row(const GemmDims& d, const double* a, const double* b, double* c_row,
                     std::size_t i, double beta) {
  if (beta == 0.0) {
    std::fill(c_row, c_row + d.n, 0.0);
  } else if (beta != 1.0) {
    for (std::size_t j = 0; j < d.n; ++j) c_row[j] *= beta;
  }
  for (std::size_t p = 0; p < d.k; ++p) {
    const double aip = d.trans_a ? a[p * d.m + i] : a[i * d.k + p];
    if (aip == 0.0) continue;
    if (d.trans_b) {
      for (std::size_t j = 0; j < d.n; ++j) c_row[j] += aip * b[j * d.k + p];
    } else {
      const double* b_row = b + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) c_row[j] += aip * b_row[j];
    }
  }
}

inline void log_softmax_row(std::size_t cols, const double* x, double* out) {
  double mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < cols; ++j) out[j] = x[j] - lse;
}

inline double row_distance_sum(std::size_t ny, std::size_t dim, const double* xi,
                               const double* y) {
  double acc = 0.0;
  for (std::size_t j = 0; j < ny; ++j) {
    const double* yj = y + j * dim;
    double s = 0.0;
    for (std::size_t q = 0; q < dim; ++q) {
      const double diff = xi[q] - yj[q];
      s += diff * diff;
    }
    acc += std::sqrt(s);
  }
  return acc;
}

}  // namespace

Policy default_policy() { return g_policy.load(std::memory_order_relaxed); }
void set_default_policy(Policy p) { g_policy.store(p, std::memory_order_relaxed); }

namespace {

// Copies a transposed B into `buf` so the inner loop runs over contiguous
// memory; the per-element summation order is unchanged.
const double* untranspose_b(GemmDims& d, std::span<const double> b, std::vector<double>& buf) {
  if (!d.trans_b) return b.data();
  buf.resize(d.k * d.n);
  for (std::size_t j = 0; j < d.n; ++j)
    for (std::size_t p = 0; p < d.k; ++p) buf[p * d.n + j] = b[j * d.k + p];
  d.trans_b = false;
  return buf.data();
}

}  // namespace

void gemm_serial(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, double beta) {
  GemmDims d = dims;
  std::vector<double> buf;
  const double* bp = untranspose_b(d, b, buf);
  for (std::size_t i = 0; i < d.m; ++i) gemm_row(d, a.data(), bp, c.data() + i * d.n, i, beta);
}

void gemm_parallel(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                   std::span<double> c, double beta) {
  GemmDims d = dims;
  std::vector<double> buf;
  const double* bp = untranspose_b(d, b, buf);
  const auto m = static_cast<std::ptrdiff_t>(d.m);
  const bool big = d.m * d.n * d.k >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    const auto row = static_cast<std::size_t>(i);
    gemm_row(d, a.data(), bp, c.data() + row * d.n, row, beta);
  }
}

void gemm(const GemmDims& d, std::span<const double> a, std::span<const double> b,
          std::span<double> c, double beta) {
  if (default_policy() == Policy::kParallel)
    gemm_parallel(d, a, b, c, beta);
  else
    gemm_serial(d, a, b, c, beta);
}

void log_softmax_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> x,
                             std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) log_softmax_row(cols, x.data() + r * cols, out.data() + r * cols);
}

void log_softmax_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> x,
                               std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
  const bool big = rows * cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    log_softmax_row(cols, x.data() + off, out.data() + off);
  }
}

void log_softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                      std::span<double> out) {
  if (default_policy() == Policy::kParallel)
    log_softmax_rows_parallel(rows, cols, x, out);
  else
    log_softmax_rows_serial(rows, cols, x, out);
}

double pairwise_distance_sum_serial(std::size_t nx, std::size_t ny, std::size_t dim,
                                    std::span<const double> x, std::span<const double> y) {
  double total = 0.0;
  for (std::size_t i = 0; i < nx; ++i) total += row_distance_sum(ny, dim, x.data() + i * dim, y.data());
  return total;
}

double pairwise_distance_sum_parallel(std::size_t nx, std::size_t ny, std::size_t dim,
                                      std::span<const double> x, std::span<const double> y) {
  // Per-row partials, reduced serially afterwards: no order-dependent omp reduction.
  std::vector<double> partial(nx);
  const auto n = static_cast<std::ptrdiff_t>(nx);
  const bool big = nx * ny * dim >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    partial[row] = row_distance_sum(ny, dim, x.data() + row * dim, y.data());
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

double pairwise_distance_sum(std::size_t nx, std::size_t ny, std::size_t dim,
                             std::span<const double> x, std::span<const double> y) {
  if (default_policy() == Policy::kParallel)
    return pairwise_distance_sum_parallel(nx, ny, dim, x, y);
  return pairwise_distance_sum_serial(nx, ny, dim, x, y);
}

}  // namespace agentpose::kernels
