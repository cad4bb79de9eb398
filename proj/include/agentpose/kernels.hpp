#pragma once

#include <cstddef>
#include <span>

// Dense inner loops. Every kernel has a serial reference and an OpenMP
// variant; the parallel variant partitions output rows only, so each output
// element is accumulated in the same order and results are bit-identical.
namespace agentpose::kernels {

enum class Policy { kSerial, kParallel };

Policy default_policy();
void set_default_policy(Policy p);

/// RAII override of the default policy (tests and benchmarks).
class ScopedPolicy {
 public:
  explicit ScopedPolicy(Policy p) : saved_(default_policy()) { set_default_policy(p); }
  ~ScopedPolicy() { set_default_policy(saved_); }
  ScopedPolicy(const ScopedPolicy&) = delete;
  ScopedPolicy& operator=(const ScopedPolicy&) = delete;

 private:
  Policy saved_;
};

struct GemmDims {
  std::size_t m, n, k;
  bool trans_a = false;  // A stored k x m instead of m x k
  bool trans_b = false;  // B stored n x k instead of k x n
};

/// c (m x n) = beta * c + op(a) * op(b). Row-major.
void gemm_serial(const GemmDims& d, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, double beta = 0.0);
void gemm_parallel(const GemmDims& d, std::span<const double> a, std::span<const double> b,
                   std::span<double> c, double beta = 0.0);
void gemm(const GemmDims& d, std::span<const double> a, std::span<const double> b,
          std::span<double> c, double beta = 0.0);

/// Row-wise log-softmax of an (rows x cols) matrix.
void log_softmax_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> x,
                             std::span<double> out);
void log_softmax_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> x,
                               std::span<double> out);
void log_softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                      std::span<double> out);

/// Sum over all pairs (i, j) of the Euclidean distance between row i of x
/// (nx x dim) and row j of y (ny x dim).
double pairwise_distance_sum_serial(std::size_t nx, std::size_t ny, std::size_t dim,
                                    std::span<const double> x, std::span<const double> y);
double pairwise_distance_sum_parallel(std::size_t nx, std::size_t ny, std::size_t dim,
                                      std::span<const double> x, std::span<const double> y);
double pairwise_distance_sum(std::size_t nx, std::size_t ny, std::size_t dim,
                             std::span<const double> x, std::span<const double> y);

}  // namespace agentpose::kernels
