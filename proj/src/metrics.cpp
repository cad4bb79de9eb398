#include "agentpose/metrics.hpp"

#include "agentpose/error.hpp"
#include "agentpose/kernels.hpp"

namespace agentpose::metrics {

double energy_distance(const NdArray& x, const NdArray& y) {
  if (x.ndim() < 1 || y.ndim() < 1 || x.dim(0) == 0 || y.dim(0) == 0)
    throw InvalidArgument("energy_distance: empty sample");
  const std::size_t n = x.dim(0), m = y.dim(0), d = x.size() / n;
  if (y.size() / m != d) throw InvalidArgument("energy_distance: samples have different dimensions");
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  const double xy = kernels::pairwise_distance_sum(n, m, d, x.data(), y.data()) / (nd * md);
  const double xx = kernels::pairwise_distance_sum(n, n, d, x.data(), x.data()) / (nd * nd);
  const double yy = kernels::pairwise_distance_sum(m, m, d, y.data(), y.data()) / (md * md);
  return 2.0 * xy - xx - yy;
}

}  // namespace agentpose::metrics
