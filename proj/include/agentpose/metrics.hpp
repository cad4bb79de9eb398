#pragma once

#include "agentpose/ndarray.hpp"

namespace agentpose::metrics {

/// Energy distance between two samples given as rows (n x d and m x d; any
/// array whose leading axis indexes samples). V-statistic form, so >= 0:
///   2 E|X - Y| - E|X - X'| - E|Y - Y'|
double energy_distance(const NdArray& x, const NdArray& y);

}  // namespace agentpose::metrics
