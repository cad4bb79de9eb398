#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "agentpose/ndarray.hpp"

namespace agentpose {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

/// One decoupled-weight-decay Adam update, in place on `params`.
/// An empty gradient vector is treated as zero.
void adamw_step(std::span<NdArray> params, std::span<const std::vector<double>> grads,
                AdamWState& state, const AdamWConfig& cfg);

/// Convenience wrapper owning its state; reads gradients from the
/// parameters' own grad buffers and clears them afterwards.
class AdamW {
 public:
  AdamW(std::vector<NdArray> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {}

  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return state_.step; }

 private:
  std::vector<NdArray> params_;
  AdamWConfig cfg_;
  AdamWState state_;
};

/// Cosine decay from `base` to `floor` over `total` steps.
double cosine_lr(double base, double floor, std::size_t step, std::size_t total);

}  // namespace agentpose
