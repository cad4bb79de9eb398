#include "agentpose/optim.hpp"

#include <cmath>
#include <numbers>

#include "agentpose/error.hpp"

namespace agentpose {

void adamw_step(std::span<NdArray> params, std::span<const std::vector<double>> grads,
                AdamWState& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw InvalidArgument("adamw_step: params/grads count mismatch");
  if (!(cfg.lr > 0.0)) throw InvalidArgument("adamw_step: lr must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != params[i].size())
      throw InvalidArgument("adamw_step: gradient shape mismatch for parameter " + std::to_string(i));
  }
  if (state.first_moment.empty()) {
    for (auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw InvalidArgument("adamw_step: optimizer state does not match parameter set");
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[j]);
    }
  }
}

void AdamW::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (auto& p : params_) {
    if (p.has_grad())
      grads.emplace_back(p.grad().begin(), p.grad().end());
    else
      grads.emplace_back();
  }
  adamw_step(params_, grads, state_, cfg_);
  zero_grad();
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double cosine_lr(double base, double floor, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace agentpose
