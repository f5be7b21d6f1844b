#include "segdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace segdiff::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty()) throw Error("noise schedule needs at least one step");
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) throw Error("beta must lie in (0, 1)");
    prod *= 1.0 - beta_[i];
    alpha_bar_[i] = prod;
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps()) throw Error("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw Error("schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(beta));
}

Tensor forward_noise(const Tensor& x0, double alpha_bar, const Tensor& eps) {
  if (!x0.same_shape(eps)) throw Error("forward_noise: noise shape " + shape_str(eps.shape()) + " != latent shape " +
                                       shape_str(x0.shape()));
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  return forward_noise(x0, sched.alpha_bar(t), eps);
}

Tensor tweedie_x0(const Tensor& xt, double alpha_bar, const Tensor& eps_hat) {
  if (!xt.same_shape(eps_hat)) throw Error("tweedie_x0: shape mismatch");
  const double ab = std::max(alpha_bar, kAlphaBarFloor);
  const double inv = 1.0 / std::sqrt(ab), s = std::sqrt(1.0 - ab);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = (xt[i] - s * eps_hat[i]) * inv;
  return out;
}

Tensor tweedie_x0(const Tensor& xt, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  return tweedie_x0(xt, sched.alpha_bar(t), eps_hat);
}

}  // namespace segdiff::diffusion
