#pragma once

// Noise schedule, forward process, and the closed-form clean-latent estimate.
// Steps are 1-indexed: t = 0 is clean data with alpha_bar(0) = 1.

#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff::diffusion {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> beta);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  /// Cumulative product of alpha up to t; 1 at t = 0.
  double alpha_bar(int t) const;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

/// Linear per-step variance from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.005);

/// Floor applied to alpha_bar before dividing by its square root.
inline constexpr double kAlphaBarFloor = 1e-12;

/// sqrt(ab) * x0 + sqrt(1 - ab) * eps
Tensor forward_noise(const Tensor& x0, double alpha_bar, const Tensor& eps);
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// (x_t - sqrt(1 - ab) * eps_hat) / sqrt(ab)
Tensor tweedie_x0(const Tensor& xt, double alpha_bar, const Tensor& eps_hat);
Tensor tweedie_x0(const Tensor& xt, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

}  // namespace segdiff::diffusion
