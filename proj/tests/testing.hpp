#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "segdiff/autograd.hpp"
#include "segdiff/tensor.hpp"

namespace testing {

inline segdiff::Tensor random_tensor(const segdiff::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  segdiff::Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between the autograd gradient of `f` with respect to
// `x` and central differences, over every coordinate of x.
inline double grad_check(const segdiff::ag::Var& x, const std::function<segdiff::ag::Var()>& f,
                         double h = 1e-5) {
  x->zero_grad();
  auto out = f();
  segdiff::ag::backward(out);
  const segdiff::Tensor analytic = x->grad_buffer();
  double worst = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) {
    const double keep = x->value[i];
    x->value[i] = keep + h;
    const double fp = f()->value[0];
    x->value[i] = keep - h;
    const double fm = f()->value[0];
    x->value[i] = keep;
    const double numeric = (fp - fm) / (2 * h);
    const double err = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testing
