#pragma once

// Parameter storage, a few layers, and the AdamW optimizer shared by the
// segment encoder and the unified denoiser.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "segdiff/autograd.hpp"

namespace segdiff {

using Rng = std::mt19937_64;

/// Tensor of i.i.d. N(0, 1) draws.
Tensor gaussian(const Shape& shape, Rng& rng);

}  // namespace segdiff

namespace segdiff::nn {

/// Named trainable tensors in registration order. Values are kept
/// float32-representable so checkpoints round-trip exactly.
class ParamStore {
 public:
  ag::Var add(const std::string& name, Tensor init);
  ag::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Toggle gradient tracking for every parameter. A frozen store can be
  /// shared by concurrent forward passes.
  void set_trainable(bool on);
  /// Replace every value; names and shapes must match.
  void assign(const std::vector<std::pair<std::string, Tensor>>& values);

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

Tensor uniform_init(const Shape& shape, double bound, Rng& rng);
/// He-style normal init with std = sqrt(2 / fan_in).
Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

struct Linear {
  ag::Var w;  // [in, out]
  ag::Var b;  // [out]
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double gain = 1.0);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

struct LayerNorm {
  ag::Var gamma;
  ag::Var beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t width);
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;
  /// Clip the global gradient norm before the update (0 disables).
  double clip_norm = 1.0;
};

class AdamW {
 public:
  AdamW(ParamStore& store, AdamWConfig cfg = {});
  /// One update from the gradients currently held by the store; returns the
  /// pre-clip gradient norm.
  double step(double lr);
  long steps() const { return t_; }

 private:
  ParamStore& store_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// Cosine annealing from base to floor over total steps.
double cosine_lr(long step, long total, double base, double floor = 0.0);

}  // namespace segdiff::nn
