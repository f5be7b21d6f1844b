#include "segdiff/nn.hpp"

#include <cmath>
#include <numbers>

namespace segdiff {

Tensor gaussian(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

}  // namespace segdiff

namespace segdiff::nn {

ag::Var ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  quantize_f32(init);
  auto v = ag::parameter(std::move(init));
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

ag::Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : entries_) v->zero_grad();
}

void ParamStore::set_trainable(bool on) {
  for (auto& [_, v] : entries_) v->requires_grad = on;
}

void ParamStore::assign(const std::vector<std::pair<std::string, Tensor>>& values) {
  if (values.size() != entries_.size())
    throw Error("parameter count mismatch: expected " + std::to_string(entries_.size()) + ", got " +
                std::to_string(values.size()));
  for (const auto& [name, t] : values) {
    auto v = get(name);
    if (v->value.shape() != t.shape())
      throw Error("shape mismatch for " + name + ": " + shape_str(v->value.shape()) + " vs " + shape_str(t.shape()));
  }
  for (const auto& [name, t] : values) {
    auto v = get(name);
    v->value = t;
    quantize_f32(v->value);
  }
}

Tensor uniform_init(const Shape& shape, double bound, Rng& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t = gaussian(shape, rng);
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.vec()) v *= s;
  return t;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  w = store.add(name + ".w", uniform_init({in, out}, bound, rng));
  b = store.add(name + ".b", Tensor({out}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t width) {
  gamma = store.add(name + ".gamma", Tensor({width}, 1.0));
  beta = store.add(name + ".beta", Tensor({width}));
}

AdamW::AdamW(ParamStore& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  for (const auto& [_, v] : store_.entries()) {
    m_.emplace_back(v->value.shape());
    v_.emplace_back(v->value.shape());
  }
}

double AdamW::step(double lr) {
  const auto& entries = store_.entries();
  double norm2 = 0.0;
  for (const auto& [_, v] : entries)
    if (!v->grad.empty())
      for (double g : v->grad.data()) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& var = *entries[p].second;
    if (var.grad.empty()) continue;
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < var.value.size(); ++i) {
      const double g = var.grad[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double w = var.value[i];
      w -= lr * cfg_.weight_decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      var.value[i] = static_cast<double>(static_cast<float>(w));
    }
  }
  return norm;
}

double cosine_lr(long step, long total, double base, double floor) {
  if (total <= 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace segdiff::nn
