#include "segdiff/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace segdiff::encoder {

std::size_t EncoderConfig::padded_samples() const {
  return static_cast<std::size_t>(std::llround(pad_seconds * sample_rate));
}

std::size_t EncoderConfig::latent_frames() const { return encoded_frames(padded_samples(), kernel, stride); }

void EncoderConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid encoder config: ") + what);
  };
  require(filters >= 1 && kernel >= 1 && stride >= 1, "input encoder shape");
  require(!channels.empty(), "at least one conv block before the embedding block");
  require(embedding_dim >= 1 && projection_dim >= 1, "embedding dimensions");
  require(sample_rate > 0 && pad_seconds > 0, "sample rate and padding length");
  require(padded_samples() >= static_cast<std::size_t>(kernel), "padding shorter than one kernel");
  require(temperature > 0, "temperature must be positive");
}

SegmentEncoder::SegmentEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  fi_ = InputEncoder(store_, "fi", cfg_.input(), rng);
  dec_ = LatentDecoder(store_, "dec", cfg_.input(), rng);
  std::vector<std::size_t> widths{1};
  widths.insert(widths.end(), cfg_.channels.begin(), cfg_.channels.end());
  widths.push_back(cfg_.embedding_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string name = "conv" + std::to_string(i);
    conv_w_.push_back(store_.add(name + ".w", nn::he_init({widths[i + 1], widths[i], 3, 3}, widths[i] * 9, rng)));
    conv_b_.push_back(store_.add(name + ".b", Tensor({widths[i + 1]})));
  }
  proj_ = nn::Linear(store_, "proj", cfg_.embedding_dim, cfg_.projection_dim, rng);
  proj_norm_ = nn::LayerNorm(store_, "proj_norm", cfg_.projection_dim);
  store_.set_trainable(false);
}

Waveform SegmentEncoder::padded(const Waveform& w) const {
  if (std::abs(w.sample_rate - cfg_.sample_rate) > 1e-9)
    throw Error("segment sample rate " + std::to_string(w.sample_rate) + " differs from the encoder's " +
                std::to_string(cfg_.sample_rate));
  if (w.size() == cfg_.padded_samples()) return w;
  if (w.size() > cfg_.padded_samples()) throw Error("segment longer than the padding length");
  Waveform out = w;
  out.samples.resize(cfg_.padded_samples(), 0.0);
  return out;
}

TimeFrequencyRep SegmentEncoder::latent(const Waveform& w) const { return fi_.encode(padded(w)); }

ag::Var SegmentEncoder::latent_var(const Waveform& padded_wave) const {
  if (padded_wave.size() != cfg_.padded_samples()) throw Error("latent_var expects a padded waveform");
  return fi_.forward(ag::constant(Tensor({padded_wave.size()}, padded_wave.samples)));
}

void SegmentEncoder::check_latent(const Tensor& latent) const {
  if (latent.rank() != 2 || latent.dim(0) != cfg_.filters || latent.dim(1) != cfg_.latent_frames())
    throw Error("latent shape " + shape_str(latent.shape()) + " does not match the encoder's [" +
                std::to_string(cfg_.filters) + ", " + std::to_string(cfg_.latent_frames()) + "]");
}

ag::Var SegmentEncoder::embed_var(const ag::Var& latent) const {
  check_latent(latent->value);
  auto x = ag::reshape(latent, {1, latent->value.dim(0), latent->value.dim(1)});
  for (std::size_t i = 0; i < conv_w_.size(); ++i) x = ag::relu(ag::conv2d(x, conv_w_[i], conv_b_[i], 2, 1));
  return ag::global_max_pool(x);
}

ag::Var SegmentEncoder::project_var(const ag::Var& h) const {
  auto row = ag::reshape(h, {1, cfg_.embedding_dim});
  return ag::reshape(ag::tanh(proj_norm_(proj_(row))), {cfg_.projection_dim});
}

std::vector<double> SegmentEncoder::embed_latent(const Tensor& latent) const {
  return embed_var(ag::constant(latent))->value.vec();
}

std::vector<double> SegmentEncoder::embed(const Waveform& w) const { return embed_latent(latent(w).values); }

std::vector<double> embed_segment(const segmentation::Segment& seg, const SegmentEncoder& model) {
  return model.embed(seg.audio);
}

std::vector<double> embed_segment(const TimeFrequencyRep& rep, const SegmentEncoder& model) {
  return model.embed_latent(rep.values);
}

double simclr_loss_from_dots(double positive, const std::vector<double>& negatives, double temperature) {
  if (negatives.empty()) throw Error("contrastive loss needs at least one negative");
  double m = positive / temperature;
  for (double n : negatives) m = std::max(m, n / temperature);
  double z = std::exp(positive / temperature - m);
  for (double n : negatives) z += std::exp(n / temperature - m);
  return m + std::log(z) - positive / temperature;
}

ag::Var simclr_loss(const std::vector<ag::Var>& z, double temperature) {
  if (z.size() < 3) throw Error("contrastive batch needs at least 3 items (one negative)");
  ag::Var total;
  for (std::size_t a = 0; a < 2; ++a) {
    std::vector<ag::Var> logits{ag::scale(ag::dot(z[a], z[1 - a]), 1.0 / temperature)};
    for (std::size_t k = 2; k < z.size(); ++k) logits.push_back(ag::scale(ag::dot(z[a], z[k]), 1.0 / temperature));
    auto stacked = ag::stack(logits);
    auto la = ag::sub(ag::logsumexp(stacked), ag::pick(stacked, 0));
    total = total ? ag::add(total, la) : la;
  }
  return ag::scale(total, 0.5);
}

namespace {

// Latent of an item, noised at its step when t > 0.
ag::Var item_latent(const ContrastiveItem& item, const SegmentEncoder& model, const diffusion::NoiseSchedule& sched, Rng& rng) {
  auto lat = model.latent_var(item.audio);
  if (item.t == 0) return lat;
  const double ab = sched.alpha_bar(item.t);
  Tensor eps = gaussian(lat->value.shape(), rng);
  for (auto& v : eps.vec()) v *= std::sqrt(1.0 - ab);
  return ag::add(ag::scale(lat, std::sqrt(ab)), ag::constant(std::move(eps)));
}

void assign_noise(ContrastiveBatch& b, double noised_fraction, std::size_t schedule_steps, Rng& rng) {
  const std::size_t n = b.items.size();
  const auto noised = static_cast<std::size_t>(std::llround(noised_fraction * static_cast<double>(n)));
  std::vector<std::size_t> slots(n);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::uniform_int_distribution<int> step(1, static_cast<int>(schedule_steps));
  for (std::size_t k = 0; k < std::min(noised, n); ++k) b.items[slots[k]].t = step(rng);
}

}  // namespace

double simclr_loss(const ContrastiveBatch& batch, const SegmentEncoder& model, const diffusion::NoiseSchedule& sched,
                   std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  std::vector<ag::Var> z;
  for (const auto& item : batch.items) z.push_back(model.project_var(model.embed_var(item_latent(item, model, sched, rng))));
  return simclr_loss(z, model.config().temperature)->value[0];
}

io::Json EncoderLogEntry::to_json() const {
  return {{"step", step}, {"loss", loss}, {"contrastive", contrastive}, {"recon", recon}, {"lr", lr}};
}

ContrastiveBatch sample_batch(const std::vector<Waveform>& lang_x, const std::vector<Waveform>& lang_y,
                              std::size_t batch_size, double noised_fraction, std::size_t schedule_steps, Rng& rng,
                              const SegmentEncoder& model) {
  if (lang_x.empty() || lang_y.empty()) throw Error("contrastive training needs segments of both languages");
  if (batch_size < 3) throw Error("contrastive batch needs at least 3 items (one negative)");
  std::vector<corpus::Lang> anchor_langs;
  if (lang_x.size() >= 2) anchor_langs.push_back(corpus::Lang::x);
  if (lang_y.size() >= 2) anchor_langs.push_back(corpus::Lang::y);
  if (anchor_langs.empty()) throw Error("contrastive training needs two segments of one language");
  const auto lang = anchor_langs[std::uniform_int_distribution<std::size_t>(0, anchor_langs.size() - 1)(rng)];
  const auto& same = lang == corpus::Lang::x ? lang_x : lang_y;
  const auto& other = lang == corpus::Lang::x ? lang_y : lang_x;
  const auto other_lang = lang == corpus::Lang::x ? corpus::Lang::y : corpus::Lang::x;

  ContrastiveBatch b;
  std::uniform_int_distribution<std::size_t> pick_same(0, same.size() - 1);
  const std::size_t a = pick_same(rng);
  std::size_t p = pick_same(rng);
  while (p == a) p = pick_same(rng);
  b.items.push_back({model.padded(same[a]), lang, 0});
  b.items.push_back({model.padded(same[p]), lang, 0});
  // Negatives without replacement while the pool lasts.
  std::vector<std::size_t> order(other.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k + 2 < batch_size; ++k) {
    const std::size_t idx = k < order.size() ? order[k] : std::uniform_int_distribution<std::size_t>(0, other.size() - 1)(rng);
    b.items.push_back({model.padded(other[idx]), other_lang, 0});
  }
  assign_noise(b, noised_fraction, schedule_steps, rng);
  return b;
}

void EncoderTrainConfig::validate() const {
  if (batch_size < 3) throw Error("encoder batch_size must be at least 3");
  if (steps < 0) throw Error("encoder steps must be non-negative");
  if (!(lr > 0) || lr_floor < 0) throw Error("encoder learning rate must be positive");
  if (noised_fraction < 0 || noised_fraction > 1) throw Error("noised_fraction must lie in [0, 1]");
  if (recon_weight < 0) throw Error("recon_weight must be non-negative");
  if (location_margin_s < 0) throw Error("location_margin_s must be non-negative");
  if (positives != "same_language" && positives != "location")
    throw Error("positives must be \"same_language\" or \"location\", got \"" + positives + "\"");
}

std::vector<LocationPair> location_pairs(const std::vector<segmentation::Segment>& segs_x, const Waveform& y_audio,
                                         double margin_s) {
  if (margin_s < 0) throw Error("location margin must be non-negative");
  std::vector<LocationPair> out;
  const double dur = y_audio.duration();
  for (const auto& s : segs_x) {
    if (std::min(s.end, dur) - s.start < 1.0 / y_audio.sample_rate) continue;
    const double a = std::max(0.0, s.start - margin_s), b = std::min(dur, s.end + margin_s);
    out.push_back({s.audio, y_audio.slice(a, b), s.start - a, b - s.end});
  }
  return out;
}

Waveform crop_location_span(const LocationPair& p, double max_s, Rng& rng) {
  const double rate = p.y.sample_rate;
  const double inner = p.y.duration() - p.margin_before - p.margin_after;  // x segment's span
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double a = p.margin_before + u(rng) * p.margin_before;
  double b = p.margin_before + inner + u(rng) * p.margin_after;
  a = std::clamp(a, 0.0, p.y.duration());
  b = std::clamp(b, 0.0, p.y.duration());
  if (b - a > max_s) b = a + max_s;
  if (b - a < 1.0 / rate) return p.y.slice(p.margin_before, p.margin_before + std::min(inner, max_s));
  return p.y.slice(a, b);
}

ContrastiveBatch sample_location_batch(const std::vector<LocationPair>& pairs, std::size_t batch_size,
                                       double noised_fraction, std::size_t schedule_steps, Rng& rng,
                                       const SegmentEncoder& model) {
  if (pairs.size() < 2) throw Error("location-positive training needs at least two pairs");
  if (batch_size < 3) throw Error("contrastive batch needs at least 3 items (one negative)");
  const std::size_t a = std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng);
  ContrastiveBatch b;
  b.items.push_back({model.padded(pairs[a].x), corpus::Lang::x, 0});
  const double max_s = model.config().pad_seconds;
  b.items.push_back({model.padded(crop_location_span(pairs[a], max_s, rng)), corpus::Lang::y, 0});
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (i != a) order.push_back(i);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> any(0, order.size() - 1);
  for (std::size_t k = 0; k + 2 < batch_size; ++k) {
    const std::size_t idx = k < order.size() ? order[k] : order[any(rng)];
    b.items.push_back({model.padded(crop_location_span(pairs[idx], max_s, rng)), corpus::Lang::y, 0});
  }
  assign_noise(b, noised_fraction, schedule_steps, rng);
  return b;
}

namespace {

std::vector<EncoderLogEntry> run_training(SegmentEncoder& model, const EncoderTrainConfig& cfg,
                                          const diffusion::NoiseSchedule& sched,
                                          const std::function<ContrastiveBatch(Rng&)>& next_batch,
                                          const std::function<void(const EncoderLogEntry&)>& on_step) {
  Rng rng(cfg.seed);
  auto& store = model.params();
  store.set_trainable(true);
  nn::AdamW opt(store);
  std::vector<EncoderLogEntry> log;
  try {
    for (long s = 0; s < cfg.steps; ++s) {
      const double lr = nn::cosine_lr(s, cfg.steps, cfg.lr, cfg.lr_floor);
      const auto batch = next_batch(rng);
      store.zero_grad();
      std::vector<ag::Var> z;
      ag::Var recon;
      std::size_t clean = 0;
      for (const auto& item : batch.items) {
        auto lat = model.latent_var(item.audio);
        if (cfg.recon_weight > 0 && item.t == 0) {
          auto rec = model.decoder().forward(lat);
          auto err = ag::scale(ag::squared_error(rec, Tensor({item.audio.size()}, item.audio.samples)),
                               1.0 / static_cast<double>(item.audio.size()));
          recon = recon ? ag::add(recon, err) : err;
          ++clean;
        }
        ag::Var x = lat;
        if (item.t > 0) {
          const double ab = sched.alpha_bar(item.t);
          Tensor eps = gaussian(lat->value.shape(), rng);
          for (auto& v : eps.vec()) v *= std::sqrt(1.0 - ab);
          x = ag::add(ag::scale(lat, std::sqrt(ab)), ag::constant(std::move(eps)));
        }
        z.push_back(model.project_var(model.embed_var(x)));
      }
      auto contrastive = simclr_loss(z, model.config().temperature);
      auto loss = contrastive;
      double recon_value = 0;
      if (recon) {
        recon = ag::scale(recon, 1.0 / static_cast<double>(clean));
        recon_value = recon->value[0];
        loss = ag::add(loss, ag::scale(recon, cfg.recon_weight));
      }
      if (!std::isfinite(loss->value[0])) throw Error("non-finite encoder loss at step " + std::to_string(s));
      ag::backward(loss);
      opt.step(lr);
      EncoderLogEntry e{s, loss->value[0], contrastive->value[0], recon_value, lr};
      log.push_back(e);
      if (on_step) on_step(e);
    }
  } catch (...) {
    store.set_trainable(false);
    throw;
  }
  store.set_trainable(false);
  return log;
}

}  // namespace

std::vector<EncoderLogEntry> train_encoder(SegmentEncoder& model, const std::vector<Waveform>& lang_x,
                                           const std::vector<Waveform>& lang_y, const EncoderTrainConfig& cfg,
                                           const diffusion::NoiseSchedule& sched,
                                           const std::function<void(const EncoderLogEntry&)>& on_step) {
  cfg.validate();
  if (cfg.positives != "same_language") throw Error("positives \"" + cfg.positives + "\" needs location pairs");
  if (lang_x.empty() || lang_y.empty()) throw Error("encoder training needs segments of both languages");
  return run_training(model, cfg, sched, [&](Rng& rng) {
    return sample_batch(lang_x, lang_y, cfg.batch_size, cfg.noised_fraction, sched.steps(), rng, model);
  }, on_step);
}

std::vector<EncoderLogEntry> train_encoder(SegmentEncoder& model, const std::vector<LocationPair>& pairs,
                                           const EncoderTrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                                           const std::function<void(const EncoderLogEntry&)>& on_step) {
  cfg.validate();
  if (cfg.positives != "location") throw Error("location pairs given but positives is \"" + cfg.positives + "\"");
  if (pairs.size() < 2) throw Error("location-positive training needs at least two pairs");
  return run_training(model, cfg, sched, [&](Rng& rng) {
    return sample_location_batch(pairs, cfg.batch_size, cfg.noised_fraction, sched.steps(), rng, model);
  }, on_step);
}

Tensor encoder_grad(const Tensor& latent, const SegmentEncoder& model, const std::vector<double>& direction) {
  if (direction.size() != model.config().embedding_dim) throw Error("direction dimension does not match embedding");
  auto x = ag::parameter(latent);
  auto h = model.embed_var(x);
  auto s = ag::dot(h, ag::constant(Tensor({direction.size()}, direction)));
  ag::backward(s);
  return x->grad.empty() ? Tensor(latent.shape()) : x->grad;
}

}  // namespace segdiff::encoder
