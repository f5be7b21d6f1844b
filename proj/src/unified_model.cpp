#include "segdiff/unified_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "segdiff/evaluation.hpp"

namespace segdiff::unified {

std::size_t DenoiserConfig::tokens_per_stream() const { return chunk_count(frames, chunk); }

void DenoiserConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid denoiser config: ") + what);
  };
  require(filters >= 1 && frames >= 1, "latent shape");
  require(chunk >= 2 && chunk % 2 == 0 && chunk <= frames, "chunk must be even and fit the latent");
  require(width >= 2 && width % 2 == 0, "width must be even");
  require(heads >= 1 && width % static_cast<std::size_t>(heads) == 0, "heads must divide width");
  require(layers >= 1 && ffn >= 1 && cond_hidden >= 1 && mel_bins >= 1, "layer sizes");
  require(latent_scale >= 0 && std::isfinite(latent_scale), "latent_scale");
  require(schedule_steps >= 1, "schedule_steps");
  require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, "beta range");
}

DenoiserConfig paper_config(std::size_t filters, std::size_t frames) {
  DenoiserConfig c;
  c.filters = filters;
  c.frames = frames;
  c.layers = 8;
  c.heads = 8;
  c.ffn = 1024;
  c.cond_hidden = 2045;
  return c;
}

MelConfig conditioning_mel(double sample_rate, std::size_t bins) {
  MelConfig m;
  m.rate = sample_rate;
  m.window_s = 0.05;
  m.hop_s = 0.0125;
  int fft = 1;
  while (fft < static_cast<int>(std::llround(m.window_s * sample_rate))) fft *= 2;
  m.fft_size = fft;
  m.bins = static_cast<int>(bins);
  m.fmin = 20.0;
  m.fmax = sample_rate / 2.0;
  return m;
}

Tensor pooled_mel(const Waveform& wave, double sample_rate, std::size_t bins) {
  return mel_features(wave, conditioning_mel(sample_rate, bins)).mean_over_time();
}

Tensor timestep_embedding(int t, std::size_t dim) {
  Tensor e({dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

Tensor chunk_rows(const Tensor& lat, std::size_t chunk) {
  TimeFrequencyRep rep;
  rep.values = lat;
  auto c = chunk_latent(rep, chunk);
  return c.chunks.reshaped({c.chunk_count(), c.filters() * chunk});
}

Tensor owner_mask(std::size_t filters, std::size_t frames, std::size_t chunk) {
  const std::size_t n = chunk_count(frames, chunk), h = chunk / 2;
  Tensor m({n, filters * chunk});
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t k = chunk_owner(t, chunk, n);
    for (std::size_t f = 0; f < filters; ++f) m.at(k, f * chunk + (t - k * h)) = 1.0;
  }
  return m;
}

Tensor unchunk_rows(const Tensor& rows, std::size_t filters, std::size_t frames, std::size_t chunk) {
  ChunkedLatent c{rows.reshaped({rows.dim(0), filters, chunk}), frames};
  return dechunk_latent(c);
}

UnifiedDenoiser::UnifiedDenoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t D = cfg_.width, n = cfg_.tokens_per_stream();
  in_ = nn::Linear(store_, "in", cfg_.token_dim(), D, rng);
  pos_ = store_.add("pos", nn::uniform_init({n, D}, 0.02, rng));
  type_x_ = store_.add("type_x", nn::uniform_init({D}, 0.02, rng));
  type_y_ = store_.add("type_y", nn::uniform_init({D}, 0.02, rng));
  null_cx_ = store_.add("null_cx", Tensor({cfg_.mel_bins}));
  null_cy_ = store_.add("null_cy", Tensor({cfg_.mel_bins}));
  t_mlp1_ = nn::Linear(store_, "t_mlp1", D, D, rng);
  t_mlp2_ = nn::Linear(store_, "t_mlp2", D, D, rng);
  c_mlp1_ = nn::Linear(store_, "c_mlp1", 2 * cfg_.mel_bins, cfg_.cond_hidden, rng);
  c_mlp2_ = nn::Linear(store_, "c_mlp2", cfg_.cond_hidden, D, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1 = nn::LayerNorm(store_, p + "ln1", D);
    b.ln2 = nn::LayerNorm(store_, p + "ln2", D);
    b.qkv = nn::Linear(store_, p + "qkv", D, 3 * D, rng);
    b.proj = nn::Linear(store_, p + "proj", D, D, rng, 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers)));
    b.ff1 = nn::Linear(store_, p + "ff1", D, cfg_.ffn, rng);
    b.ff2 = nn::Linear(store_, p + "ff2", cfg_.ffn, D, rng, 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers)));
    blocks_.push_back(b);
  }
  out_norm_ = nn::LayerNorm(store_, "out_norm", D);
  out_ = nn::Linear(store_, "out", D, cfg_.token_dim(), rng);
  store_.set_trainable(false);
}

void UnifiedDenoiser::set_latent_scale(double s) {
  if (!(s > 0) || !std::isfinite(s)) throw Error("latent scale must be positive and finite");
  cfg_.latent_scale = s;
}

void UnifiedDenoiser::check_inputs(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y, const Tensor& c_y) const {
  const Shape want{cfg_.filters, cfg_.frames};
  if (x_lat.shape() != want || y_lat.shape() != want)
    throw Error("denoiser expects latents of shape " + shape_str(want) + ", got " + shape_str(x_lat.shape()) + " and " +
                shape_str(y_lat.shape()));
  if (t_x < 0 || t_x > cfg_.schedule_steps || t_y < 0 || t_y > cfg_.schedule_steps)
    throw Error("timestep outside [0, " + std::to_string(cfg_.schedule_steps) + "]");
  if (c_y.size() != cfg_.mel_bins) throw Error("conditioning vector has the wrong size");
}

ag::Var UnifiedDenoiser::stream_tokens(const Tensor& lat, int t, const ag::Var& type_emb) const {
  auto tok = in_(ag::constant(chunk_rows(lat, cfg_.chunk)));
  tok = ag::add(tok, pos_);
  auto te = ag::reshape(ag::constant(timestep_embedding(t, cfg_.width)), {1, cfg_.width});
  te = t_mlp2_(ag::gelu(t_mlp1_(te)));
  tok = ag::add_row(tok, ag::add(ag::reshape(te, {cfg_.width}), type_emb));
  return tok;
}

ag::Var UnifiedDenoiser::forward(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y,
                                 const std::optional<Tensor>& c_x, const Tensor& c_y) const {
  check_inputs(x_lat, y_lat, t_x, t_y, c_y);
  if (c_x && c_x->size() != cfg_.mel_bins) throw Error("conditioning vector has the wrong size");
  const std::size_t D = cfg_.width, n = cfg_.tokens_per_stream();

  ag::Var cx = c_x ? ag::constant(c_x->reshaped({cfg_.mel_bins})) : null_cx_;
  // A y stream at t_y = T carries nothing about y, and neither may its mel.
  ag::Var cy = t_y == cfg_.schedule_steps ? null_cy_ : ag::constant(c_y.reshaped({cfg_.mel_bins}));
  auto cond = ag::concat_rows({ag::reshape(cx, {1, cfg_.mel_bins}), ag::reshape(cy, {1, cfg_.mel_bins})});
  cond = ag::reshape(cond, {1, 2 * cfg_.mel_bins});
  auto gtok = c_mlp2_(ag::gelu(c_mlp1_(cond)));

  auto h = ag::concat_rows({stream_tokens(x_lat, t_x, type_x_), stream_tokens(y_lat, t_y, type_y_), gtok});
  for (const auto& b : blocks_) {
    auto qkv = b.qkv(b.ln1(h));
    auto att = ag::attention(ag::slice_cols(qkv, 0, D), ag::slice_cols(qkv, D, D), ag::slice_cols(qkv, 2 * D, D),
                             cfg_.heads);
    h = ag::add(h, b.proj(att));
    h = ag::add(h, b.ff2(ag::gelu(b.ff1(b.ln2(h)))));
  }
  return out_(out_norm_(ag::slice_rows(h, 0, 2 * n)));
}

NoisePrediction UnifiedDenoiser::predict_noise(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y,
                                               const std::optional<Tensor>& c_x, const Tensor& c_y) const {
  const auto out = forward(x_lat, y_lat, t_x, t_y, c_x, c_y)->value;
  const std::size_t n = cfg_.tokens_per_stream(), w = cfg_.token_dim();
  Tensor rx({n, w}), ry({n, w});
  std::copy(out.vec().begin(), out.vec().begin() + static_cast<std::ptrdiff_t>(n * w), rx.vec().begin());
  std::copy(out.vec().begin() + static_cast<std::ptrdiff_t>(n * w), out.vec().end(), ry.vec().begin());
  return {unchunk_rows(rx, cfg_.filters, cfg_.frames, cfg_.chunk), unchunk_rows(ry, cfg_.filters, cfg_.frames, cfg_.chunk)};
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::unconditional: return "unconditional";
    case Mode::conditional: return "conditional";
    case Mode::joint: return "joint";
    case Mode::free: return "free";
  }
  return "?";
}

ag::Var item_loss(const UnifiedDenoiser& model, const TrainItem& item, bool include_x, bool include_y) {
  const auto& cfg = model.config();
  const auto sched = cfg.schedule();
  auto noised = [&](const Tensor& x0, int t, const Tensor& eps) {
    return t == 0 ? x0 : diffusion::forward_noise(x0, t, eps, sched);
  };
  const Tensor xt = noised(item.x0, item.t_x, item.eps_x);
  const Tensor yt = noised(item.y0, item.t_y, item.eps_y);
  std::optional<Tensor> cx;
  if (!item.drop_cx) cx = item.c_x;
  auto out = model.forward(xt, yt, item.t_x, item.t_y, cx, item.c_y);

  const std::size_t n = cfg.tokens_per_stream(), w = cfg.token_dim();
  const Tensor mask = owner_mask(cfg.filters, cfg.frames, cfg.chunk);
  ag::Var total;
  auto stream = [&](std::size_t row0, const Tensor& eps) {
    const Tensor target = chunk_rows(eps, cfg.chunk);
    Tensor masked = target;
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i] *= mask[i];
    auto err = ag::squared_error(ag::mul(ag::slice_rows(out, row0, n), ag::constant(mask)), masked);
    total = total ? ag::add(total, err) : err;
  };
  (void)w;
  if (include_x && item.t_x > 0) stream(0, item.eps_x);
  if (include_y && item.t_y > 0) stream(n, item.eps_y);
  if (!total) total = ag::scale(ag::sum(out), 0.0);
  return total;
}

double train_step(const std::vector<TrainItem>& batch, UnifiedDenoiser& model, nn::AdamW& opt, double lr) {
  if (batch.empty()) throw Error("empty training batch");
  auto& store = model.params();
  store.zero_grad();
  const double per_item = static_cast<double>(2 * model.config().filters * model.config().frames);
  double total = 0;
  for (const auto& item : batch) {
    auto l = item_loss(model, item);
    if (!std::isfinite(l->value[0]))
      throw Error(std::string("non-finite denoiser loss (mode ") + mode_name(item.mode) + ", t_x " +
                  std::to_string(item.t_x) + ", t_y " + std::to_string(item.t_y) + ")");
    total += l->value[0];
    // Per-element scaling keeps gradient magnitudes independent of latent size.
    ag::backward(ag::scale(l, 1.0 / (per_item * static_cast<double>(batch.size()))));
  }
  opt.step(lr);
  return total / static_cast<double>(batch.size());
}

void DiffusionTrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid diffusion training config: ") + what);
  };
  require(steps >= 0 && batch_size >= 1, "steps and batch size");
  require(lr > 0 && lr_floor >= 0, "learning rates");
  require(p_unconditional >= 0 && p_conditional >= 0 && p_joint >= 0 &&
              p_unconditional + p_conditional + p_joint <= 1.0 + 1e-12,
          "mode probabilities must be non-negative and sum to at most 1");
  require(p_null_cx >= 0 && p_null_cx <= 1, "p_null_cx");
  require(train_fraction > 0 && train_fraction < 1, "train_fraction must lie in (0, 1)");
}

TrainItem make_item(const PairExample& ex, double scale, const DiffusionTrainConfig& cfg, int T, Rng& rng) {
  TrainItem it;
  it.x0 = ex.x0;
  it.y0 = ex.y0;
  for (auto& v : it.x0.vec()) v *= scale;
  for (auto& v : it.y0.vec()) v *= scale;
  it.c_x = ex.c_x;
  it.c_y = ex.c_y;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> step(1, T);
  const double r = u(rng);
  it.t_x = step(rng);
  if (r < cfg.p_unconditional) {
    it.mode = Mode::unconditional;
    it.t_y = T;
  } else if (r < cfg.p_unconditional + cfg.p_conditional) {
    it.mode = Mode::conditional;
    it.t_y = 0;
  } else if (r < cfg.p_unconditional + cfg.p_conditional + cfg.p_joint) {
    it.mode = Mode::joint;
    it.t_y = it.t_x;
  } else {
    it.mode = Mode::free;
    it.t_y = step(rng);
  }
  it.eps_x = gaussian(it.x0.shape(), rng);
  it.eps_y = gaussian(it.y0.shape(), rng);
  it.drop_cx = u(rng) < cfg.p_null_cx;
  return it;
}

io::Json DiffusionLogEntry::to_json() const { return {{"step", step}, {"loss", loss}, {"mode", mode}, {"lr", lr}}; }

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed) {
  if (n < 2) throw Error("need at least two pairs to split into train and test");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

double latent_rms(const std::vector<PairExample>& examples) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& e : examples) {
    for (double v : e.x0.vec()) s += v * v;
    for (double v : e.y0.vec()) s += v * v;
    n += e.x0.size() + e.y0.size();
  }
  if (n == 0) throw Error("no latents to measure");
  return std::sqrt(s / static_cast<double>(n));
}

std::vector<DiffusionLogEntry> train_model(UnifiedDenoiser& model, const std::vector<PairExample>& train,
                                           const DiffusionTrainConfig& cfg,
                                           const std::function<void(const DiffusionLogEntry&)>& on_step) {
  cfg.validate();
  if (train.empty()) throw Error("no training pairs");
  if (model.config().latent_scale == 0.0) {
    const double rms = latent_rms(train);
    if (!(rms > 0)) throw Error("training latents are all zero");
    model.set_latent_scale(1.0 / rms);
  }
  const double scale = model.config().latent_scale;
  const int T = model.config().schedule_steps;
  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  auto& store = model.params();
  store.set_trainable(true);
  nn::AdamW opt(store);
  std::vector<DiffusionLogEntry> log;
  try {
    for (long s = 0; s < cfg.steps; ++s) {
      const double lr = nn::cosine_lr(s, cfg.steps, cfg.lr, cfg.lr_floor);
      std::vector<TrainItem> batch;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(make_item(train[pick(rng)], scale, cfg, T, rng));
      const double loss = train_step(batch, model, opt, lr);
      DiffusionLogEntry e{s, loss, mode_name(batch.front().mode), lr};
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

ConditioningComparison compare_conditioning(const UnifiedDenoiser& model, const std::vector<PairExample>& held_out,
                                            std::uint64_t seed) {
  if (held_out.size() < 2) throw Error("need at least two held-out pairs");
  const auto& cfg = model.config();
  if (!(cfg.latent_scale > 0)) throw Error("model has no latent scale; train it first");
  const int T = cfg.schedule_steps;
  Rng rng(seed);
  std::uniform_int_distribution<int> step(1, T);
  ConditioningComparison out;
  for (const auto& ex : held_out) {
    DiffusionTrainConfig dc;
    TrainItem it = make_item(ex, cfg.latent_scale, dc, T, rng);
    it.t_x = step(rng);
    it.drop_cx = true;
    it.t_y = 0;
    it.mode = Mode::conditional;
    out.conditional.push_back(item_loss(model, it, true, false)->value[0]);
    it.t_y = T;
    it.mode = Mode::unconditional;
    out.unconditional.push_back(item_loss(model, it, true, false)->value[0]);
  }
  out.p_value = evaluation::paired_t_test_less_p(out.conditional, out.unconditional);
  return out;
}

}  // namespace segdiff::unified
