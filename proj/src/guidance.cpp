#include "segdiff/guidance.hpp"

#include <chrono>
#include <cmath>

namespace segdiff::guidance {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::uncond_noised: return "uncond-noised";
    case Mode::uncond_clean: return "uncond-clean";
    case Mode::cond_noised: return "cond-noised";
    case Mode::cond_clean: return "cond-clean";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::uncond_noised, Mode::uncond_clean, Mode::cond_noised, Mode::cond_clean})
    if (s == mode_name(m)) return m;
  throw Error("unknown guidance mode \"" + s + "\" (expected uncond-noised, uncond-clean, cond-noised or cond-clean)");
}

void GuidanceConfig::validate(int schedule_steps) const {
  parse_mode(mode);
  if (!(guidance_scale >= 0) || !std::isfinite(guidance_scale)) throw Error("guidance_scale must be finite and >= 0");
  if (ddim_steps < 1 || ddim_steps > schedule_steps)
    throw Error("ddim_steps must lie in [1, " + std::to_string(schedule_steps) + "]");
  if (!(sigma >= 0)) throw Error("sigma must be >= 0");
}

double pseudo_score(const Tensor& latent, const std::vector<double>& y_emb, const encoder::SegmentEncoder& enc) {
  const auto h = enc.embed_latent(latent);
  if (h.size() != y_emb.size()) throw Error("embedding dimensions differ");
  double s = 0;
  for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * y_emb[i];
  return s;
}

Tensor modified_eps(const Tensor& eps_pred, const Tensor& grad, double alpha_bar, double scale) {
  if (!eps_pred.same_shape(grad)) throw Error("noise prediction and gradient shapes differ");
  const double c = scale * std::sqrt(1.0 - alpha_bar);
  Tensor out = eps_pred;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * grad[i];
  return out;
}

Tensor modified_eps(const Tensor& eps_pred, const Tensor& grad, int t, const diffusion::NoiseSchedule& sched,
                    double scale) {
  return modified_eps(eps_pred, grad, sched.alpha_bar(t), scale);
}

Tensor ddim_step(const Tensor& xt, const Tensor& eps_hat, int t, int t_prev, const diffusion::NoiseSchedule& sched,
                 double sigma, const Tensor& noise) {
  if (!(t > t_prev && t_prev >= 0)) throw Error("ddim_step needs t > t_prev >= 0");
  if (!xt.same_shape(eps_hat)) throw Error("latent and noise estimate shapes differ");
  const double ab_prev = sched.alpha_bar(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  if (dir2 < -1e-15) throw Error("sigma too large for this step");
  if (sigma > 0 && !noise.same_shape(xt)) throw Error("ddim_step with sigma > 0 needs a noise tensor");
  const Tensor x0 = diffusion::tweedie_x0(xt, eps_hat, t, sched);
  const double a = std::sqrt(ab_prev), b = std::sqrt(std::max(0.0, dir2));
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a * x0[i] + b * eps_hat[i];
    if (sigma > 0) out[i] += sigma * noise[i];
  }
  return out;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (T < 1 || steps < 1 || steps > T) throw Error("ddim_timesteps needs 1 <= steps <= T");
  std::vector<int> ts;
  if (steps == 1) {
    ts.push_back(T);
  } else {
    for (int k = steps - 1; k >= 0; --k) {
      const int t = 1 + static_cast<int>(std::llround(static_cast<double>(T - 1) * k / (steps - 1)));
      if (ts.empty() || t != ts.back()) ts.push_back(t);
    }
  }
  ts.push_back(0);
  return ts;
}

SourceContext source_context(const Waveform& source, const encoder::SegmentEncoder& enc,
                             const unified::DenoiserConfig& dcfg) {
  SourceContext c;
  c.latent = enc.latent(source).values;
  if (c.latent.dim(0) != dcfg.filters || c.latent.dim(1) != dcfg.frames)
    throw Error("encoder latent " + shape_str(c.latent.shape()) + " does not match the denoiser geometry");
  c.embedding = enc.embed_latent(c.latent);
  c.mel = unified::pooled_mel(source, enc.config().sample_rate, dcfg.mel_bins);
  return c;
}

namespace {

Tensor scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (auto& v : out.vec()) v *= s;
  return out;
}

// Gradient of f_s(z / s) . y_emb with respect to the scaled latent z.
Tensor guidance_grad(const Tensor& z, double s, const std::vector<double>& y_emb, const encoder::SegmentEncoder& enc) {
  return scaled(encoder::encoder_grad(scaled(z, 1.0 / s), enc, y_emb), 1.0 / s);
}

SampleTrace run(const SourceContext& src, const unified::UnifiedDenoiser& model, const encoder::SegmentEncoder* enc,
                const GuidanceConfig& cfg, std::uint64_t seed, bool guided) {
  const auto& dc = model.config();
  cfg.validate(dc.schedule_steps);
  if (!(dc.latent_scale > 0)) throw Error("denoiser has no latent scale; train or load it first");
  const Mode mode = parse_mode(cfg.mode);
  const int T = dc.schedule_steps;
  const auto sched = dc.schedule();
  const double s = dc.latent_scale;

  Rng rng(seed);
  Tensor x = gaussian({dc.filters, dc.frames}, rng);
  const Tensor frozen = x;
  const Tensor y0 = scaled(src.latent, s);
  SampleTrace trace;
  trace.timesteps = ddim_timesteps(T, cfg.ddim_steps);
  for (std::size_t k = 0; k + 1 < trace.timesteps.size(); ++k) {
    const int t = trace.timesteps[k], t_prev = trace.timesteps[k + 1];
    const auto pred = is_conditional(mode) ? model.predict_noise(x, y0, t, 0, std::nullopt, src.mel)
                                           : model.predict_noise(x, frozen, t, T, std::nullopt, src.mel);
    Tensor eps = pred.eps_x;
    if (guided) {
      const Tensor at = is_clean(mode) ? diffusion::tweedie_x0(x, eps, t, sched) : x;
      eps = modified_eps(eps, guidance_grad(at, s, src.embedding, *enc), t, sched, cfg.guidance_scale);
    }
    // The last steps cannot carry more noise than the marginal at t_prev.
    const double sigma = std::min(cfg.sigma, std::sqrt(1.0 - sched.alpha_bar(t_prev)));
    Tensor noise;
    if (sigma > 0) noise = gaussian(x.shape(), rng);
    x = ddim_step(x, eps, t, t_prev, sched, sigma, noise);
  }
  trace.latent = scaled(x, 1.0 / s);
  return trace;
}

}  // namespace

SampleTrace sample(const SourceContext& src, const unified::UnifiedDenoiser& model, const encoder::SegmentEncoder& enc,
                   const GuidanceConfig& cfg, std::uint64_t seed) {
  return run(src, model, &enc, cfg, seed, true);
}

SampleTrace sample_unconditional(const SourceContext& src, const unified::UnifiedDenoiser& model,
                                 const encoder::SegmentEncoder& enc, const GuidanceConfig& cfg, std::uint64_t seed) {
  if (is_conditional(parse_mode(cfg.mode))) throw Error("sample_unconditional needs an uncond-* mode");
  return run(src, model, &enc, cfg, seed, true);
}

SampleTrace sample_conditional(const SourceContext& src, const unified::UnifiedDenoiser& model,
                               const encoder::SegmentEncoder& enc, const GuidanceConfig& cfg, std::uint64_t seed) {
  if (!is_conditional(parse_mode(cfg.mode))) throw Error("sample_conditional needs a cond-* mode");
  return run(src, model, &enc, cfg, seed, true);
}

SampleTrace sample_unguided(const SourceContext& src, const unified::UnifiedDenoiser& model, const GuidanceConfig& cfg,
                            std::uint64_t seed) {
  return run(src, model, nullptr, cfg, seed, false);
}

io::Json Translation::sidecar(const GuidanceConfig& cfg, std::uint64_t seed) const {
  return {{"mode", cfg.mode},
          {"steps", cfg.ddim_steps},
          {"seed", seed},
          {"guidance_scale", cfg.guidance_scale},
          {"pseudo_score", pseudo_score},
          {"runtime_ms", runtime_ms}};
}

Translation translate(const Waveform& source, const unified::UnifiedDenoiser& model, const encoder::SegmentEncoder& enc,
                      const GuidanceConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto src = source_context(source, enc, model.config());
  auto trace = sample(src, model, enc, cfg, seed);
  Translation out;
  out.pseudo_score = pseudo_score(trace.latent, src.embedding, enc);
  TimeFrequencyRep rep;
  rep.values = trace.latent;
  rep.kernel_size = enc.config().kernel;
  rep.frame_stride = enc.config().stride;
  out.audio = enc.decoder().decode(rep, enc.config().sample_rate);
  out.latent = std::move(trace.latent);
  out.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace segdiff::guidance
