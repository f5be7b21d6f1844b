#pragma once

// Pseudo-classifier guided DDIM sampling. The "classifier" is the dot product
// between segment embeddings of the sample being generated and of the source
// segment; its gradient shifts the predicted noise at every step.

#include <optional>
#include <string>
#include <vector>

#include "segdiff/diffusion.hpp"
#include "segdiff/encoder.hpp"
#include "segdiff/io.hpp"
#include "segdiff/unified_model.hpp"

namespace segdiff::guidance {

enum class Mode { uncond_noised, uncond_clean, cond_noised, cond_clean };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
inline bool is_conditional(Mode m) { return m == Mode::cond_noised || m == Mode::cond_clean; }
/// Clean modes take the guidance gradient at the current clean estimate.
inline bool is_clean(Mode m) { return m == Mode::uncond_clean || m == Mode::cond_clean; }

struct GuidanceConfig {
  std::string mode = "cond-noised";
  double guidance_scale = 1.0;
  int ddim_steps = 50;
  double sigma = 0.0;
  void validate(int schedule_steps) const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GuidanceConfig, mode, guidance_scale, ddim_steps, sigma)

/// f_s(latent) . y_emb for an unscaled [F, T] latent.
double pseudo_score(const Tensor& latent, const std::vector<double>& y_emb, const encoder::SegmentEncoder& enc);

/// eps_pred - scale * sqrt(1 - alpha_bar) * grad
Tensor modified_eps(const Tensor& eps_pred, const Tensor& grad, double alpha_bar, double scale);
Tensor modified_eps(const Tensor& eps_pred, const Tensor& grad, int t, const diffusion::NoiseSchedule& sched,
                    double scale);

/// sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev - sigma^2) * eps_hat + sigma * noise,
/// with x0_hat the clean estimate from (x_t, eps_hat). noise may be empty
/// when sigma = 0.
Tensor ddim_step(const Tensor& xt, const Tensor& eps_hat, int t, int t_prev, const diffusion::NoiseSchedule& sched,
                 double sigma = 0.0, const Tensor& noise = {});

/// Evenly spaced steps from T down to 1 (both included), then 0.
std::vector<int> ddim_timesteps(int T, int steps);

/// What the sampler needs to know about the source segment.
struct SourceContext {
  Tensor latent;              // unscaled f_i latent of the padded source, [F, T]
  std::vector<double> embedding;  // f_s of that latent
  Tensor mel;                 // pooled mel of the unpadded source
};
SourceContext source_context(const Waveform& source, const encoder::SegmentEncoder& enc,
                             const unified::DenoiserConfig& dcfg);

struct SampleTrace {
  Tensor latent;  // unscaled x_0
  std::vector<int> timesteps;
};

/// Guided sampling; the initial noise is drawn from seed. Modes with
/// "uncond" pass the frozen initial noise in the y slot at t_y = T, "cond"
/// modes pass the clean source latent at t_y = 0.
SampleTrace sample(const SourceContext& src, const unified::UnifiedDenoiser& model, const encoder::SegmentEncoder& enc,
                   const GuidanceConfig& cfg, std::uint64_t seed);
SampleTrace sample_unconditional(const SourceContext& src, const unified::UnifiedDenoiser& model,
                                 const encoder::SegmentEncoder& enc, const GuidanceConfig& cfg, std::uint64_t seed);
SampleTrace sample_conditional(const SourceContext& src, const unified::UnifiedDenoiser& model,
                               const encoder::SegmentEncoder& enc, const GuidanceConfig& cfg, std::uint64_t seed);

/// The same trajectory without any guidance term (no encoder involved).
SampleTrace sample_unguided(const SourceContext& src, const unified::UnifiedDenoiser& model, const GuidanceConfig& cfg,
                            std::uint64_t seed);

struct Translation {
  Waveform audio;  // padded length
  Tensor latent;
  double pseudo_score = 0;
  double runtime_ms = 0;
  io::Json sidecar(const GuidanceConfig& cfg, std::uint64_t seed) const;
};

/// Pad, encode, embed, sample and decode one source segment.
Translation translate(const Waveform& source, const unified::UnifiedDenoiser& model, const encoder::SegmentEncoder& enc,
                      const GuidanceConfig& cfg, std::uint64_t seed);

}  // namespace segdiff::guidance
