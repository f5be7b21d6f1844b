#pragma once

// Joint denoiser over a pair of latents. Both latents are cut into
// half-overlapping chunks, each chunk becomes one token, and the x and y
// token streams run through one pre-norm transformer together with a global
// token built from the pooled mel features of both segments. The model
// predicts the noise of each stream; t_y = T gives the marginal of x, t_y = 0
// the conditional given a clean y.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segdiff/diffusion.hpp"
#include "segdiff/io.hpp"
#include "segdiff/nn.hpp"
#include "segdiff/signal.hpp"

namespace segdiff::unified {

struct DenoiserConfig {
  std::size_t filters = 8;
  std::size_t frames = 2499;
  std::size_t chunk = 64;
  std::size_t width = 128;
  std::size_t layers = 4;
  int heads = 8;
  std::size_t ffn = 512;
  std::size_t cond_hidden = 256;
  std::size_t mel_bins = 32;
  /// Latents are multiplied by this before diffusion (0 = estimate from the
  /// training latents).
  double latent_scale = 0.0;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.005;
  std::uint64_t seed = 1;

  diffusion::NoiseSchedule schedule() const { return diffusion::make_schedule(schedule_steps, beta_start, beta_end); }
  std::size_t tokens_per_stream() const;
  std::size_t token_dim() const { return filters * chunk; }
  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DenoiserConfig, filters, frames, chunk, width, layers, heads, ffn,
                                                cond_hidden, mel_bins, latent_scale, schedule_steps, beta_start, beta_end,
                                                seed)

/// The published model size (8 blocks, 8 heads, FFN 1024, conditioning MLP
/// 2045) on the given latent geometry.
DenoiserConfig paper_config(std::size_t filters, std::size_t frames);

/// Mel front end for the conditioning vectors at the working rate.
MelConfig conditioning_mel(double sample_rate, std::size_t bins);
/// Per-bin time average of the log-mel features, [bins].
Tensor pooled_mel(const Waveform& wave, double sample_rate, std::size_t bins);

struct NoisePrediction {
  Tensor eps_x;  // [F, T]
  Tensor eps_y;  // [F, T]
};

class UnifiedDenoiser {
 public:
  explicit UnifiedDenoiser(const DenoiserConfig& cfg);
  UnifiedDenoiser(const UnifiedDenoiser&) = delete;
  UnifiedDenoiser& operator=(const UnifiedDenoiser&) = delete;

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  /// Fix the latent scale after construction (training estimates it).
  void set_latent_scale(double s);

  /// Token-level prediction [2N, F*L] (x tokens first); c_x may be absent,
  /// in which case the learned null vector stands in. At t_y = T, c_y is
  /// replaced by its own null vector.
  ag::Var forward(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y, const std::optional<Tensor>& c_x,
                  const Tensor& c_y) const;

  /// Inputs and outputs in the scaled latent space, shapes [F, T].
  NoisePrediction predict_noise(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y,
                                const std::optional<Tensor>& c_x, const Tensor& c_y) const;

  /// The output head's parameters (for tests that silence it).
  std::vector<ag::Var> output_head() const { return {out_.w, out_.b}; }

 private:
  void check_inputs(const Tensor& x_lat, const Tensor& y_lat, int t_x, int t_y, const Tensor& c_y) const;
  ag::Var stream_tokens(const Tensor& lat, int t, const ag::Var& type_emb) const;

  DenoiserConfig cfg_;
  nn::ParamStore store_;
  nn::Linear in_;
  ag::Var pos_, type_x_, type_y_, null_cx_, null_cy_;
  nn::Linear t_mlp1_, t_mlp2_;
  nn::Linear c_mlp1_, c_mlp2_;
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear qkv, proj, ff1, ff2;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm out_norm_;
  nn::Linear out_;
};

/// Sinusoidal embedding of a step index, [dim].
Tensor timestep_embedding(int t, std::size_t dim);

/// Chunk-space rows [N, F*L] of a latent, and the 0/1 mask selecting the
/// entry of each frame that de-chunking reads.
Tensor chunk_rows(const Tensor& lat, std::size_t chunk);
Tensor owner_mask(std::size_t filters, std::size_t frames, std::size_t chunk);
/// Inverse of chunk_rows by overlap-discard, [F, T].
Tensor unchunk_rows(const Tensor& rows, std::size_t filters, std::size_t frames, std::size_t chunk);

enum class Mode { unconditional, conditional, joint, free };
const char* mode_name(Mode m);

/// Encoded, scaled training example.
struct TrainItem {
  Tensor x0, y0;  // [F, T], scaled
  Tensor c_x, c_y;
  int t_x = 1, t_y = 1;
  Tensor eps_x, eps_y;
  bool drop_cx = false;
  Mode mode = Mode::free;
};

/// Sum of squared noise errors over the streams that carry noise (t > 0);
/// a stream at t = 0 has nothing to predict and is left out.
ag::Var item_loss(const UnifiedDenoiser& model, const TrainItem& item, bool include_x = true, bool include_y = true);

/// One AdamW update on the mean item loss; returns that mean.
double train_step(const std::vector<TrainItem>& batch, UnifiedDenoiser& model, nn::AdamW& opt, double lr);

struct DiffusionTrainConfig {
  long steps = 2000;
  std::size_t batch_size = 8;
  double lr = 3e-4;
  double lr_floor = 1e-5;
  double p_unconditional = 1.0 / 3.0;
  double p_conditional = 1.0 / 3.0;
  /// Remaining probability mass samples t_x and t_y independently.
  double p_joint = 0.0;
  /// Probability of replacing c_x by the null vector.
  double p_null_cx = 0.5;
  double train_fraction = 0.7;
  std::uint64_t seed = 1;
  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiffusionTrainConfig, steps, batch_size, lr, lr_floor, p_unconditional,
                                                p_conditional, p_joint, p_null_cx, train_fraction, seed)

/// Clean training example before noising.
struct PairExample {
  Tensor x0, y0;  // unscaled [F, T]
  Tensor c_x, c_y;
};

/// Draw mode, steps, noise and the null-c_x flag for one example.
TrainItem make_item(const PairExample& ex, double scale, const DiffusionTrainConfig& cfg, int T, Rng& rng);

struct DiffusionLogEntry {
  long step = 0;
  double loss = 0;
  std::string mode;  // mode of the batch's first item
  double lr = 0;
  io::Json to_json() const;
};

/// Deterministic 70/30 style split of example indices by a seeded shuffle.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed);

/// Root mean square of all latent entries (the inverse is the default
/// latent scale).
double latent_rms(const std::vector<PairExample>& examples);

/// Train on the given examples (all of them; split beforehand).
std::vector<DiffusionLogEntry> train_model(UnifiedDenoiser& model, const std::vector<PairExample>& train,
                                           const DiffusionTrainConfig& cfg,
                                           const std::function<void(const DiffusionLogEntry&)>& on_step = {});

/// Loss of the x stream only for the same (x0, t_x, eps_x) under t_y = 0
/// (clean y) and t_y = T (y replaced by noise at T), per example.
struct ConditioningComparison {
  std::vector<double> conditional;
  std::vector<double> unconditional;
  double p_value = 1.0;
};
ConditioningComparison compare_conditioning(const UnifiedDenoiser& model, const std::vector<PairExample>& held_out,
                                            std::uint64_t seed);

}  // namespace segdiff::unified
