#pragma once

// Segment encoder f_s: input encoder f_i -> stacked stride-2 3x3 conv blocks
// over the [F, T] latent viewed as a one-channel image -> global max pool.
// A projection head (linear -> layer norm -> tanh) is used only by the
// contrastive loss.

#include <functional>
#include <optional>
#include <vector>

#include "segdiff/corpus.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/io.hpp"
#include "segdiff/nn.hpp"
#include "segdiff/segmentation.hpp"
#include "segdiff/signal.hpp"

namespace segdiff::encoder {

struct EncoderConfig {
  std::size_t filters = 8;
  int kernel = 16;
  int stride = 8;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t embedding_dim = 120;
  std::size_t projection_dim = 64;
  double sample_rate = 1000.0;
  double pad_seconds = 20.0;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  InputEncoderConfig input() const { return {filters, kernel, stride}; }
  std::size_t padded_samples() const;
  std::size_t latent_frames() const;
  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, filters, kernel, stride, channels, embedding_dim,
                                                projection_dim, sample_rate, pad_seconds, temperature, seed)

class SegmentEncoder {
 public:
  explicit SegmentEncoder(const EncoderConfig& cfg);
  SegmentEncoder(const SegmentEncoder&) = delete;
  SegmentEncoder& operator=(const SegmentEncoder&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const InputEncoder& input_encoder() const { return fi_; }
  const LatentDecoder& decoder() const { return dec_; }

  /// Pad to the configured length; the sample rate must match.
  Waveform padded(const Waveform& w) const;
  /// f_i of the padded waveform.
  TimeFrequencyRep latent(const Waveform& w) const;

  ag::Var latent_var(const Waveform& padded_wave) const;
  /// [F, T] latent -> [E] embedding (before the projection head).
  ag::Var embed_var(const ag::Var& latent) const;
  /// [E] -> [P]
  ag::Var project_var(const ag::Var& h) const;

  std::vector<double> embed_latent(const Tensor& latent) const;
  std::vector<double> embed(const Waveform& w) const;

 private:
  void check_latent(const Tensor& latent) const;

  EncoderConfig cfg_;
  nn::ParamStore store_;
  InputEncoder fi_;
  LatentDecoder dec_;
  std::vector<ag::Var> conv_w_, conv_b_;
  nn::Linear proj_;
  nn::LayerNorm proj_norm_;
};

std::vector<double> embed_segment(const segmentation::Segment& seg, const SegmentEncoder& model);
std::vector<double> embed_segment(const TimeFrequencyRep& rep, const SegmentEncoder& model);

/// Contrastive loss of one anchor from its dot products (no temperature
/// unless given): -log(e^pos / (e^pos + sum e^neg)).
double simclr_loss_from_dots(double positive, const std::vector<double>& negatives, double temperature = 1.0);

/// items[0] and items[1] share a language and serve as each other's
/// positive; items[2..] are the other language's negatives. The loss is
/// averaged over the two anchors.
struct ContrastiveItem {
  Waveform audio;  // padded
  corpus::Lang lang = corpus::Lang::x;
  int t = 0;       // 0 = clean, else diffusion step used to noise the latent
};
struct ContrastiveBatch {
  std::vector<ContrastiveItem> items;
};

/// Loss over projection vectors laid out as in ContrastiveBatch.
ag::Var simclr_loss(const std::vector<ag::Var>& projections, double temperature = 1.0);
/// Loss of a batch under the model, recomputing every embedding.
double simclr_loss(const ContrastiveBatch& batch, const SegmentEncoder& model, const diffusion::NoiseSchedule& sched,
                   std::uint64_t noise_seed);

struct EncoderTrainConfig {
  std::size_t batch_size = 32;
  long steps = 20000;
  double lr = 1e-4;
  double lr_floor = 0.0;
  double noised_fraction = 0.5;
  /// Weight of the decoder's sample-level reconstruction loss.
  double recon_weight = 1.0;
  /// "same_language": two segments of one language are positives.
  /// "location": a segment and the other language's audio at the same
  /// times are positives (needs location pairs).
  std::string positives = "same_language";
  /// Largest edge shift of the y crops under "location" positives.
  double location_margin_s = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderTrainConfig, batch_size, steps, lr, lr_floor, noised_fraction,
                                                recon_weight, positives, location_margin_s, seed)

struct EncoderLogEntry {
  long step = 0;
  double loss = 0;
  double contrastive = 0;
  double recon = 0;
  double lr = 0;
  io::Json to_json() const;
};

/// Sample a batch: two distinct segments of one language and batch_size - 2
/// of the other, with round(noised_fraction * n) items noised at t ~ U{1..T}.
ContrastiveBatch sample_batch(const std::vector<Waveform>& lang_x, const std::vector<Waveform>& lang_y,
                              std::size_t batch_size, double noised_fraction, std::size_t schedule_steps, Rng& rng,
                              const SegmentEncoder& model);

/// A segment of x and the y audio around the same times: y covers
/// [start - margin_before, end + margin_after] of the x segment.
struct LocationPair {
  Waveform x;
  Waveform y;
  double margin_before = 0;
  double margin_after = 0;
};

/// One pair per x segment that overlaps y's recording, with up to margin_s
/// of extra y audio on each side for random cropping.
std::vector<LocationPair> location_pairs(const std::vector<segmentation::Segment>& segs_x, const Waveform& y_audio,
                                         double margin_s = 1.0);

/// Crop of a pair's y audio: each edge moves by U(-margin, margin) from the
/// x segment's edge (limited to the stored margins); never longer than
/// max_s.
Waveform crop_location_span(const LocationPair& p, double max_s, Rng& rng);

/// items[0] = x of one pair, items[1] = a crop of its y audio, items[2..] =
/// crops of other pairs' y audio (without replacement while the pool lasts).
/// Random crops keep the duration of the x segment from identifying its
/// positive.
ContrastiveBatch sample_location_batch(const std::vector<LocationPair>& pairs, std::size_t batch_size,
                                       double noised_fraction, std::size_t schedule_steps, Rng& rng,
                                       const SegmentEncoder& model);

/// Joint contrastive + reconstruction training of f_i, the conv encoder,
/// the projection head and the latent decoder with AdamW and cosine
/// annealing. Inputs are unpadded segment waveforms of each language.
std::vector<EncoderLogEntry> train_encoder(SegmentEncoder& model, const std::vector<Waveform>& lang_x,
                                           const std::vector<Waveform>& lang_y, const EncoderTrainConfig& cfg,
                                           const diffusion::NoiseSchedule& sched,
                                           const std::function<void(const EncoderLogEntry&)>& on_step = {});
/// Training with positives == "location".
std::vector<EncoderLogEntry> train_encoder(SegmentEncoder& model, const std::vector<LocationPair>& pairs,
                                           const EncoderTrainConfig& cfg, const diffusion::NoiseSchedule& sched,
                                           const std::function<void(const EncoderLogEntry&)>& on_step = {});

/// d/d latent of f_s(latent) . direction.
Tensor encoder_grad(const Tensor& latent, const SegmentEncoder& model, const std::vector<double>& direction);

}  // namespace segdiff::encoder
