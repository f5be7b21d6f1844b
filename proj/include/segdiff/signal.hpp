#pragma once

// Audio containers and front-end transforms: WAV I/O, resampling, padding,
// the learned convolutional input encoder and its transposed decoder, log-mel
// conditioning features, and 50%-overlap latent chunking.

#include <filesystem>
#include <string>
#include <vector>

#include "segdiff/nn.hpp"

namespace segdiff {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 0.0;

  Waveform() = default;
  Waveform(std::vector<double> s, double rate);
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  std::size_t size() const { return samples.size(); }
  /// Samples [start_s, end_s) rounded to the nearest sample index.
  Waveform slice(double start_s, double end_s) const;
};

/// F x T latent from the input encoder.
struct TimeFrequencyRep {
  Tensor values;  // [F, T]
  int frame_stride = 8;
  int kernel_size = 16;

  std::size_t filters() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
};

/// Log-energy mel matrix [bins, frames].
struct MelSpectrogram {
  Tensor values;
  /// Per-bin mean over frames.
  Tensor mean_over_time() const;
};

/// Chunks [N, F, L]; chunk k starts at frame k * L / 2.
struct ChunkedLatent {
  Tensor chunks;
  std::size_t frames = 0;  // T of the source latent
  std::size_t chunk_count() const { return chunks.dim(0); }
  std::size_t filters() const { return chunks.dim(1); }
  std::size_t length() const { return chunks.dim(2); }
};

// ---- audio I/O ----

/// Mono PCM16 or IEEE float32 WAV.
Waveform read_wav(const std::filesystem::path& path);
/// Mono PCM16, clipped to [-1, 1]; written atomically.
void write_wav(const std::filesystem::path& path, const Waveform& wave);
/// WAV file image as bytes (PCM16).
std::string wav_bytes(const Waveform& wave);

Waveform resample(const Waveform& wave, double rate);
/// Scale so that max |sample| equals peak (silence is left untouched).
Waveform peak_normalize(const Waveform& wave, double peak = 0.95);
/// Zero-pad on the right to exactly target_seconds.
Waveform pad_segment(const Waveform& wave, double target_seconds = 20.0);

// ---- learned front end ----

struct InputEncoderConfig {
  std::size_t filters = 256;
  int kernel = 16;
  int stride = 8;
};

inline std::size_t encoded_frames(std::size_t samples, int kernel = 16, int stride = 8) {
  return (samples - static_cast<std::size_t>(kernel)) / static_cast<std::size_t>(stride) + 1;
}

/// f_i: Conv1d(1 -> F, kernel, stride) followed by ReLU.
class InputEncoder {
 public:
  InputEncoder() = default;
  InputEncoder(nn::ParamStore& store, const std::string& name, InputEncoderConfig cfg, Rng& rng);

  const InputEncoderConfig& config() const { return cfg_; }
  ag::Var forward(const ag::Var& wave) const;
  TimeFrequencyRep encode(const Waveform& wave) const;

  ag::Var weight, bias;

 private:
  InputEncoderConfig cfg_;
};

/// Transposed Conv1d(F -> 1) that maps a latent back to samples.
class LatentDecoder {
 public:
  LatentDecoder() = default;
  LatentDecoder(nn::ParamStore& store, const std::string& name, InputEncoderConfig cfg, Rng& rng);

  ag::Var forward(const ag::Var& latent) const;
  Waveform decode(const TimeFrequencyRep& rep, double sample_rate) const;

  ag::Var weight, bias;

 private:
  InputEncoderConfig cfg_;
};

TimeFrequencyRep input_encode(const Waveform& wave, const InputEncoder& encoder);
Waveform decode_latent(const TimeFrequencyRep& rep, const LatentDecoder& decoder, double sample_rate);

// ---- conditioning features ----

struct MelConfig {
  double rate = 24000.0;
  double window_s = 0.050;
  double hop_s = 0.0125;
  int fft_size = 2048;
  int bins = 128;
  double fmin = 20.0;
  double fmax = 12000.0;
  double floor = 1e-10;
};

/// Triangular filters on the HTK mel scale, [bins, fft_size/2 + 1].
Tensor mel_filterbank(const MelConfig& cfg = {});
/// Center frequency of each filter in Hz.
std::vector<double> mel_centers(const MelConfig& cfg = {});
MelSpectrogram mel_features(const Waveform& wave, const MelConfig& cfg = {});

// ---- chunking ----

ChunkedLatent chunk_latent(const TimeFrequencyRep& rep, std::size_t length);
/// Overlap-discard inverse: each frame is read from the chunk whose central
/// half contains it (the first and last chunks also own the edges).
Tensor dechunk_latent(const ChunkedLatent& chunked);
std::size_t chunk_count(std::size_t frames, std::size_t length);
/// Index of the chunk that owns `frame` in dechunking.
std::size_t chunk_owner(std::size_t frame, std::size_t length, std::size_t count);

}  // namespace segdiff
