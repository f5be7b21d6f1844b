#include "segdiff/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>
#include <numbers>

#include "segdiff/io.hpp"
#include "segdiff/kernels.hpp"

namespace segdiff {

Waveform::Waveform(std::vector<double> s, double rate) : samples(std::move(s)), sample_rate(rate) {
  if (!(rate > 0.0)) throw Error("sample rate must be positive");
  for (double v : samples)
    if (!std::isfinite(v)) throw Error("waveform contains non-finite samples");
}

Waveform Waveform::slice(double start_s, double end_s) const {
  auto clamp_index = [&](double s) {
    const auto i = static_cast<long>(std::llround(s * sample_rate));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(samples.size())));
  };
  const std::size_t a = clamp_index(start_s), b = clamp_index(end_s);
  if (b <= a) return Waveform({}, sample_rate);
  return Waveform(std::vector<double>(samples.begin() + static_cast<long>(a), samples.begin() + static_cast<long>(b)),
                  sample_rate);
}

Tensor MelSpectrogram::mean_over_time() const {
  const std::size_t bins = values.dim(0), frames = values.dim(1);
  Tensor out({bins});
  for (std::size_t b = 0; b < bins; ++b) {
    double s = 0;
    for (std::size_t f = 0; f < frames; ++f) s += values.at(b, f);
    out[b] = s / static_cast<double>(frames);
  }
  return out;
}

// ---- WAV ----

namespace {

template <typename T>
T read_le(const std::string& bytes, std::size_t pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error("truncated WAV file");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw Error(path.string() + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  int format = 0, channels = 0, bits = 0;
  double rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const auto size = read_le<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      format = read_le<std::uint16_t>(bytes, body);
      channels = read_le<std::uint16_t>(bytes, body + 2);
      rate = read_le<std::uint32_t>(bytes, body + 4);
      bits = read_le<std::uint16_t>(bytes, body + 14);
      if (format == 0xFFFE && size >= 26) format = read_le<std::uint16_t>(bytes, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(path.string() + ": data chunk before fmt chunk");
      if (channels != 1) throw Error(path.string() + ": only mono audio is supported");
      const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
      std::vector<double> samples;
      if (format == 1 && bits == 16) {
        samples.resize(avail / 2);
        for (std::size_t i = 0; i < samples.size(); ++i)
          samples[i] = read_le<std::int16_t>(bytes, body + 2 * i) / 32768.0;
      } else if (format == 3 && bits == 32) {
        samples.resize(avail / 4);
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = read_le<float>(bytes, body + 4 * i);
      } else {
        throw Error(path.string() + ": unsupported sample format (need PCM16 or float32)");
      }
      return Waveform(std::move(samples), rate);
    }
    pos = body + size + (size & 1);
  }
  throw Error(path.string() + ": no data chunk");
}

std::string wav_bytes(const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(wave.sample_rate));
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, rate);
  put_le<std::uint32_t>(out, rate * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out += "data";
  put_le<std::uint32_t>(out, 2 * n);
  for (double s : wave.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0))));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) { io::write_file_atomic(path, wav_bytes(wave)); }

Waveform resample(const Waveform& wave, double rate) {
  if (!(rate > 0)) throw Error("target rate must be positive");
  if (rate == wave.sample_rate) return wave;
  const auto out_n = static_cast<std::size_t>(std::floor(static_cast<double>(wave.size()) * rate / wave.sample_rate));
  std::vector<double> out(out_n);
  kernels::resample(wave.samples.data(), static_cast<int>(wave.size()), wave.sample_rate, rate, 16, out.data(),
                    static_cast<int>(out_n));
  return Waveform(std::move(out), rate);
}

Waveform peak_normalize(const Waveform& wave, double peak) {
  double m = 0;
  for (double s : wave.samples) m = std::max(m, std::abs(s));
  if (m == 0.0) return wave;
  Waveform out = wave;
  for (double& s : out.samples) s *= peak / m;
  return out;
}

Waveform pad_segment(const Waveform& wave, double target_seconds) {
  const auto target = static_cast<std::size_t>(std::llround(target_seconds * wave.sample_rate));
  if (wave.size() > target)
    throw Error("segment of " + std::to_string(wave.duration()) + " s exceeds the " + std::to_string(target_seconds) +
                " s padding target");
  Waveform out = wave;
  out.samples.resize(target, 0.0);
  return out;
}

// ---- input encoder / decoder ----

InputEncoder::InputEncoder(nn::ParamStore& store, const std::string& name, InputEncoderConfig cfg, Rng& rng)
    : cfg_(cfg) {
  weight = store.add(name + ".w", nn::he_init({cfg.filters, static_cast<std::size_t>(cfg.kernel)},
                                              static_cast<std::size_t>(cfg.kernel), rng));
  bias = store.add(name + ".b", Tensor({cfg.filters}));
}

ag::Var InputEncoder::forward(const ag::Var& wave) const {
  if (wave->value.size() < static_cast<std::size_t>(cfg_.kernel)) throw Error("segment too short to encode");
  return ag::relu(ag::conv1d(wave, weight, bias, cfg_.stride));
}

TimeFrequencyRep InputEncoder::encode(const Waveform& wave) const {
  auto out = forward(ag::constant(Tensor({wave.size()}, wave.samples)));
  return TimeFrequencyRep{std::move(out->value), cfg_.stride, cfg_.kernel};
}

LatentDecoder::LatentDecoder(nn::ParamStore& store, const std::string& name, InputEncoderConfig cfg, Rng& rng)
    : cfg_(cfg) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.filters * static_cast<std::size_t>(cfg.kernel) /
                                                           static_cast<std::size_t>(cfg.stride)));
  weight = store.add(name + ".w", nn::uniform_init({cfg.filters, static_cast<std::size_t>(cfg.kernel)}, bound, rng));
  bias = store.add(name + ".b", Tensor({1}));
}

ag::Var LatentDecoder::forward(const ag::Var& latent) const {
  if (latent->value.rank() != 2 || latent->value.dim(0) != cfg_.filters)
    throw Error("latent shape " + shape_str(latent->value.shape()) + " does not match decoder with " +
                std::to_string(cfg_.filters) + " filters");
  return ag::conv_transpose1d(latent, weight, bias, cfg_.stride);
}

Waveform LatentDecoder::decode(const TimeFrequencyRep& rep, double sample_rate) const {
  auto out = forward(ag::constant(rep.values));
  return Waveform(std::move(out->value.vec()), sample_rate);
}

TimeFrequencyRep input_encode(const Waveform& wave, const InputEncoder& encoder) { return encoder.encode(wave); }

Waveform decode_latent(const TimeFrequencyRep& rep, const LatentDecoder& decoder, double sample_rate) {
  return decoder.decode(rep, sample_rate);
}

// ---- mel ----

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.bins + 2));
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.bins + 1));
  return edges;
}

std::mutex fftw_planner_mutex;

}  // namespace

std::vector<double> mel_centers(const MelConfig& cfg) {
  auto e = mel_edges(cfg);
  return std::vector<double>(e.begin() + 1, e.end() - 1);
}

Tensor mel_filterbank(const MelConfig& cfg) {
  const auto edges = mel_edges(cfg);
  const std::size_t nfreq = static_cast<std::size_t>(cfg.fft_size / 2 + 1);
  Tensor fb({static_cast<std::size_t>(cfg.bins), nfreq});
  for (std::size_t b = 0; b < static_cast<std::size_t>(cfg.bins); ++b) {
    const double lo = edges[b], c = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < nfreq; ++k) {
      const double f = static_cast<double>(k) * cfg.rate / cfg.fft_size;
      const double w = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
      fb.at(b, k) = std::max(0.0, w);
    }
  }
  return fb;
}

MelSpectrogram mel_features(const Waveform& wave, const MelConfig& cfg) {
  const Waveform w = resample(wave, cfg.rate);
  const auto win = static_cast<std::size_t>(std::llround(cfg.window_s * cfg.rate));
  const auto hop = static_cast<std::size_t>(std::llround(cfg.hop_s * cfg.rate));
  const auto nfft = static_cast<std::size_t>(cfg.fft_size);
  if (w.size() < win) throw Error("input too short for mel features: need at least one window");
  if (win > nfft) throw Error("mel window longer than FFT size");
  const std::size_t frames = (w.size() - win) / hop + 1;
  const std::size_t nfreq = nfft / 2 + 1;
  const Tensor fb = mel_filterbank(cfg);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));

  double* in = fftw_alloc_real(nfft);
  fftw_complex* spec = fftw_alloc_complex(nfreq);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in, spec, FFTW_ESTIMATE);
  }
  MelSpectrogram out{Tensor({static_cast<std::size_t>(cfg.bins), frames})};
  std::vector<double> power(nfreq);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(in, in + nfft, 0.0);
    for (std::size_t i = 0; i < win; ++i) in[i] = w.samples[f * hop + i] * window[i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < nfreq; ++k) power[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    for (std::size_t b = 0; b < static_cast<std::size_t>(cfg.bins); ++b) {
      double e = 0;
      for (std::size_t k = 0; k < nfreq; ++k) e += fb.at(b, k) * power[k];
      out.values.at(b, f) = std::log(std::max(e, cfg.floor));
    }
  }
  {
    std::lock_guard lock(fftw_planner_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(spec);
  return out;
}

// ---- chunking ----

std::size_t chunk_count(std::size_t frames, std::size_t length) {
  const std::size_t h = length / 2;
  return (frames - h + h - 1) / h;
}

std::size_t chunk_owner(std::size_t frame, std::size_t length, std::size_t count) {
  const std::size_t h = length / 2, q = h / 2;
  if (frame < q) return 0;
  return std::min((frame - q) / h, count - 1);
}

ChunkedLatent chunk_latent(const TimeFrequencyRep& rep, std::size_t length) {
  const std::size_t F = rep.filters(), T = rep.frames();
  if (length == 0 || length % 2 != 0) throw Error("chunk length must be a positive even number");
  if (length > T) throw Error("chunk length " + std::to_string(length) + " exceeds latent length " + std::to_string(T));
  const std::size_t n = chunk_count(T, length), h = length / 2;
  ChunkedLatent out{Tensor({n, F, length}), T};
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t j = 0; j < length; ++j) {
        const std::size_t src = k * h + j;
        out.chunks[(k * F + f) * length + j] = src < T ? rep.values.at(f, src) : 0.0;
      }
  return out;
}

Tensor dechunk_latent(const ChunkedLatent& c) {
  const std::size_t n = c.chunk_count(), F = c.filters(), L = c.length(), T = c.frames, h = L / 2;
  Tensor out({F, T});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t k = chunk_owner(t, L, n);
    const std::size_t j = t - k * h;
    for (std::size_t f = 0; f < F; ++f) out.at(f, t) = c.chunks[(k * F + f) * L + j];
  }
  return out;
}

}  // namespace segdiff
