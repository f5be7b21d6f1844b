#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "segdiff/signal.hpp"
#include "testing.hpp"

using namespace segdiff;

namespace {

Waveform tone(double freq, double seconds, double rate, double amp = 0.5) {
  std::vector<double> s(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = amp * std::sin(2 * std::numbers::pi * freq * i / rate);
  return Waveform(std::move(s), rate);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("segdiff_test_" + name);
}

}  // namespace

TEST_CASE("waveform validates its invariants") {
  CHECK_THROWS_AS(Waveform({0.0}, 0.0), Error);
  CHECK_THROWS_AS(Waveform({std::nan("")}, 100.0), Error);
  Waveform w({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 10.0);
  auto s = w.slice(0.2, 0.5);
  CHECK(s.samples == std::vector<double>{2, 3, 4});
}

TEST_CASE("input encoder shapes") {
  Rng rng(1);
  nn::ParamStore store;
  InputEncoder enc(store, "fi", {}, rng);
  CHECK(input_encode(Waveform(std::vector<double>(16, 0.1), 24000), enc).values.shape() == Shape{256, 1});
  const auto big = input_encode(Waveform(std::vector<double>(480000, 0.0), 24000), enc);
  CHECK(big.values.shape() == Shape{256, 59999});
  CHECK(max_abs(big.values) == 0.0);
  CHECK_THROWS_WITH_AS(input_encode(Waveform(std::vector<double>(15, 0.0), 24000), enc),
                       "segment too short to encode", Error);
}

TEST_CASE("input encoder shape law and positivity on random lengths") {
  Rng rng(2);
  nn::ParamStore store;
  InputEncoder enc(store, "fi", {.filters = 12}, rng);
  std::uniform_int_distribution<std::size_t> len(16, 3000);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = len(rng);
    Waveform w(testing::random_tensor({n}, rng).vec(), 8000);
    const auto rep = enc.encode(w);
    CHECK(rep.frames() == (n - 16) / 8 + 1);
    CHECK(rep.filters() == 12);
    for (double v : rep.values.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("latent decoder shapes") {
  Rng rng(3);
  nn::ParamStore store;
  LatentDecoder dec(store, "dec", {}, rng);
  TimeFrequencyRep zero{Tensor({256, 59999})};
  const auto w = decode_latent(zero, dec, 24000);
  CHECK(w.size() == 480000);
  CHECK(*std::max_element(w.samples.begin(), w.samples.end()) == 0.0);
  TimeFrequencyRep bad{Tensor({128, 10})};
  CHECK_THROWS_AS(decode_latent(bad, dec, 24000), Error);
}

TEST_CASE("pad_segment") {
  const auto twenty = tone(100, 20, 24000);
  CHECK(pad_segment(twenty).samples == twenty.samples);
  const auto three = tone(100, 3, 24000);
  const auto padded = pad_segment(three);
  REQUIRE(padded.size() == 480000);
  CHECK(std::equal(three.samples.begin(), three.samples.end(), padded.samples.begin()));
  CHECK(std::all_of(padded.samples.begin() + 72000, padded.samples.end(), [](double v) { return v == 0.0; }));
  CHECK_THROWS_AS(pad_segment(tone(100, 21, 24000)), Error);
}

TEST_CASE("pad_segment preserves random prefixes bit-exactly") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 4000;
    Waveform w(testing::random_tensor({n}, rng).vec(), 1000);
    const auto p = pad_segment(w, 4.0);
    CHECK(p.size() == 4000);
    CHECK(std::equal(w.samples.begin(), w.samples.end(), p.samples.begin()));
    CHECK(std::all_of(p.samples.begin() + static_cast<long>(n), p.samples.end(), [](double v) { return v == 0.0; }));
  }
}

TEST_CASE("peak normalization") {
  Waveform w({0.1, -0.4, 0.2}, 10);
  const auto n = peak_normalize(w);
  CHECK(n.samples[1] == doctest::Approx(-0.95));
  CHECK(n.samples[0] == doctest::Approx(0.95 / 4));
  Waveform z({0, 0}, 10);
  CHECK(peak_normalize(z).samples == z.samples);
}

TEST_CASE("mel feature shapes and silence floor") {
  const auto m = mel_features(Waveform(std::vector<double>(480000, 0.0), 24000));
  CHECK(m.values.shape() == Shape{128, 1597});
  for (double v : m.values.data()) CHECK(v == std::log(1e-10));
}

TEST_CASE("mel frame count law over durations") {
  for (double dur : {0.05, 0.0513, 0.3, 1.0, 2.71, 7.5, 20.0}) {
    const auto n = static_cast<std::size_t>(std::llround(dur * 24000));
    const auto m = mel_features(Waveform(std::vector<double>(n, 0.01), 24000));
    CHECK(m.values.dim(1) == (n - 1200) / 300 + 1);
  }
  CHECK_THROWS_AS(mel_features(Waveform(std::vector<double>(1199, 0.0), 24000)), Error);
}

TEST_CASE("mel argmax of a pure tone sits on the filter covering it") {
  // Independent oracle: the HTK-mel filter edges recomputed here.
  const int bins = 128;
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edges(bins + 2);
  for (int i = 0; i < bins + 2; ++i) edges[i] = hz(mel(20) + (mel(12000) - mel(20)) * i / (bins + 1));
  for (double f : {440.0, 1000.0, 3150.0}) {
    const auto m = mel_features(tone(f, 1.0, 24000));
    // Filter with the largest triangular response at f.
    int expect = 0;
    double best = -1;
    for (int b = 0; b < bins; ++b) {
      const double w = std::min((f - edges[b]) / (edges[b + 1] - edges[b]), (edges[b + 2] - f) / (edges[b + 2] - edges[b + 1]));
      if (w > best) best = w, expect = b;
    }
    for (std::size_t fr = 0; fr < m.values.dim(1); ++fr) {
      std::size_t arg = 0;
      for (std::size_t b = 1; b < 128; ++b)
        if (m.values.at(b, fr) > m.values.at(arg, fr)) arg = b;
      CHECK(static_cast<int>(arg) == expect);
    }
  }
}

TEST_CASE("mel features resample lower-rate input") {
  const auto m = mel_features(tone(300, 2.0, 2000));
  CHECK(m.values.dim(1) == (48000 - 1200) / 300 + 1);
}

TEST_CASE("chunking examples") {
  Rng rng(5);
  const std::size_t L = 8;
  TimeFrequencyRep one{testing::random_tensor({3, L}, rng)};
  auto c1 = chunk_latent(one, L);
  CHECK(c1.chunk_count() == 1);
  CHECK(c1.chunks.vec() == one.values.vec());

  TimeFrequencyRep two{testing::random_tensor({3, 2 * L}, rng)};
  auto c2 = chunk_latent(two, L);
  REQUIRE(c2.chunk_count() == 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t j = 0; j < L; ++j) CHECK(c2.chunks[(k * 3 + f) * L + j] == two.values.at(f, k * L / 2 + j));

  CHECK_THROWS_AS(chunk_latent(two, 7), Error);
  CHECK_THROWS_AS(chunk_latent(two, 2 * L + 2), Error);
}

TEST_CASE("chunk then dechunk is the identity for all small (T, L)") {
  Rng rng(6);
  for (std::size_t L = 2; L <= 16; L += 2)
    for (std::size_t T = L; T <= 3 * L + 5; ++T) {
      TimeFrequencyRep rep{testing::random_tensor({2, T}, rng)};
      const auto c = chunk_latent(rep, L);
      CHECK(c.chunk_count() == static_cast<std::size_t>(std::ceil((T - L / 2.0) / (L / 2.0))));
      CHECK(dechunk_latent(c).vec() == rep.values.vec());
    }
}

TEST_CASE("WAV round trip") {
  const auto path = temp_path("rt.wav");
  Waveform w({0.0, 0.5, -0.5, 0.999, -1.0, 0.25}, 16000);
  write_wav(path, w);
  const auto r = read_wav(path);
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32768);
  std::filesystem::remove(path);
}

TEST_CASE("WAV float32 input is accepted and stereo is rejected") {
  auto make = [](std::uint16_t fmt, std::uint16_t ch, std::uint16_t bits, const std::string& data) {
    std::string s = "RIFF";
    auto put32 = [&](std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); };
    auto put16 = [&](std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); };
    put32(36 + static_cast<std::uint32_t>(data.size()));
    s += "WAVEfmt ";
    put32(16);
    put16(fmt);
    put16(ch);
    put32(8000);
    put32(8000u * ch * bits / 8);
    put16(static_cast<std::uint16_t>(ch * bits / 8));
    put16(bits);
    s += "data";
    put32(static_cast<std::uint32_t>(data.size()));
    return s + data;
  };
  float vals[3] = {0.25f, -0.75f, 1.0f};
  const std::string data(reinterpret_cast<const char*>(vals), sizeof(vals));
  const auto path = temp_path("f32.wav");
  {
    std::ofstream(path, std::ios::binary) << make(3, 1, 32, data);
  }
  const auto w = read_wav(path);
  CHECK(w.samples == std::vector<double>{0.25, -0.75, 1.0});
  {
    std::ofstream(path, std::ios::binary) << make(1, 2, 16, std::string(8, '\0'));
  }
  CHECK_THROWS_AS(read_wav(path), Error);
  std::filesystem::remove(path);
}
