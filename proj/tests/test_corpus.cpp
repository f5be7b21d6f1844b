#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "segdiff/corpus.hpp"
#include "segdiff/evaluation.hpp"
#include "segdiff/pairing.hpp"
#include "segdiff/segmentation.hpp"
#include "testing.hpp"

using namespace segdiff;
using namespace segdiff::corpus;

namespace {

SynthConfig small(double scale = 1.0, double jitter = 0.0, std::uint64_t seed = 7) {
  SynthConfig c;
  c.seed = seed;
  c.bulletins = 2;
  c.sentences_per_bulletin = 6;
  c.time_scale = scale;
  c.jitter_sd = jitter;
  return c;
}

std::vector<segmentation::Segment> segment(const Waveform& w, const std::string& id) {
  return segmentation::segment_speech(w, segmentation::detect_silences(w, segmentation::VadConfig{}), id);
}

}  // namespace

TEST_CASE("config validation and strict parsing") {
  SynthConfig c;
  c.validate();
  c.time_scale = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SynthConfig{};
  c.words_min = 40;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SynthConfig{};
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), Error);

  auto j = SynthConfig{}.to_json();
  j["time_scale"] = 1.04;
  CHECK(SynthConfig::from_json(j).time_scale == 1.04);
  j["bogus"] = 1;
  CHECK_THROWS_AS(SynthConfig::from_json(j), Error);
}

TEST_CASE("the codebook is a bijection") {
  auto lex = make_lexicon(SynthConfig{});
  std::set<int> image(lex.codebook.begin(), lex.codebook.end());
  CHECK(image.size() == lex.codebook.size());
  for (std::size_t a = 0; a < lex.codebook.size(); ++a) CHECK(lex.inverse[static_cast<std::size_t>(lex.codebook[a])] == static_cast<int>(a));
  std::set<std::pair<double, double>> dyads(lex.dyads.begin(), lex.dyads.end());
  CHECK(dyads.size() == lex.dyads.size());
}

TEST_CASE("generation is deterministic under the seed") {
  auto a = generate_corpus(small(1.04, 0.2));
  auto b = generate_corpus(small(1.04, 0.2));
  REQUIRE(a.bulletins.size() == b.bulletins.size());
  for (std::size_t i = 0; i < a.bulletins.size(); ++i) {
    CHECK(a.bulletins[i].x.samples == b.bulletins[i].x.samples);
    CHECK(a.bulletins[i].y.samples == b.bulletins[i].y.samples);
  }
  CHECK(truth_json(a) == truth_json(b));
  auto c = generate_corpus(small(1.04, 0.2, 8));
  CHECK(c.bulletins[0].x.samples != a.bulletins[0].x.samples);
}

TEST_CASE("sentences translate onto each other through the codebook") {
  auto corpus = generate_corpus(small());
  for (const auto& b : corpus.bulletins)
    for (const auto& s : b.sentences) {
      CHECK(oracle_translate(s.tokens_x, Lang::x, corpus.lexicon) == s.tokens_y);
      CHECK(evaluation::bleu(oracle_translate(s.tokens_x, Lang::x, corpus.lexicon), s.tokens_y) == 1.0);
    }
}

TEST_CASE("oracle translation round trip and errors") {
  auto lex = make_lexicon(SynthConfig{});
  Rng rng(3);
  std::uniform_int_distribution<int> tok(0, 31);
  for (int trial = 0; trial < 50; ++trial) {
    TokenSequence t(static_cast<std::size_t>(trial % 17));
    for (auto& v : t) v = tok(rng);
    CHECK(oracle_translate(oracle_translate(t, Lang::x, lex), Lang::y, lex) == t);
    CHECK(oracle_translate(oracle_translate(t, Lang::y, lex), Lang::x, lex) == t);
  }
  CHECK(oracle_translate({}, Lang::x, lex).empty());
  CHECK_THROWS_AS(oracle_translate({32}, Lang::x, lex), Error);
  CHECK_THROWS_AS(oracle_translate({-1}, Lang::y, lex), Error);
}

TEST_CASE("oracle transcription at noise 0, 1 and 0.14") {
  auto corpus = generate_corpus(small());
  const auto& b = corpus.bulletins[0];
  const auto& s = b.sentences[2];
  Rng rng(5);
  CHECK(oracle_transcribe(corpus, b.source_id(Lang::x), s.x_start, s.x_end, 0.0, rng) == s.tokens_x);
  CHECK(oracle_transcribe(corpus, b.source_id(Lang::y), s.y_start, s.y_end, 0.0, rng) == s.tokens_y);
  auto all = oracle_transcribe(corpus, b.source_id(Lang::x), 0, b.x.duration(), 1.0, rng);
  REQUIRE(all.size() == b.words_x.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] != b.words_x[i].token);

  // Token error rate over >= 10^4 tokens against the binomial standard error.
  std::size_t errors = 0, total = 0;
  while (total < 10000)
    for (const auto& bb : corpus.bulletins) {
      auto noisy = oracle_transcribe(corpus, bb.source_id(Lang::x), 0, bb.x.duration(), 0.14, rng);
      for (std::size_t i = 0; i < noisy.size(); ++i) errors += noisy[i] != bb.words_x[i].token;
      total += noisy.size();
    }
  const double rate = static_cast<double>(errors) / static_cast<double>(total);
  const double se = std::sqrt(0.14 * 0.86 / static_cast<double>(total));
  CHECK(std::abs(rate - 0.14) <= 3 * se);

  CHECK_THROWS_AS(oracle_transcribe(corpus, b.source_id(Lang::x), -1, 2, 0, rng), Error);
  CHECK_THROWS_AS(oracle_transcribe(corpus, b.source_id(Lang::x), 0, b.x.duration() + 5, 0, rng), Error);
  CHECK_THROWS_AS(oracle_transcribe(corpus, "nope_x", 0, 1, 0, rng), Error);
}

TEST_CASE("identical timing gives coinciding segment boundaries") {
  auto corpus = generate_corpus(small());
  for (const auto& b : corpus.bulletins) {
    auto sx = segment(b.x, b.source_id(Lang::x));
    auto sy = segment(b.y, b.source_id(Lang::y));
    REQUIRE(sx.size() == sy.size());
    for (std::size_t i = 0; i < sx.size(); ++i) {
      CHECK(sx[i].start == sy[i].start);
      CHECK(sx[i].end == sy[i].end);
    }
    CHECK(pairing::compute_stats(sx, sy).d == 0.0);
  }
}

TEST_CASE("y sentence onsets follow the time scale") {
  auto cfg = small(1.04, 0.2);
  cfg.bulletins = 4;
  auto corpus = generate_corpus(cfg);
  std::vector<double> xs, ys;
  for (const auto& b : corpus.bulletins)
    for (const auto& s : b.sentences) {
      xs.push_back(s.x_start);
      ys.push_back(s.y_start);
    }
  auto fit = evaluation::linear_fit(xs, ys);
  CHECK(std::abs(fit.slope - 1.04) / 1.04 <= 0.01);
}

TEST_CASE("a 4% stretch of 15 s sentences separates the mean lengths by about 0.6 s") {
  auto cfg = small(1.04, 0.0);
  cfg.bulletins = 4;
  auto corpus = generate_corpus(cfg);
  std::vector<segmentation::Segment> ax, ay;
  double sentence_mean = 0;
  std::size_t n = 0;
  for (const auto& b : corpus.bulletins) {
    for (auto& s : segment(b.x, b.source_id(Lang::x))) ax.push_back(std::move(s));
    for (auto& s : segment(b.y, b.source_id(Lang::y))) ay.push_back(std::move(s));
    for (const auto& s : b.sentences) sentence_mean += s.x_end - s.x_start, ++n;
  }
  sentence_mean /= static_cast<double>(n);
  auto st = pairing::compute_stats(ax, ay);
  // Segment lengths inherit the stretch, so d tracks 0.04 times the mean.
  CHECK(st.d == doctest::Approx(0.04 * st.l_x).epsilon(0.25));
  CHECK(st.l_x == doctest::Approx(sentence_mean).epsilon(0.15));
}

TEST_CASE("spectral transcription reads rendered tokens back") {
  SynthConfig cfg;
  auto lex = make_lexicon(cfg);
  Rng rng(9);
  std::uniform_int_distribution<int> tok(0, cfg.vocab_size - 1);
  for (int trial = 0; trial < 10; ++trial) {
    TokenSequence t(12);
    for (auto& v : t) v = tok(rng);
    for (Lang l : {Lang::x, Lang::y}) CHECK(spectral_transcribe(render_tokens(t, l, cfg, lex), l, cfg, lex) == t);
  }
  CHECK(spectral_transcribe(Waveform(std::vector<double>(3000, 0.0), cfg.sample_rate), Lang::x, cfg, lex).empty());
}

TEST_CASE("corpus files round trip") {
  auto corpus = generate_corpus(small(1.04, 0.2));
  const auto dir = std::filesystem::temp_directory_path() / "segdiff_test_corpus";
  std::filesystem::remove_all(dir);
  auto paths = write_corpus(corpus, dir);
  CHECK(paths.size() == 2 * corpus.bulletins.size());
  auto back = load_corpus(dir);
  CHECK(truth_json(back) == truth_json(corpus));
  REQUIRE(back.bulletins.size() == corpus.bulletins.size());
  // PCM16 storage: samples agree to half a quantization step.
  const auto& a = corpus.bulletins[1].y.samples;
  const auto& b = back.bulletins[1].y.samples;
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= 1.0 / 32767 + 1e-12);
  std::filesystem::remove_all(dir);
}
