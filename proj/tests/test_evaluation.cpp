#include <cmath>
#include <map>

#include "doctest.h"
#include "segdiff/corpus.hpp"
#include "segdiff/evaluation.hpp"
#include "testing.hpp"

using namespace segdiff;
using namespace segdiff::evaluation;
using corpus::Lang;

namespace {

// Straightforward BLEU-4: clipped n-gram precisions with the same order
// truncation and smoothing, counted by brute force over all n-gram pairs.
double bleu_oracle(const TokenSequence& c, const TokenSequence& r) {
  if (c.empty()) return 0.0;
  const std::size_t order = std::min({std::size_t{4}, c.size(), r.size()});
  long double logp = 0;
  for (std::size_t n = 1; n <= order; ++n) {
    std::vector<bool> used(r.size(), false);
    std::size_t matched = 0;
    for (std::size_t i = 0; i + n <= c.size(); ++i)
      for (std::size_t j = 0; j + n <= r.size(); ++j) {
        if (used[j]) continue;
        if (std::equal(c.begin() + static_cast<long>(i), c.begin() + static_cast<long>(i + n), r.begin() + static_cast<long>(j))) {
          used[j] = true;
          ++matched;
          break;
        }
      }
    if (n == 1 && matched == 0) return 0.0;
    const long double total = static_cast<long double>(c.size() - n + 1);
    logp += std::log(matched ? matched / total : 1e-9L / total);
  }
  const long double bp = c.size() >= r.size() ? 1.0L : std::exp(1.0L - static_cast<long double>(r.size()) / c.size());
  return static_cast<double>(bp * std::exp(logp / order));
}

corpus::SynthConfig small(double scale, double jitter, std::uint64_t seed = 7) {
  corpus::SynthConfig c;
  c.seed = seed;
  c.bulletins = 3;
  c.sentences_per_bulletin = 8;
  c.time_scale = scale;
  c.jitter_sd = jitter;
  return c;
}

std::vector<EvalPair> truth_pairs(const corpus::Corpus& corpus) {
  std::vector<EvalPair> out;
  for (const auto& b : corpus.bulletins)
    for (const auto& s : b.sentences)
      out.push_back({{b.source_id(Lang::x), s.x_start, s.x_end, s.index}, {b.source_id(Lang::y), s.y_start, s.y_end, s.index}});
  return out;
}

}  // namespace

TEST_CASE("BLEU worked cases") {
  CHECK(bleu({0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}) == 1.0);
  CHECK(bleu({5, 6, 7, 8, 9}, {0, 1, 2, 3, 4}) == 0.0);
  CHECK(bleu({0, 1, 2, 3, 4}, {0, 1, 2, 3, 5}) == doctest::Approx(std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25)).epsilon(1e-12));
  CHECK(std::abs(bleu({0, 1, 2, 3, 4}, {0, 1, 2, 3, 5}) - 0.6687) <= 1e-4);
  CHECK(bleu({}, {1}) == 0.0);
  CHECK_THROWS_AS(bleu({1}, {}), Error);
  // Short candidate: orders above 3 are dropped, brevity penalty applies.
  CHECK(bleu({0, 1, 2}, {0, 1, 2, 3, 4}) == doctest::Approx(std::exp(1.0 - 5.0 / 3.0)));
}

TEST_CASE("BLEU agrees with a brute-force oracle and stays in [0, 1]") {
  Rng rng(21);
  std::uniform_int_distribution<int> tok(0, 5), len(1, 14);
  for (int trial = 0; trial < 400; ++trial) {
    TokenSequence c(static_cast<std::size_t>(len(rng))), r(static_cast<std::size_t>(len(rng)));
    for (auto& v : c) v = tok(rng);
    for (auto& v : r) v = tok(rng);
    const double b = bleu(c, r);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    CHECK(b == doctest::Approx(bleu_oracle(c, r)).epsilon(1e-10));
    CHECK(bleu(r, r) == 1.0);
  }
}

TEST_CASE("pairing metrics arithmetic") {
  std::vector<double> scores(100, 0.1);
  for (int i = 0; i < 70; ++i) scores[static_cast<std::size_t>(i)] = 0.5;
  auto m = pairing_metrics(scores, 100, 110);
  CHECK(m.correct == 70);
  CHECK(m.precision == doctest::Approx(0.700));
  CHECK(m.recall == doctest::Approx(70.0 / 110));
  CHECK(m.f_measure == doctest::Approx(2 * 0.7 * (70.0 / 110) / (0.7 + 70.0 / 110)));
  CHECK(std::abs(m.f_measure - 0.667) < 5e-4);

  auto all = pairing_metrics(std::vector<double>(10, 1.0), 10, 10);
  CHECK(all.precision == 1.0);
  CHECK(all.recall == 1.0);
  CHECK(all.f_measure == 1.0);

  CHECK(kCorrectThreshold == 0.234);
  // The cutoff is inclusive.
  CHECK(pairing_metrics({0.234}, 1, 1).correct == 1);
  auto none = pairing_metrics({}, 0, 0);
  CHECK(none.precision == 0.0);
  CHECK(none.f_measure == 0.0);
  CHECK_THROWS_AS(pairing_metrics({0.5}, 2, 2), Error);
}

TEST_CASE("perfect oracle on ground-truth pairs scores 1 under both methods") {
  auto corpus = corpus::generate_corpus(small(1.04, 0.2));
  auto pairs = truth_pairs(corpus);
  for (auto m : {eval_method1(pairs, corpus, {0.0, 1}, pairs.size()), eval_method2(pairs, corpus, {0.0, 1}, pairs.size())}) {
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f_measure == 1.0);
  }
  // With exact references and a perfect oracle the two methods coincide.
  auto s1 = score_method1(pairs, corpus, {0.0, 1});
  auto s2 = score_method2(pairs, corpus, {0.0, 1});
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(s1[i].bleu == s2[i].bleu);
}

TEST_CASE("planted mispairs lower precision in proportion") {
  auto cfg = small(1.0, 0.0);
  cfg.bulletins = 10;
  auto corpus = corpus::generate_corpus(cfg);
  auto pairs = truth_pairs(corpus);
  Rng rng(4);
  std::bernoulli_distribution flip(0.1);
  std::size_t planted = 0;
  for (std::size_t i = 0; i + 1 < pairs.size(); ++i) {
    if (!flip(rng) || pairs[i].y.source_id != pairs[i + 1].y.source_id) continue;
    pairs[i].y = pairs[i + 1].y;
    ++planted;
  }
  auto m = eval_method1(pairs, corpus, {0.0, 1}, pairs.size());
  const double expected = 1.0 - static_cast<double>(planted) / static_cast<double>(pairs.size());
  const double se = std::sqrt(0.1 * 0.9 / static_cast<double>(pairs.size()));
  CHECK(std::abs(m.precision - expected) <= 1e-12 + 0.02);
  CHECK(std::abs(m.precision - 0.9) <= 3 * se);
}

TEST_CASE("noisy oracle lowers Method 1 and Method 2 recovers") {
  auto corpus = corpus::generate_corpus(small(1.04, 0.5));
  auto pairs = truth_pairs(corpus);
  auto clean = eval_method1(pairs, corpus, {0.0, 1}, pairs.size());
  auto noisy1 = eval_method1(pairs, corpus, {0.15, 1}, pairs.size());
  auto noisy2 = eval_method2(pairs, corpus, {0.15, 1}, pairs.size());
  CHECK(noisy1.mean_bleu < clean.mean_bleu);
  CHECK(noisy2.f_measure >= noisy1.f_measure);
}

TEST_CASE("nearest-sentence search finds the source under mild noise") {
  auto cfg = small(1.0, 0.0);
  cfg.bulletins = 6;
  auto corpus = corpus::generate_corpus(cfg);
  Rng rng(12);
  std::size_t hits = 0, total = 0;
  for (const auto& b : corpus.bulletins) {
    std::vector<TokenSequence> refs;
    for (const auto& s : b.sentences) refs.push_back(s.tokens_x);
    for (const auto& s : b.sentences) {
      auto t = corpus::oracle_transcribe(corpus, b.source_id(Lang::x), s.x_start, s.x_end, 0.1, rng);
      hits += nearest_sentence(t, refs) == static_cast<std::size_t>(s.index);
      ++total;
    }
  }
  CHECK(static_cast<double>(hits) >= 0.95 * static_cast<double>(total));
  CHECK_FALSE(nearest_sentence({}, {{1}}).has_value());
  CHECK_THROWS_AS(nearest_sentence({1}, {}), Error);
  // Ties go to the lower index.
  CHECK(nearest_sentence({1, 2}, {{3}, {1, 2}, {1, 2}}) == 1u);
}

TEST_CASE("translation scoring controls") {
  auto corpus = corpus::generate_corpus(small(1.04, 0.2));
  std::vector<TokenSequence> hyp, ref, junk;
  for (const auto& b : corpus.bulletins)
    for (const auto& s : b.sentences) {
      auto r = translation_reference({b.source_id(Lang::y), s.y_start, s.y_end, s.index}, corpus);
      CHECK(r == s.tokens_x);
      hyp.push_back(s.tokens_x);
      ref.push_back(r);
      junk.push_back({});
    }
  CHECK(eval_translation(hyp, ref).mean_bleu == 1.0);
  CHECK(eval_translation(junk, ref).mean_bleu == 0.0);
  CHECK_THROWS_AS(eval_translation(hyp, {}), Error);
}

TEST_CASE("length categories") {
  auto pair = [](double dx, double dy) { return EvalPair{{"a_x", 0, dx, 0}, {"a_y", 0, dy, 0}}; };
  CHECK(length_category(pair(10, 10.5), 10) == LengthCategory::average);
  CHECK(length_category(pair(9.2, 10.9), 10) == LengthCategory::average);
  CHECK(length_category(pair(12, 13), 10) == LengthCategory::long_);
  CHECK(length_category(pair(10.5, 13), 10) == LengthCategory::long_);
  CHECK(length_category(pair(5, 8), 10) == LengthCategory::short_);
  CHECK_FALSE(length_category(pair(5, 13), 10).has_value());
  CHECK(std::string(category_name(LengthCategory::average)) == "average");
}

TEST_CASE("length study on a zero-jitter corpus scores every category equally") {
  auto corpus = corpus::generate_corpus(small(1.0, 0.0));
  auto pairs = truth_pairs(corpus);
  double l_x = 0;
  for (const auto& p : pairs) l_x += p.x.duration();
  l_x /= static_cast<double>(pairs.size());
  auto res = length_study(pairs, corpus, {0.0, 1}, l_x, 1000, 3);
  REQUIRE_FALSE(res.empty());
  for (const auto& r : res) CHECK(r.metrics.precision == 1.0);
}

TEST_CASE("sign test against the binomial tail") {
  CHECK(sign_test_p(0, 0) == 1.0);
  CHECK(sign_test_p(10, 0) == doctest::Approx(std::pow(0.5, 10)));
  // P(W >= 8 | n = 10) = (45 + 10 + 1) / 1024.
  CHECK(sign_test_p(8, 2) == doctest::Approx(56.0 / 1024));
  CHECK(sign_test_p(5, 5) == doctest::Approx(638.0 / 1024));
}

TEST_CASE("paired t-test and linear fit") {
  // Differences {-1, -2, -3}: mean -2, sd 1, t = -2 sqrt(3), 2 degrees of freedom.
  const double t = -2 * std::sqrt(3.0);
  const double expected = 0.5 * (1 + t / std::sqrt(2 + t * t));  // closed form of the t(2) CDF
  CHECK(paired_t_test_less_p({0, 0, 0}, {1, 2, 3}) == doctest::Approx(expected).epsilon(1e-10));
  CHECK(paired_t_test_less_p({1, 2, 3}, {0, 0, 0}) == doctest::Approx(1 - expected).epsilon(1e-10));
  CHECK_THROWS_AS(paired_t_test_less_p({1}, {2}), Error);

  auto f = linear_fit({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  auto g = linear_fit({0, 1, 2}, {0, 1, 0});
  CHECK(g.slope == doctest::Approx(0.0));
  CHECK(g.r2 == doctest::Approx(0.0));
}

TEST_CASE("metrics report JSON") {
  auto j = pairing_metrics({0.3, 0.1}, 2, 4).to_json("2");
  CHECK(j.at("method") == "2");
  CHECK(j.at("precision").get<double>() == 0.5);
  CHECK(j.at("recall").get<double>() == 0.25);
  CHECK(j.at("threshold").get<double>() == 0.234);
  CHECK(j.at("n").get<std::size_t>() == 2);
}
