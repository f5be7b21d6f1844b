#pragma once

// BLEU, pairing precision/recall against a BLEU threshold, the two automatic
// pairing evaluations (oracle transcription + oracle translation, optionally
// snapped to the nearest reference sentence), translation scoring, the
// segment-length study, and the small statistical tests used to compare runs.

#include <optional>
#include <string>
#include <vector>

#include "segdiff/corpus.hpp"
#include "segdiff/io.hpp"

namespace segdiff::evaluation {

using corpus::TokenSequence;

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr double kCorrectThreshold = 0.234;

/// Sentence BLEU-4 with brevity penalty. Orders above the shorter sequence's
/// length are dropped, zero match counts are smoothed by kBleuEpsilon, and a
/// candidate sharing no token with the reference scores exactly 0.
double bleu(const TokenSequence& candidate, const TokenSequence& reference);

struct PairingMetrics {
  double precision = 0;
  double recall = 0;
  double f_measure = 0;
  double threshold = kCorrectThreshold;
  std::size_t correct = 0;
  std::size_t pairs = 0;
  std::size_t targets = 0;
  double mean_bleu = 0;
  double bleu_variance = 0;

  io::Json to_json(const std::string& method) const;
};

PairingMetrics pairing_metrics(const std::vector<double>& scores, std::size_t total_pairs,
                               std::size_t total_target_segments, double threshold = kCorrectThreshold);

/// A span of a recording; index < 0 marks a span that is not a native segment.
struct SpanRef {
  std::string source_id;
  double start = 0;
  double end = 0;
  int index = -1;
  double duration() const { return end - start; }
};

/// x is the target-language side, y the source-language side.
struct EvalPair {
  SpanRef x;
  SpanRef y;
};

struct OracleConfig {
  double noise_rate = 0.0;
  std::uint64_t seed = 1;
};

struct PairScore {
  double bleu = 0;
  TokenSequence hypothesis;  // translated source-side transcript (or its matched sentence)
  TokenSequence reference;   // target-side transcript (or its matched sentence)
};

/// Index of the reference sentence with the highest BLEU against tokens
/// (lowest index on ties), or nullopt for an empty transcript.
std::optional<std::size_t> nearest_sentence(const TokenSequence& tokens, const std::vector<TokenSequence>& refs);

/// Per-pair scores under the oracle transcriber/translator.
std::vector<PairScore> score_method1(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                     const OracleConfig& oracle);
/// As method 1, but each side is replaced by its nearest sentence in the
/// broadcast's language-x reference text before scoring.
std::vector<PairScore> score_method2(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                     const OracleConfig& oracle);

PairingMetrics eval_method1(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                            const OracleConfig& oracle, std::size_t total_target_segments);
PairingMetrics eval_method2(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                            const OracleConfig& oracle, std::size_t total_target_segments);

// ---- translation accuracy ----

struct TranslationScore {
  double bleu = 0;
  TokenSequence hypothesis;
  TokenSequence reference;
};

struct TranslationReport {
  double mean_bleu = 0;
  std::vector<TranslationScore> per_pair;
};

/// Reference for a source span: the language-x sentence matched by searching
/// the oracle translation of the source transcript in the broadcast's text.
TokenSequence translation_reference(const SpanRef& source, const corpus::Corpus& corpus);

/// Score already-transcribed translations against their references.
TranslationReport eval_translation(const std::vector<TokenSequence>& hypotheses,
                                   const std::vector<TokenSequence>& references);

// ---- segment-length study ----

enum class LengthCategory { short_, average, long_ };
const char* category_name(LengthCategory c);

/// average: both within +-band of l_x; otherwise long if both exceed l_x,
/// short if both fall below it; mixed pairs are uncategorised.
std::optional<LengthCategory> length_category(const EvalPair& p, double l_x, double band = 0.10);

struct LengthStudyResult {
  LengthCategory category;
  PairingMetrics metrics;
};

/// Method-2 metrics per category on up to sample_size pairs each.
std::vector<LengthStudyResult> length_study(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                            const OracleConfig& oracle, double l_x, std::size_t sample_size = 1000,
                                            std::uint64_t seed = 1, double band = 0.10);

// ---- statistics ----

/// One-sided sign test: P(W >= wins) for W ~ Binomial(wins + losses, 1/2).
double sign_test_p(std::size_t wins, std::size_t losses);
/// One-sided paired t-test that mean(a - b) < 0.
double paired_t_test_less_p(const std::vector<double>& a, const std::vector<double>& b);
/// Coefficient of determination of the least-squares line through (x, y),
/// and its slope.
struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace segdiff::evaluation
