#include "segdiff/evaluation.hpp"

#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <map>

#include "segdiff/log.hpp"

namespace segdiff::evaluation {

double bleu(const TokenSequence& cand, const TokenSequence& ref) {
  if (ref.empty()) throw Error("BLEU reference must be non-empty");
  if (cand.empty()) return 0.0;
  const std::size_t order = std::min<std::size_t>({4, cand.size(), ref.size()});
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= order; ++n) {
    std::map<std::vector<int>, int> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + static_cast<long>(i), ref.begin() + static_cast<long>(i + n)}];
    std::map<std::vector<int>, int> cand_counts;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[{cand.begin() + static_cast<long>(i), cand.begin() + static_cast<long>(i + n)}];
    double matched = 0;
    for (const auto& [gram, c] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(c, it->second);
    }
    if (n == 1 && matched == 0) return 0.0;
    const double total = static_cast<double>(cand.size() - n + 1);
    log_sum += std::log(matched > 0 ? matched / total : kBleuEpsilon / total);
  }
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(order));
}

io::Json PairingMetrics::to_json(const std::string& method) const {
  return {{"method", method},       {"precision", precision}, {"recall", recall},       {"f_measure", f_measure},
          {"threshold", threshold}, {"n", pairs},             {"correct", correct},     {"targets", targets},
          {"mean_bleu", mean_bleu}, {"bleu_variance", bleu_variance}};
}

PairingMetrics pairing_metrics(const std::vector<double>& scores, std::size_t total_pairs,
                               std::size_t total_target_segments, double threshold) {
  if (total_pairs != scores.size()) throw Error("total_pairs must equal the number of scores");
  PairingMetrics m;
  m.threshold = threshold;
  m.pairs = total_pairs;
  m.targets = total_target_segments;
  for (double s : scores) m.correct += s >= threshold ? 1 : 0;
  if (total_pairs == 0) log::warn("pairing metrics over zero pairs; precision set to 0");
  if (total_target_segments == 0) log::warn("pairing metrics with zero target segments; recall set to 0");
  m.precision = total_pairs ? static_cast<double>(m.correct) / static_cast<double>(total_pairs) : 0.0;
  m.recall = total_target_segments ? static_cast<double>(m.correct) / static_cast<double>(total_target_segments) : 0.0;
  m.f_measure = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  if (!scores.empty()) {
    double s = 0, s2 = 0;
    for (double v : scores) s += v;
    m.mean_bleu = s / static_cast<double>(scores.size());
    for (double v : scores) s2 += (v - m.mean_bleu) * (v - m.mean_bleu);
    m.bleu_variance = s2 / static_cast<double>(scores.size());
  }
  return m;
}

std::optional<std::size_t> nearest_sentence(const TokenSequence& tokens, const std::vector<TokenSequence>& refs) {
  if (refs.empty()) throw Error("empty reference sentence set");
  if (tokens.empty()) return std::nullopt;
  std::size_t best = 0;
  double best_score = -1;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) continue;
    const double s = bleu(tokens, refs[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

namespace {

Rng pair_rng(std::uint64_t seed, std::size_t index, int side) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(side)};
  return Rng(seq);
}

struct Transcripts {
  TokenSequence mt;   // source side, translated into language x
  TokenSequence asr;  // target side
};

Transcripts transcribe_pair(const EvalPair& p, std::size_t i, const corpus::Corpus& corpus, const OracleConfig& oracle) {
  auto ry = pair_rng(oracle.seed, i, 0), rx = pair_rng(oracle.seed, i, 1);
  const auto ty = corpus::oracle_transcribe(corpus, p.y.source_id, p.y.start, p.y.end, oracle.noise_rate, ry);
  const auto tx = corpus::oracle_transcribe(corpus, p.x.source_id, p.x.start, p.x.end, oracle.noise_rate, rx);
  return {corpus::oracle_translate(ty, corpus::Lang::y, corpus.lexicon), tx};
}

std::vector<TokenSequence> bulletin_text(const corpus::Corpus& corpus, const std::string& source_id) {
  const auto [b, lang] = corpus.recording(source_id);
  std::vector<TokenSequence> out;
  for (const auto& s : b->sentences) out.push_back(s.tokens_x);
  return out;
}

}  // namespace

std::vector<PairScore> score_method1(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                     const OracleConfig& oracle) {
  std::vector<PairScore> out(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto t = transcribe_pair(pairs[i], i, corpus, oracle);
    out[i].bleu = t.asr.empty() ? 0.0 : bleu(t.mt, t.asr);
    out[i].hypothesis = std::move(t.mt);
    out[i].reference = std::move(t.asr);
  }
  return out;
}

std::vector<PairScore> score_method2(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                     const OracleConfig& oracle) {
  std::vector<PairScore> out(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto t = transcribe_pair(pairs[i], i, corpus, oracle);
    const auto refs = bulletin_text(corpus, pairs[i].x.source_id);
    const auto m_mt = nearest_sentence(t.mt, refs);
    const auto m_asr = nearest_sentence(t.asr, refs);
    if (!m_mt || !m_asr) continue;
    out[i].hypothesis = refs[*m_mt];
    out[i].reference = refs[*m_asr];
    out[i].bleu = bleu(out[i].hypothesis, out[i].reference);
  }
  return out;
}

namespace {

PairingMetrics metrics_of(const std::vector<PairScore>& scores, std::size_t targets) {
  std::vector<double> s;
  for (const auto& p : scores) s.push_back(p.bleu);
  return pairing_metrics(s, s.size(), targets);
}

}  // namespace

PairingMetrics eval_method1(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                            const OracleConfig& oracle, std::size_t total_target_segments) {
  return metrics_of(score_method1(pairs, corpus, oracle), total_target_segments);
}

PairingMetrics eval_method2(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                            const OracleConfig& oracle, std::size_t total_target_segments) {
  return metrics_of(score_method2(pairs, corpus, oracle), total_target_segments);
}

TokenSequence translation_reference(const SpanRef& source, const corpus::Corpus& corpus) {
  Rng unused(0);
  const auto ty = corpus::oracle_transcribe(corpus, source.source_id, source.start, source.end, 0.0, unused);
  const auto mt = corpus::oracle_translate(ty, corpus::Lang::y, corpus.lexicon);
  const auto refs = bulletin_text(corpus, source.source_id);
  const auto m = nearest_sentence(mt, refs);
  if (!m) throw Error("source span " + source.source_id + " contains no words");
  return refs[*m];
}

TranslationReport eval_translation(const std::vector<TokenSequence>& hypotheses,
                                   const std::vector<TokenSequence>& references) {
  if (hypotheses.size() != references.size()) throw Error("hypothesis/reference count mismatch");
  TranslationReport r;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const double b = bleu(hypotheses[i], references[i]);
    r.per_pair.push_back({b, hypotheses[i], references[i]});
    r.mean_bleu += b;
  }
  if (!hypotheses.empty()) r.mean_bleu /= static_cast<double>(hypotheses.size());
  return r;
}

const char* category_name(LengthCategory c) {
  switch (c) {
    case LengthCategory::short_: return "short";
    case LengthCategory::average: return "average";
    case LengthCategory::long_: return "long";
  }
  return "?";
}

std::optional<LengthCategory> length_category(const EvalPair& p, double l_x, double band) {
  const double dx = p.x.duration(), dy = p.y.duration();
  if (std::abs(dx - l_x) <= band * l_x && std::abs(dy - l_x) <= band * l_x) return LengthCategory::average;
  if (dx > l_x && dy > l_x) return LengthCategory::long_;
  if (dx < l_x && dy < l_x) return LengthCategory::short_;
  return std::nullopt;
}

std::vector<LengthStudyResult> length_study(const std::vector<EvalPair>& pairs, const corpus::Corpus& corpus,
                                            const OracleConfig& oracle, double l_x, std::size_t sample_size,
                                            std::uint64_t seed, double band) {
  std::vector<LengthStudyResult> out;
  Rng rng(seed);
  for (auto cat : {LengthCategory::short_, LengthCategory::average, LengthCategory::long_}) {
    std::vector<EvalPair> members;
    for (const auto& p : pairs)
      if (length_category(p, l_x, band) == cat) members.push_back(p);
    if (members.empty()) {
      log::warn(std::string("length study: no ") + category_name(cat) + " pairs; skipped");
      continue;
    }
    if (members.size() > sample_size) {
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(sample_size);
    }
    out.push_back({cat, eval_method2(members, corpus, oracle, members.size())});
  }
  return out;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  if (wins == 0) return 1.0;
  boost::math::binomial_distribution<double> b(static_cast<double>(n), 0.5);
  return boost::math::cdf(boost::math::complement(b, static_cast<double>(wins) - 1.0));
}

double paired_t_test_less_p(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("paired t-test needs two equal samples of size >= 2");
  const double n = static_cast<double>(a.size());
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double var = 0;
  for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  var /= n - 1;
  if (var == 0) return mean < 0 ? 0.0 : 1.0;
  const double t = mean / std::sqrt(var / n);
  boost::math::students_t dist(n - 1);
  return boost::math::cdf(dist, t);
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("linear fit needs two equal samples of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = (sxx > 0 && syy > 0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

}  // namespace segdiff::evaluation
