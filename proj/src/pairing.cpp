#include "segdiff/pairing.hpp"

#include <algorithm>
#include <cmath>

namespace segdiff::pairing {

PairingStats compute_stats(const std::vector<double>& lx, const std::vector<double>& ly) {
  if (lx.empty() || ly.empty()) throw Error("pairing statistics need non-empty segment lists");
  PairingStats s;
  for (double v : lx) s.l_x += v;
  for (double v : ly) s.l_y += v;
  s.l_x /= static_cast<double>(lx.size());
  s.l_y /= static_cast<double>(ly.size());
  s.d = std::abs(s.l_x - s.l_y);
  return s;
}

PairingStats compute_stats(const std::vector<Segment>& segs_x, const std::vector<Segment>& segs_y) {
  std::vector<double> lx, ly;
  for (const auto& s : segs_x) lx.push_back(s.duration());
  for (const auto& s : segs_y) ly.push_back(s.duration());
  return compute_stats(lx, ly);
}

namespace {

constexpr double kTol = 1e-9;

}  // namespace

std::vector<int> native_candidates(const Segment& s, const std::vector<Segment>& others, double d) {
  const double p = s.duration(), lo = s.start - d / 2, hi = s.start + p + d / 2;
  std::vector<int> out;
  for (std::size_t k = 0; k < others.size(); ++k) {
    const auto& o = others[k];
    const double q = o.duration();
    if (q < p - d - kTol || q > p + d + kTol) continue;
    if (o.start < lo - kTol || o.end > hi + kTol) continue;
    out.push_back(static_cast<int>(k));
  }
  return out;
}

std::vector<std::pair<double, double>> synthetic_spans(double start, double length, double d, double duration) {
  const double lo = start - d / 2, hi = start + length + d / 2;
  const double step = length - d / 2;
  std::vector<std::pair<double, double>> out;
  for (int k = 0;; ++k) {
    const double a = lo + k * step;
    double s = std::max(0.0, a), e = std::min(duration, a + length);
    if (e > s) out.emplace_back(s, e);
    if (a + length >= hi - kTol || step <= kTol) break;
  }
  return out;
}

CandidatePairSet location_candidates(const std::vector<Segment>& segs_x, const std::vector<Segment>& segs_y,
                                     const PairingStats& stats, const Waveform& y_audio) {
  CandidatePairSet set{segs_x, segs_y, std::vector<std::vector<Candidate>>(segs_x.size())};
  std::vector<std::vector<int>> native(segs_x.size());
  for (std::size_t i = 0; i < segs_x.size(); ++i) native[i] = native_candidates(segs_x[i], segs_y, stats.d);
  // Reverse direction: y segment j contributes to every x segment in its window.
  for (std::size_t j = 0; j < segs_y.size(); ++j)
    for (int i : native_candidates(segs_y[j], segs_x, stats.d)) {
      auto& list = native[static_cast<std::size_t>(i)];
      if (std::find(list.begin(), list.end(), static_cast<int>(j)) == list.end()) list.push_back(static_cast<int>(j));
    }
  for (std::size_t i = 0; i < segs_x.size(); ++i) {
    auto& list = native[i];
    std::sort(list.begin(), list.end());
    for (int j : list) set.lists[i].push_back({segs_y[static_cast<std::size_t>(j)], false});
    if (!list.empty()) continue;
    const auto& sx = segs_x[i];
    for (auto [a, b] : synthetic_spans(sx.start, sx.duration(), stats.d, y_audio.duration())) {
      Segment s;
      s.source_id = segs_y.empty() ? std::string() : segs_y.front().source_id;
      s.index = -1;
      s.start = a;
      s.end = b;
      s.audio = y_audio.slice(a, b);
      s.synthetic = true;
      set.lists[i].push_back({std::move(s), true});
    }
  }
  return set;
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw Error("cosine of vectors with different dimensions");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0 || vv == 0) throw Error("cosine of a zero vector");
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

evaluation::EvalPair SegmentPair::eval_pair() const {
  return {{seg_x.source_id, seg_x.start, seg_x.end, seg_x.index},
          {seg_y.source_id, seg_y.start, seg_y.end, y_synthetic ? -1 : seg_y.index}};
}

io::Json SegmentPair::to_json() const {
  io::Json y;
  if (y_synthetic) y = {{"synthetic", true}, {"start_s", seg_y.start}, {"end_s", seg_y.end}};
  else y = seg_y.index;
  return {{"x_source", seg_x.source_id},
          {"x_index", seg_x.index},
          {"x_start_s", seg_x.start},
          {"x_end_s", seg_x.end},
          {"y_source", seg_y.source_id},
          {"y_index_or_synthetic_span", y},
          {"y_start_s", seg_y.start},
          {"y_end_s", seg_y.end},
          {"cosine", cosine},
          {"provenance", provenance_name(provenance)}};
}

SegmentPair pair_from_json(const io::Json& j) {
  SegmentPair p;
  p.seg_x.source_id = j.at("x_source").get<std::string>();
  p.seg_x.index = j.at("x_index").get<int>();
  p.seg_x.start = j.at("x_start_s").get<double>();
  p.seg_x.end = j.at("x_end_s").get<double>();
  p.seg_y.source_id = j.at("y_source").get<std::string>();
  const auto& y = j.at("y_index_or_synthetic_span");
  p.y_synthetic = y.is_object();
  p.seg_y.index = p.y_synthetic ? -1 : y.get<int>();
  p.seg_y.synthetic = p.y_synthetic;
  p.seg_y.start = j.at("y_start_s").get<double>();
  p.seg_y.end = j.at("y_end_s").get<double>();
  p.cosine = j.at("cosine").get<double>();
  p.provenance = j.at("provenance").get<std::string>() == "intersection" ? Provenance::intersection : Provenance::fallback;
  return p;
}

namespace {

// A dead embedding (all zeros) has no direction; it ranks below every real match.
double similarity(const std::vector<double>& u, const std::vector<double>& v) {
  auto zero = [](const std::vector<double>& w) { return std::all_of(w.begin(), w.end(), [](double x) { return x == 0; }); };
  if (u.size() == v.size() && (zero(u) || zero(v))) return -1.0;
  return cosine(u, v);
}

}  // namespace

std::vector<SegmentPair> refine_pairs(const CandidatePairSet& c, const std::vector<std::vector<double>>& emb_x,
                                      const std::vector<std::vector<double>>& emb_y, const Embedder& embed) {
  if (emb_x.size() != c.xs.size() || emb_y.size() != c.ys.size()) throw Error("missing embedding for a segment");
  std::vector<SegmentPair> out;
  for (std::size_t i = 0; i < c.xs.size(); ++i) {
    const auto& list = c.lists[i];
    if (list.empty()) throw Error("x segment without candidates");
    std::size_t g = 0;
    double g_cos = -2;
    for (std::size_t j = 0; j < c.ys.size(); ++j) {
      const double s = similarity(emb_x[i], emb_y[j]);
      if (s > g_cos) g_cos = s, g = j;
    }
    SegmentPair p;
    p.seg_x = c.xs[i];
    bool found = false;
    for (const auto& cand : list)
      if (!cand.synthetic && cand.seg.index == c.ys[g].index) found = true;
    if (found) {
      p.seg_y = c.ys[g];
      p.cosine = g_cos;
      p.provenance = Provenance::intersection;
    } else {
      double best = -2;
      for (const auto& cand : list) {
        double s;
        if (cand.synthetic) {
          if (!embed) throw Error("missing embedding for a synthetic candidate");
          s = similarity(emb_x[i], embed(cand.seg));
        } else {
          s = similarity(emb_x[i], emb_y[static_cast<std::size_t>(cand.seg.index)]);
        }
        if (s > best) {
          best = s;
          p.seg_y = cand.seg;
          p.y_synthetic = cand.synthetic;
        }
      }
      p.cosine = best;
      p.provenance = Provenance::fallback;
    }
    p.seg_x.audio = {};
    p.seg_y.audio = {};
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SegmentPair> refine_pairs(const CandidatePairSet& c, const Embedder& embed) {
  std::vector<std::vector<double>> ex, ey;
  for (const auto& s : c.xs) ex.push_back(embed(s));
  for (const auto& s : c.ys) ey.push_back(embed(s));
  return refine_pairs(c, ex, ey, embed);
}

}  // namespace segdiff::pairing
