#pragma once

// Cross-language segment pairing for one broadcast pair: location-based
// candidate generation followed by embedding-based refinement.

#include <functional>
#include <string>
#include <vector>

#include "segdiff/evaluation.hpp"
#include "segdiff/segmentation.hpp"

namespace segdiff::pairing {

using segmentation::Segment;

struct PairingStats {
  double l_x = 0;
  double l_y = 0;
  double d = 0;
};

PairingStats compute_stats(const std::vector<Segment>& segs_x, const std::vector<Segment>& segs_y);
PairingStats compute_stats(const std::vector<double>& lengths_x, const std::vector<double>& lengths_y);

struct Candidate {
  Segment seg;  // a native y segment, or a span cut from y's audio
  bool synthetic = false;
};

struct CandidatePairSet {
  std::vector<Segment> xs;
  std::vector<Segment> ys;
  /// lists[i] holds the candidates of xs[i].
  std::vector<std::vector<Candidate>> lists;
};

/// Native candidates of a segment (start i, length p): other-language
/// segments with duration in [p - d, p + d] lying inside [i - d/2, i + p + d/2].
std::vector<int> native_candidates(const Segment& s, const std::vector<Segment>& others, double d);

/// Fallback spans of length p starting at i - d/2 + k (p - d/2) until the
/// window [i - d/2, i + p + d/2] is covered; clipped to the recording.
std::vector<std::pair<double, double>> synthetic_spans(double start, double length, double d, double duration);

/// Candidate lists for every x segment. Segments of y whose own window
/// contains an x segment are added to that x segment's list (the reverse
/// direction). An x segment without native candidates also receives the
/// synthetic spans of y's audio.
CandidatePairSet location_candidates(const std::vector<Segment>& segs_x, const std::vector<Segment>& segs_y,
                                     const PairingStats& stats, const Waveform& y_audio);

double cosine(const std::vector<double>& u, const std::vector<double>& v);

enum class Provenance { intersection, fallback };
inline const char* provenance_name(Provenance p) { return p == Provenance::intersection ? "intersection" : "fallback"; }

struct SegmentPair {
  Segment seg_x;
  Segment seg_y;
  double cosine = 0;
  Provenance provenance = Provenance::fallback;
  bool y_synthetic = false;

  evaluation::EvalPair eval_pair() const;
  io::Json to_json() const;
};

using Embedder = std::function<std::vector<double>(const Segment&)>;

/// One pair per x segment: the global cosine argmax over y if it is a
/// candidate, otherwise the best-scoring candidate. Ties go to the lower index.
std::vector<SegmentPair> refine_pairs(const CandidatePairSet& candidates, const Embedder& embed);

/// As above with embeddings for xs and ys precomputed (synthetic spans are
/// still embedded on demand).
std::vector<SegmentPair> refine_pairs(const CandidatePairSet& candidates, const std::vector<std::vector<double>>& emb_x,
                                      const std::vector<std::vector<double>>& emb_y, const Embedder& embed);

SegmentPair pair_from_json(const io::Json& j);

}  // namespace segdiff::pairing
