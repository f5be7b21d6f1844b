#include "segdiff/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "segdiff/log.hpp"

namespace segdiff::segmentation {

std::vector<double> frame_rms(const Waveform& wave, double frame_ms, double hop_ms) {
  if (wave.samples.empty()) throw Error("cannot detect silences in an empty waveform");
  const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frame_ms * wave.sample_rate / 1000)));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hop_ms * wave.sample_rate / 1000)));
  const std::size_t n = wave.size();
  const std::size_t frames = n <= len ? 1 : (n - len) / hop + 1;
  std::vector<double> out(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t a = f * hop, b = std::min(n, a + len);
    double e = 0;
    for (std::size_t i = a; i < b; ++i) e += wave.samples[i] * wave.samples[i];
    out[f] = std::sqrt(e / static_cast<double>(b - a));
  }
  return out;
}

double relative_energy_threshold(const Waveform& wave, const VadConfig& cfg) {
  auto rms = frame_rms(wave, cfg.frame_ms, cfg.hop_ms);
  auto mid = rms.begin() + static_cast<long>(rms.size() / 2);
  std::nth_element(rms.begin(), mid, rms.end());
  return std::max(cfg.relative_threshold * *mid, 1e-6);
}

std::vector<SilenceSpan> detect_silences(const Waveform& wave, double frame_ms, double energy_threshold,
                                         double min_silence_ms, double hop_ms) {
  if (!(frame_ms > 0) || !(hop_ms > 0)) throw Error("frame and hop lengths must be positive");
  if (min_silence_ms < frame_ms) throw Error("min_silence_ms must be at least frame_ms");
  const auto rms = frame_rms(wave, frame_ms, hop_ms);
  const double dur = wave.duration();
  const double hop = hop_ms / 1000, frame = frame_ms / 1000;
  const std::size_t frames = rms.size();
  // Frame k owns [k*hop + (frame-hop)/2, k*hop + (frame+hop)/2); the first
  // and last frames extend to the recording edges.
  auto own_start = [&](std::size_t k) { return k == 0 ? 0.0 : k * hop + (frame - hop) / 2; };
  auto own_end = [&](std::size_t k) { return k + 1 == frames ? dur : std::min(dur, k * hop + (frame + hop) / 2); };
  std::vector<SilenceSpan> out;
  std::size_t k = 0;
  while (k < frames) {
    if (rms[k] >= energy_threshold) {
      ++k;
      continue;
    }
    std::size_t e = k;
    while (e < frames && rms[e] < energy_threshold) ++e;
    const SilenceSpan span{own_start(k), own_end(e - 1)};
    if (span.end > span.start && span.duration() * 1000 >= min_silence_ms - 1e-9) out.push_back(span);
    k = e;
  }
  return out;
}

std::vector<SilenceSpan> detect_silences(const Waveform& wave, const VadConfig& cfg) {
  return detect_silences(wave, cfg.frame_ms, relative_energy_threshold(wave, cfg), cfg.min_silence_ms, cfg.hop_ms);
}

namespace {

struct Span {
  double start, end;
  std::vector<SilenceSpan> interior;
  double duration() const { return end - start; }
};

// Split point of an over-long span: the longest interior silence leaving both
// sides at least min_s, else the longest short pause (cut at its middle).
struct Cut {
  double left_end, right_start;
};

std::optional<Cut> best_cut(const Span& s, const std::vector<SilenceSpan>& pauses, const SegmentConfig& cfg) {
  const SilenceSpan* best = nullptr;
  for (const auto& sil : s.interior) {
    if (sil.start - s.start < cfg.min_s || s.end - sil.end < cfg.min_s) continue;
    if (!best || sil.duration() > best->duration()) best = &sil;
  }
  if (best) return Cut{best->start, best->end};
  for (const auto& p : pauses) {
    const double mid = 0.5 * (p.start + p.end);
    if (p.start <= s.start || p.end >= s.end || mid - s.start < cfg.min_s || s.end - mid < cfg.min_s) continue;
    if (!best || p.duration() > best->duration()) best = &p;
  }
  if (best) {
    const double mid = 0.5 * (best->start + best->end);
    return Cut{mid, mid};
  }
  return std::nullopt;
}

void split_long(const Span& s, const std::vector<SilenceSpan>& pauses, const SegmentConfig& cfg,
                std::vector<Span>& out) {
  if (s.duration() <= cfg.max_s + 1e-9) {
    out.push_back(s);
    return;
  }
  Cut cut;
  if (auto c = best_cut(s, pauses, cfg)) {
    cut = *c;
  } else {
    // Hard cut at max_s, pulled earlier if the remainder would be too short.
    double at = s.start + cfg.max_s;
    if (s.end - at < cfg.min_s) at = s.end - cfg.min_s;
    cut = {at, at};
  }
  Span left{s.start, cut.left_end, {}}, right{cut.right_start, s.end, {}};
  for (const auto& sil : s.interior) {
    if (sil.end <= cut.left_end) left.interior.push_back(sil);
    else if (sil.start >= cut.right_start) right.interior.push_back(sil);
  }
  split_long(left, pauses, cfg, out);
  split_long(right, pauses, cfg, out);
}

}  // namespace

std::vector<Segment> segment_speech(const Waveform& wave, const std::vector<SilenceSpan>& silences,
                                    const std::string& source_id, const SegmentConfig& cfg) {
  const double dur = wave.duration();
  for (std::size_t i = 0; i < silences.size(); ++i) {
    const auto& s = silences[i];
    if (!(s.start >= 0 && s.start < s.end && s.end <= dur + 1e-9) || (i > 0 && s.start < silences[i - 1].end))
      throw Error("silence spans must be sorted, disjoint, and inside the recording");
  }
  if (dur < cfg.min_s) {
    log::warn("recording " + source_id + " is shorter than " + std::to_string(cfg.min_s) + " s; no segments");
    return {};
  }

  // Speech fragments between silences, each with the silence that follows it.
  std::vector<Span> frags;
  std::vector<SilenceSpan> after;
  double t = 0;
  for (const auto& s : silences) {
    if (s.start > t) {
      frags.push_back({t, s.start, {}});
      after.push_back(s);
    } else if (!after.empty()) {
      after.back() = s;
    }
    t = s.end;
  }
  if (t < dur) {
    frags.push_back({t, dur, {}});
    after.push_back({dur, dur});
  }

  std::vector<Span> merged;
  std::size_t i = 0;
  while (i < frags.size()) {
    Span cur = frags[i];
    while (cur.duration() < cfg.min_s && i + 1 < frags.size()) {
      cur.interior.push_back(after[i]);
      ++i;
      cur.end = frags[i].end;
    }
    ++i;
    if (cur.duration() >= cfg.min_s) {
      merged.push_back(cur);
    } else if (!merged.empty()) {
      // Trailing short fragment joins the previous segment.
      auto& prev = merged.back();
      const double gap_start = prev.end;
      prev.interior.push_back({gap_start, cur.start});
      prev.interior.insert(prev.interior.end(), cur.interior.begin(), cur.interior.end());
      prev.end = cur.end;
    } else {
      log::warn("dropping short speech span [" + std::to_string(cur.start) + ", " + std::to_string(cur.end) +
                "] of " + source_id);
    }
  }

  std::vector<SilenceSpan> pauses;
  if (std::any_of(merged.begin(), merged.end(), [&](const Span& m) { return m.duration() > cfg.max_s + 1e-9; })) {
    const VadConfig vad;
    pauses = detect_silences(wave, vad.frame_ms, relative_energy_threshold(wave, vad), vad.frame_ms, vad.hop_ms);
  }
  std::vector<Span> spans;
  for (const auto& m : merged) split_long(m, pauses, cfg, spans);

  std::vector<Segment> out;
  for (const auto& s : spans) {
    Segment seg;
    seg.source_id = source_id;
    seg.index = static_cast<int>(out.size());
    seg.start = s.start;
    seg.end = s.end;
    seg.audio = wave.slice(s.start, s.end);
    out.push_back(std::move(seg));
  }
  return out;
}

io::Json segment_record(const Segment& seg, const std::string& audio_path) {
  return {{"source_id", seg.source_id}, {"index", seg.index},         {"start_s", seg.start},
          {"end_s", seg.end},           {"duration_s", seg.duration()}, {"audio_path", audio_path}};
}

}  // namespace segdiff::segmentation
