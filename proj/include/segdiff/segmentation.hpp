#pragma once

// Energy-based silence detection and 3-20 s over-segmentation.

#include <string>
#include <vector>

#include "segdiff/io.hpp"
#include "segdiff/signal.hpp"

namespace segdiff::segmentation {

struct SilenceSpan {
  double start;
  double end;
  double duration() const { return end - start; }
};

struct Segment {
  std::string source_id;
  int index = 0;
  double start = 0;
  double end = 0;
  Waveform audio;
  /// True for spans cut from a recording by the pairing fallback rather
  /// than produced by segmentation.
  bool synthetic = false;

  double duration() const { return end - start; }
};

struct VadConfig {
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  /// Threshold as a fraction of the median frame RMS.
  double relative_threshold = 0.1;
  double min_silence_ms = 300.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VadConfig, frame_ms, hop_ms, relative_threshold, min_silence_ms)

struct SegmentConfig {
  double min_s = 3.0;
  double max_s = 20.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SegmentConfig, min_s, max_s)

/// Frame RMS values (frame_ms windows every hop_ms).
std::vector<double> frame_rms(const Waveform& wave, double frame_ms, double hop_ms);
/// relative_threshold * median frame RMS, floored at 1e-6.
double relative_energy_threshold(const Waveform& wave, const VadConfig& cfg);

/// Maximal runs of frames with RMS below energy_threshold lasting at least
/// min_silence_ms. Frame k owns the hop-wide slice centred in its window.
std::vector<SilenceSpan> detect_silences(const Waveform& wave, double frame_ms, double energy_threshold,
                                         double min_silence_ms, double hop_ms = 10.0);
std::vector<SilenceSpan> detect_silences(const Waveform& wave, const VadConfig& cfg);

/// Speech between silences, merged forward to at least min_s. Spans over
/// max_s are split at their longest absorbed silence, else at the middle of
/// their longest short pause (any quiet run of VAD frames), else hard-cut.
std::vector<Segment> segment_speech(const Waveform& wave, const std::vector<SilenceSpan>& silences,
                                    const std::string& source_id = "", const SegmentConfig& cfg = {});

io::Json segment_record(const Segment& seg, const std::string& audio_path);

}  // namespace segdiff::segmentation
