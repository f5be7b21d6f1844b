#pragma once

// Whole-corpus glue between the stages: configuration, segmentation of every
// recording, corpus-wide pairing, training-data assembly, translation
// scoring and the model checkpoints.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "segdiff/checkpoint.hpp"
#include "segdiff/corpus.hpp"
#include "segdiff/encoder.hpp"
#include "segdiff/evaluation.hpp"
#include "segdiff/guidance.hpp"
#include "segdiff/pairing.hpp"
#include "segdiff/segmentation.hpp"
#include "segdiff/unified_model.hpp"

namespace segdiff::pipeline {

struct EvaluationConfig {
  double oracle_noise = 0.0;
  std::uint64_t oracle_seed = 1;
  std::size_t length_study_sample = 1000;
  double length_band = 0.10;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvaluationConfig, oracle_noise, oracle_seed, length_study_sample,
                                                length_band)

struct PipelineConfig {
  corpus::SynthConfig synth;
  segmentation::VadConfig vad;
  segmentation::SegmentConfig segment;
  encoder::EncoderConfig encoder;
  encoder::EncoderTrainConfig encoder_train;
  unified::DenoiserConfig denoiser;
  unified::DiffusionTrainConfig diffusion_train;
  guidance::GuidanceConfig guidance;
  EvaluationConfig evaluation;

  /// Cross-stage consistency (rates, latent geometry).
  void validate() const;
  io::Json to_json() const;
};

/// Strict parse: unknown keys anywhere are an error, missing keys keep the
/// values of base (the desk preset by default).
PipelineConfig parse_config(const io::Json& j);
PipelineConfig parse_config(const io::Json& j, const PipelineConfig& base);
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base);

/// "desk": the default single-workstation scale. "ci": a few minutes end to
/// end. "paper": the published model sizes on the desk latent geometry.
PipelineConfig preset(const std::string& name);
/// Point every seed in the configuration at one master seed.
void apply_seed(PipelineConfig& cfg, std::uint64_t seed);

// ---- segmentation ----

struct RecordingSegments {
  std::string source_id;
  std::vector<segmentation::Segment> segments;
};

std::vector<segmentation::Segment> segment_recording(const Waveform& wave, const std::string& source_id,
                                                     const PipelineConfig& cfg);

/// Per bulletin, the segments of x and of y.
struct BulletinSegments {
  std::string bulletin;
  std::string x_source, y_source;
  std::vector<segmentation::Segment> x, y;
};
std::vector<BulletinSegments> segment_corpus(const corpus::Corpus& corpus, const PipelineConfig& cfg);

pairing::PairingStats corpus_stats(const std::vector<BulletinSegments>& segs);
std::size_t target_segment_count(const std::vector<BulletinSegments>& segs);

/// Whole-recording audio by source id.
using AudioLookup = std::function<const Waveform&(const std::string& source_id)>;
AudioLookup corpus_audio(const corpus::Corpus& corpus);

/// Location candidates per bulletin with corpus-wide statistics, refined by
/// the encoder.
std::vector<pairing::SegmentPair> pair_corpus(const AudioLookup& audio, const std::vector<BulletinSegments>& segs,
                                              const encoder::SegmentEncoder& enc);
std::vector<pairing::SegmentPair> pair_corpus(const corpus::Corpus& corpus, const std::vector<BulletinSegments>& segs,
                                              const encoder::SegmentEncoder& enc);

std::vector<evaluation::EvalPair> eval_pairs(const std::vector<pairing::SegmentPair>& pairs);

// ---- training ----

/// Train the encoder on all segments (or on location pairs when the
/// configuration asks for location positives).
std::vector<encoder::EncoderLogEntry> train_corpus_encoder(
    encoder::SegmentEncoder& enc, const AudioLookup& audio, const std::vector<BulletinSegments>& segs,
    const PipelineConfig& cfg, const std::function<void(const encoder::EncoderLogEntry&)>& on_step = {});

/// Audio of a span of a recording.
Waveform span_audio(const AudioLookup& audio, const std::string& source_id, double start, double end);
Waveform span_audio(const corpus::Corpus& corpus, const std::string& source_id, double start, double end);

/// Latents and pooled mels of both sides of each pair.
std::vector<unified::PairExample> diffusion_examples(const AudioLookup& audio,
                                                     const std::vector<pairing::SegmentPair>& pairs,
                                                     const encoder::SegmentEncoder& enc,
                                                     const unified::DenoiserConfig& dcfg);

/// Denoiser geometry matching the encoder's latent.
unified::DenoiserConfig denoiser_for(const encoder::EncoderConfig& enc, unified::DenoiserConfig d);

// ---- translation scoring ----

struct TranslationOutcome {
  evaluation::SpanRef source;
  corpus::TokenSequence hypothesis;
  corpus::TokenSequence reference;
  double bleu = 0;
  double pseudo_score = 0;
};

/// Transcribe generated target audio and score it against the reference
/// sentence of its source span.
TranslationOutcome score_translation(const corpus::Corpus& corpus, const evaluation::SpanRef& source,
                                     const Waveform& generated);

/// Translate the y side of each pair and score it.
std::vector<TranslationOutcome> translate_and_score(const corpus::Corpus& corpus,
                                                    const std::vector<pairing::SegmentPair>& pairs,
                                                    const unified::UnifiedDenoiser& model,
                                                    const encoder::SegmentEncoder& enc,
                                                    const guidance::GuidanceConfig& gcfg, std::uint64_t seed);

// ---- checkpoints ----

inline constexpr const char* kEncoderKind = "segment_encoder";
inline constexpr const char* kDenoiserKind = "unified_denoiser";

void save_encoder(const std::filesystem::path& path, const encoder::SegmentEncoder& enc);
/// Refuses a checkpoint whose hyperparameters differ from expected.
void load_encoder(const std::filesystem::path& path, encoder::SegmentEncoder& enc);
void save_denoiser(const std::filesystem::path& path, const unified::UnifiedDenoiser& model);
/// The latent scale is taken from the checkpoint when expected leaves it at
/// 0; every other hyperparameter must match.
std::unique_ptr<unified::UnifiedDenoiser> load_denoiser(const std::filesystem::path& path,
                                                        unified::DenoiserConfig expected);

}  // namespace segdiff::pipeline
