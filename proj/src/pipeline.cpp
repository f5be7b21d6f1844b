#include "segdiff/pipeline.hpp"

#include <cmath>

namespace segdiff::pipeline {

void PipelineConfig::validate() const {
  synth.validate();
  encoder.validate();
  encoder_train.validate();
  denoiser.validate();
  diffusion_train.validate();
  guidance.validate(denoiser.schedule_steps);
  if (std::abs(encoder.sample_rate - synth.sample_rate) > 1e-9)
    throw Error("encoder sample_rate must equal the corpus sample_rate");
  if (denoiser.filters != encoder.filters || denoiser.frames != encoder.latent_frames())
    throw Error("denoiser latent geometry [" + std::to_string(denoiser.filters) + ", " +
                std::to_string(denoiser.frames) + "] does not match the encoder's [" + std::to_string(encoder.filters) +
                ", " + std::to_string(encoder.latent_frames()) + "]");
  if (segment.max_s > encoder.pad_seconds) throw Error("segments may exceed the encoder's padding length");
  if (!(segment.min_s > 0 && segment.min_s < segment.max_s)) throw Error("segment min_s must lie in (0, max_s)");
  if (evaluation.oracle_noise < 0 || evaluation.oracle_noise > 1) throw Error("oracle_noise must lie in [0, 1]");
}

io::Json PipelineConfig::to_json() const {
  return {{"synth", synth.to_json()},
          {"vad", vad},
          {"segment", segment},
          {"encoder", encoder},
          {"encoder_train", encoder_train},
          {"denoiser", denoiser},
          {"diffusion_train", diffusion_train},
          {"guidance", guidance},
          {"evaluation", evaluation}};
}

namespace {

PipelineConfig from_merged(const io::Json& j) {
  PipelineConfig c;
  c.synth = corpus::SynthConfig::from_json(j.at("synth"));
  c.vad = j.at("vad").get<segmentation::VadConfig>();
  c.segment = j.at("segment").get<segmentation::SegmentConfig>();
  c.encoder = j.at("encoder").get<encoder::EncoderConfig>();
  c.encoder_train = j.at("encoder_train").get<encoder::EncoderTrainConfig>();
  c.denoiser = j.at("denoiser").get<unified::DenoiserConfig>();
  c.diffusion_train = j.at("diffusion_train").get<unified::DiffusionTrainConfig>();
  c.guidance = j.at("guidance").get<guidance::GuidanceConfig>();
  c.evaluation = j.at("evaluation").get<EvaluationConfig>();
  return c;
}

}  // namespace

PipelineConfig parse_config(const io::Json& j) { return parse_config(j, preset("desk")); }

PipelineConfig parse_config(const io::Json& j, const PipelineConfig& base) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  io::Json merged = base.to_json();
  io::reject_unknown_keys(j, merged, "config");
  merged.merge_patch(j);
  PipelineConfig c;
  try {
    c = from_merged(merged);
  } catch (const io::Json::exception& e) {
    throw Error(std::string("config has a value of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_json(path)); }

PipelineConfig load_config(const std::filesystem::path& path, const PipelineConfig& base) {
  return parse_config(io::read_json(path), base);
}

PipelineConfig preset(const std::string& name) {
  PipelineConfig c;
  c.encoder_train.steps = 300;
  c.encoder_train.lr = 3e-3;
  c.encoder_train.lr_floor = 1e-4;
  c.denoiser = denoiser_for(c.encoder, c.denoiser);
  if (name == "desk") return c;
  if (name == "ci") {
    c.synth.bulletins = 2;
    c.synth.sentences_per_bulletin = 6;
    c.encoder.channels = {8, 16};
    c.encoder.embedding_dim = 32;
    c.encoder.projection_dim = 16;
    c.encoder_train.steps = 10;
    c.encoder_train.batch_size = 8;
    c.denoiser.width = 32;
    c.denoiser.layers = 1;
    c.denoiser.heads = 2;
    c.denoiser.ffn = 64;
    c.denoiser.cond_hidden = 32;
    c.denoiser.mel_bins = 16;
    c.diffusion_train.steps = 10;
    c.diffusion_train.batch_size = 2;
    c.guidance.ddim_steps = 4;
    return c;
  }
  if (name == "paper") {
    c.encoder.embedding_dim = 720;
    c.encoder.projection_dim = 512;
    c.denoiser = unified::paper_config(c.encoder.filters, c.encoder.latent_frames());
    return c;
  }
  throw Error("unknown preset \"" + name + "\" (expected desk, ci or paper)");
}

void apply_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.synth.seed = seed;
  cfg.encoder.seed = seed;
  cfg.encoder_train.seed = seed;
  cfg.denoiser.seed = seed;
  cfg.diffusion_train.seed = seed;
  cfg.evaluation.oracle_seed = seed;
}

std::vector<segmentation::Segment> segment_recording(const Waveform& wave, const std::string& source_id,
                                                     const PipelineConfig& cfg) {
  return segmentation::segment_speech(wave, segmentation::detect_silences(wave, cfg.vad), source_id, cfg.segment);
}

std::vector<BulletinSegments> segment_corpus(const corpus::Corpus& corpus, const PipelineConfig& cfg) {
  std::vector<BulletinSegments> out(corpus.bulletins.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < corpus.bulletins.size(); ++b) {
    const auto& bu = corpus.bulletins[b];
    out[b].bulletin = bu.id;
    out[b].x_source = bu.source_id(corpus::Lang::x);
    out[b].y_source = bu.source_id(corpus::Lang::y);
    out[b].x = segment_recording(bu.x, bu.source_id(corpus::Lang::x), cfg);
    out[b].y = segment_recording(bu.y, bu.source_id(corpus::Lang::y), cfg);
  }
  return out;
}

pairing::PairingStats corpus_stats(const std::vector<BulletinSegments>& segs) {
  std::vector<double> lx, ly;
  for (const auto& b : segs) {
    for (const auto& s : b.x) lx.push_back(s.duration());
    for (const auto& s : b.y) ly.push_back(s.duration());
  }
  return pairing::compute_stats(lx, ly);
}

std::size_t target_segment_count(const std::vector<BulletinSegments>& segs) {
  std::size_t n = 0;
  for (const auto& b : segs) n += b.x.size();
  return n;
}

AudioLookup corpus_audio(const corpus::Corpus& corpus) {
  return [&corpus](const std::string& id) -> const Waveform& {
    const auto [b, lang] = corpus.recording(id);
    return b->audio(lang);
  };
}

std::vector<pairing::SegmentPair> pair_corpus(const corpus::Corpus& corpus, const std::vector<BulletinSegments>& segs,
                                              const encoder::SegmentEncoder& enc) {
  return pair_corpus(corpus_audio(corpus), segs, enc);
}

std::vector<pairing::SegmentPair> pair_corpus(const AudioLookup& audio, const std::vector<BulletinSegments>& segs,
                                              const encoder::SegmentEncoder& enc) {
  const auto stats = corpus_stats(segs);
  std::vector<std::vector<pairing::SegmentPair>> per(segs.size());
  const pairing::Embedder embed = [&](const segmentation::Segment& s) { return enc.embed(s.audio); };
#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < segs.size(); ++b) {
    const auto& y_audio = audio(segs[b].y_source);
    const auto cands = pairing::location_candidates(segs[b].x, segs[b].y, stats, y_audio);
    per[b] = pairing::refine_pairs(cands, embed);
  }
  std::vector<pairing::SegmentPair> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<evaluation::EvalPair> eval_pairs(const std::vector<pairing::SegmentPair>& pairs) {
  std::vector<evaluation::EvalPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.eval_pair());
  return out;
}

std::vector<encoder::EncoderLogEntry> train_corpus_encoder(
    encoder::SegmentEncoder& enc, const AudioLookup& audio, const std::vector<BulletinSegments>& segs,
    const PipelineConfig& cfg, const std::function<void(const encoder::EncoderLogEntry&)>& on_step) {
  const auto sched = cfg.denoiser.schedule();
  if (cfg.encoder_train.positives == "location") {
    std::vector<encoder::LocationPair> lp;
    for (const auto& b : segs) {
      auto v = encoder::location_pairs(b.x, audio(b.y_source), cfg.encoder_train.location_margin_s);
      lp.insert(lp.end(), v.begin(), v.end());
    }
    return encoder::train_encoder(enc, lp, cfg.encoder_train, sched, on_step);
  }
  std::vector<Waveform> wx, wy;
  for (const auto& b : segs) {
    for (const auto& s : b.x) wx.push_back(s.audio);
    for (const auto& s : b.y) wy.push_back(s.audio);
  }
  return encoder::train_encoder(enc, wx, wy, cfg.encoder_train, sched, on_step);
}

Waveform span_audio(const corpus::Corpus& corpus, const std::string& source_id, double start, double end) {
  return span_audio(corpus_audio(corpus), source_id, start, end);
}

Waveform span_audio(const AudioLookup& audio, const std::string& source_id, double start, double end) {
  const auto& w = audio(source_id);
  if (start < -1e-9 || end > w.duration() + 1e-9 || end <= start)
    throw Error("span [" + std::to_string(start) + ", " + std::to_string(end) + "] outside recording " + source_id);
  return w.slice(std::max(0.0, start), std::min(end, w.duration()));
}

unified::DenoiserConfig denoiser_for(const encoder::EncoderConfig& enc, unified::DenoiserConfig d) {
  d.filters = enc.filters;
  d.frames = enc.latent_frames();
  return d;
}

std::vector<unified::PairExample> diffusion_examples(const AudioLookup& audio,
                                                     const std::vector<pairing::SegmentPair>& pairs,
                                                     const encoder::SegmentEncoder& enc,
                                                     const unified::DenoiserConfig& dcfg) {
  std::vector<unified::PairExample> out(pairs.size());
  const double rate = enc.config().sample_rate;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto xa = span_audio(audio, p.seg_x.source_id, p.seg_x.start, p.seg_x.end);
    const auto ya = span_audio(audio, p.seg_y.source_id, p.seg_y.start, p.seg_y.end);
    out[i].x0 = enc.latent(xa).values;
    out[i].y0 = enc.latent(ya).values;
    out[i].c_x = unified::pooled_mel(xa, rate, dcfg.mel_bins);
    out[i].c_y = unified::pooled_mel(ya, rate, dcfg.mel_bins);
  }
  return out;
}

TranslationOutcome score_translation(const corpus::Corpus& corpus, const evaluation::SpanRef& source,
                                     const Waveform& generated) {
  TranslationOutcome o;
  o.source = source;
  o.reference = evaluation::translation_reference(source, corpus);
  o.hypothesis = corpus::spectral_transcribe(generated, corpus::Lang::x, corpus.config, corpus.lexicon);
  o.bleu = o.hypothesis.empty() ? 0.0 : evaluation::bleu(o.hypothesis, o.reference);
  return o;
}

std::vector<TranslationOutcome> translate_and_score(const corpus::Corpus& corpus,
                                                    const std::vector<pairing::SegmentPair>& pairs,
                                                    const unified::UnifiedDenoiser& model,
                                                    const encoder::SegmentEncoder& enc,
                                                    const guidance::GuidanceConfig& gcfg, std::uint64_t seed) {
  std::vector<TranslationOutcome> out(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const evaluation::SpanRef src{p.seg_y.source_id, p.seg_y.start, p.seg_y.end, p.seg_y.index};
    const auto audio = span_audio(corpus, src.source_id, src.start, src.end);
    const auto tr = guidance::translate(audio, model, enc, gcfg, seed + i);
    out[i] = score_translation(corpus, src, tr.audio);
    out[i].pseudo_score = tr.pseudo_score;
  }
  return out;
}

namespace {

// Initialisation seeds do not describe a trained model, so they stay out of
// the digest.
io::Json model_hyper(io::Json j) {
  j.erase("seed");
  return j;
}

}  // namespace

void save_encoder(const std::filesystem::path& path, const encoder::SegmentEncoder& enc) {
  checkpoint::save(path, kEncoderKind, model_hyper(io::Json(enc.config())), enc.params());
}

void load_encoder(const std::filesystem::path& path, encoder::SegmentEncoder& enc) {
  const auto ck = checkpoint::load(path);
  checkpoint::restore(ck, kEncoderKind, model_hyper(io::Json(enc.config())), enc.params());
}

void save_denoiser(const std::filesystem::path& path, const unified::UnifiedDenoiser& model) {
  if (!(model.config().latent_scale > 0)) throw Error("refusing to save a denoiser without a latent scale");
  checkpoint::save(path, kDenoiserKind, model_hyper(io::Json(model.config())), model.params());
}

std::unique_ptr<unified::UnifiedDenoiser> load_denoiser(const std::filesystem::path& path,
                                                        unified::DenoiserConfig expected) {
  const auto ck = checkpoint::load(path);
  if (ck.kind != kDenoiserKind) throw Error("checkpoint holds a " + ck.kind + " model, expected " + kDenoiserKind);
  if (expected.latent_scale == 0.0 && ck.hyper.contains("latent_scale"))
    expected.latent_scale = ck.hyper.at("latent_scale").get<double>();
  auto model = std::make_unique<unified::UnifiedDenoiser>(expected);
  checkpoint::restore(ck, kDenoiserKind, model_hyper(io::Json(model->config())), model->params());
  return model;
}

}  // namespace segdiff::pipeline
