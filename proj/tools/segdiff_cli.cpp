#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "segdiff/kernels.hpp"
#include "segdiff/log.hpp"
#include "segdiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segdiff;
using pipeline::PipelineConfig;

namespace {

struct Globals {
  std::string config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig cfg = pipeline::preset(g.preset);
  if (!g.config.empty()) cfg = pipeline::load_config(g.config, cfg);
  if (g.seed) pipeline::apply_seed(cfg, *g.seed);
  cfg.validate();
  return cfg;
}

// Recordings referenced by manifests, loaded once up front so lookups are
// read-only under the parallel loops.
class Recordings {
 public:
  void add(const std::string& source_id, const fs::path& path) {
    auto it = path_.find(source_id);
    if (it != path_.end()) {
      if (it->second != path) throw Error("source " + source_id + " refers to two recordings");
      return;
    }
    if (!fs::exists(path)) throw Error("recording not found: " + path.string());
    path_[source_id] = path;
    audio_[source_id] = read_wav(path);
  }
  const fs::path& path(const std::string& id) const {
    auto it = path_.find(id);
    if (it == path_.end()) throw Error("no recording for source " + id);
    return it->second;
  }
  pipeline::AudioLookup lookup() const {
    return [this](const std::string& id) -> const Waveform& {
      auto it = audio_.find(id);
      if (it == audio_.end()) throw Error("no recording for source " + id);
      return it->second;
    };
  }

 private:
  std::map<std::string, fs::path> path_;
  std::map<std::string, Waveform> audio_;
};

fs::path resolve_path(const fs::path& p, const fs::path& relative_to) {
  return fs::weakly_canonical(p.is_absolute() ? p : relative_to / p);
}

std::vector<segmentation::Segment> read_segments(const fs::path& manifest, Recordings& rec) {
  std::vector<segmentation::Segment> out;
  for (const auto& r : io::read_jsonl(manifest)) {
    segmentation::Segment s;
    s.source_id = r.at("source_id").get<std::string>();
    s.index = r.at("index").get<int>();
    s.start = r.at("start_s").get<double>();
    s.end = r.at("end_s").get<double>();
    rec.add(s.source_id, resolve_path(r.at("audio_path").get<std::string>(), manifest.parent_path()));
    s.audio = rec.lookup()(s.source_id).slice(s.start, s.end);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error("segment manifest " + manifest.string() + " is empty");
  return out;
}

// "<bulletin>_x" -> "<bulletin>".
std::string stem(const std::string& source_id) {
  const auto k = source_id.rfind('_');
  return k == std::string::npos ? source_id : source_id.substr(0, k);
}

std::vector<pipeline::BulletinSegments> group(const std::vector<segmentation::Segment>& xs,
                                              const std::vector<segmentation::Segment>& ys) {
  std::map<std::string, pipeline::BulletinSegments> by;
  for (const auto& s : xs) {
    auto& b = by[stem(s.source_id)];
    b.bulletin = stem(s.source_id);
    b.x_source = s.source_id;
    b.x.push_back(s);
  }
  for (const auto& s : ys) {
    auto it = by.find(stem(s.source_id));
    if (it == by.end()) throw Error("y source " + s.source_id + " has no x counterpart");
    it->second.y_source = s.source_id;
    it->second.y.push_back(s);
  }
  std::vector<pipeline::BulletinSegments> out;
  for (auto& [k, b] : by) {
    if (b.y.empty()) throw Error("x source " + b.x_source + " has no y counterpart");
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<pairing::SegmentPair> read_pairs(const fs::path& manifest, Recordings& rec) {
  std::vector<pairing::SegmentPair> out;
  for (const auto& r : io::read_jsonl(manifest)) {
    auto p = pairing::pair_from_json(r);
    if (r.contains("x_audio_path"))
      rec.add(p.seg_x.source_id, resolve_path(r.at("x_audio_path").get<std::string>(), manifest.parent_path()));
    if (r.contains("y_audio_path"))
      rec.add(p.seg_y.source_id, resolve_path(r.at("y_audio_path").get<std::string>(), manifest.parent_path()));
    out.push_back(std::move(p));
  }
  return out;
}

io::Json pair_record(const pairing::SegmentPair& p, const Recordings& rec) {
  auto j = p.to_json();
  j["x_audio_path"] = rec.path(p.seg_x.source_id).string();
  j["y_audio_path"] = rec.path(p.seg_y.source_id).string();
  return j;
}

std::unique_ptr<encoder::SegmentEncoder> open_encoder(const fs::path& path, const PipelineConfig& cfg) {
  auto enc = std::make_unique<encoder::SegmentEncoder>(cfg.encoder);
  pipeline::load_encoder(path, *enc);
  return enc;
}

evaluation::OracleConfig oracle(const PipelineConfig& cfg) {
  return {cfg.evaluation.oracle_noise, cfg.evaluation.oracle_seed};
}

void emit(const io::Json& report, const std::string& out) {
  if (!out.empty()) io::write_json(out, report);
  std::cout << report.dump(2) << "\n";
}

// ---- subcommands ----

void run_synth(const PipelineConfig& cfg, const std::string& out) {
  const auto corpus = corpus::generate_corpus(cfg.synth);
  const auto paths = corpus::write_corpus(corpus, out);
  log::info("wrote " + std::to_string(paths.size()) + " recordings to " + out);
}

void run_segment(const PipelineConfig& cfg, const std::string& corpus_dir, const std::string& lang,
                 const std::string& input, const std::string& source_id, const std::string& out) {
  std::vector<std::pair<std::string, fs::path>> recordings;
  if (!corpus_dir.empty()) {
    if (lang != "x" && lang != "y") throw Error("--lang must be x or y");
    for (const auto& r : io::read_jsonl(fs::path(corpus_dir) / "recordings.jsonl"))
      if (r.at("lang").get<std::string>() == lang)
        recordings.emplace_back(r.at("source_id").get<std::string>(),
                                resolve_path(r.at("audio_path").get<std::string>(), corpus_dir));
  } else {
    recordings.emplace_back(source_id.empty() ? fs::path(input).stem().string() : source_id,
                            fs::weakly_canonical(input));
  }
  std::vector<io::Json> records;
  std::size_t dropped = 0;
  for (const auto& [id, path] : recordings) {
    const auto wave = read_wav(path);
    if (std::abs(wave.sample_rate - cfg.synth.sample_rate) > 1e-9)
      throw Error(path.string() + " is not at the working rate " + std::to_string(cfg.synth.sample_rate));
    for (const auto& s : pipeline::segment_recording(wave, id, cfg)) {
      if (s.duration() < cfg.segment.min_s) {
        ++dropped;
        continue;
      }
      records.push_back(segmentation::segment_record(s, path.string()));
    }
  }
  io::write_jsonl(out, records);
  log::info("wrote " + std::to_string(records.size()) + " segments to " + out +
            (dropped ? " (" + std::to_string(dropped) + " short tails dropped)" : ""));
}

void run_pair(const PipelineConfig& cfg, const std::string& xs, const std::string& ys, const std::string& enc_path,
              const std::string& out, const std::string& corpus_dir, const std::string& report_out) {
  Recordings rec;
  const auto segs = group(read_segments(xs, rec), read_segments(ys, rec));
  const auto enc = open_encoder(enc_path, cfg);
  const auto pairs = pipeline::pair_corpus(rec.lookup(), segs, *enc);
  std::vector<io::Json> records;
  for (const auto& p : pairs) records.push_back(pair_record(p, rec));
  io::write_jsonl(out, records);
  log::info("wrote " + std::to_string(pairs.size()) + " pairs to " + out);
  if (corpus_dir.empty()) return;
  const auto corpus = corpus::load_corpus(corpus_dir);
  const auto m = evaluation::eval_method2(pipeline::eval_pairs(pairs), corpus, oracle(cfg),
                                          pipeline::target_segment_count(segs));
  emit(m.to_json("method2"), report_out);
}

void run_train_encoder(const PipelineConfig& cfg, const std::string& xs, const std::string& ys, const std::string& out,
                       const std::string& log_path) {
  Recordings rec;
  const auto segs = group(read_segments(xs, rec), read_segments(ys, rec));
  encoder::SegmentEncoder enc(cfg.encoder);
  std::vector<io::Json> log_records;
  pipeline::train_corpus_encoder(enc, rec.lookup(), segs, cfg, [&](const encoder::EncoderLogEntry& e) {
    log_records.push_back(e.to_json());
    if (e.step % 50 == 0) log::info("encoder step " + std::to_string(e.step) + " loss " + std::to_string(e.loss));
  });
  pipeline::save_encoder(out, enc);
  if (!log_path.empty()) io::write_jsonl(log_path, log_records);
}

void run_train_diffusion(const PipelineConfig& cfg, const std::string& pairs_path, const std::string& enc_path,
                         const std::string& out, const std::string& test_out, const std::string& log_path) {
  Recordings rec;
  const auto pairs = read_pairs(pairs_path, rec);
  if (pairs.empty()) throw Error("pair manifest " + pairs_path + " is empty");
  const auto enc = open_encoder(enc_path, cfg);
  const auto [train_idx, test_idx] =
      unified::split_indices(pairs.size(), cfg.diffusion_train.train_fraction, cfg.diffusion_train.seed);
  std::vector<pairing::SegmentPair> train;
  for (auto i : train_idx) train.push_back(pairs[i]);
  const auto dcfg = pipeline::denoiser_for(cfg.encoder, cfg.denoiser);
  const auto examples = pipeline::diffusion_examples(rec.lookup(), train, *enc, dcfg);
  unified::UnifiedDenoiser model(dcfg);
  std::vector<io::Json> log_records;
  unified::train_model(model, examples, cfg.diffusion_train, [&](const unified::DiffusionLogEntry& e) {
    log_records.push_back(e.to_json());
    if (e.step % 50 == 0) log::info("diffusion step " + std::to_string(e.step) + " loss " + std::to_string(e.loss));
  });
  pipeline::save_denoiser(out, model);
  if (!log_path.empty()) io::write_jsonl(log_path, log_records);
  if (!test_out.empty()) {
    std::vector<io::Json> records;
    for (auto i : test_idx) records.push_back(pair_record(pairs[i], rec));
    io::write_jsonl(test_out, records);
  }
}

fs::path sidecar_path(const fs::path& wav) {
  auto p = wav;
  return p.replace_extension(".json");
}

void run_translate(const PipelineConfig& cfg, std::uint64_t seed, const std::string& enc_path,
                   const std::string& model_path, const std::string& input, const std::string& out,
                   const std::string& pairs_path, const std::string& out_dir, std::size_t limit) {
  const auto enc = open_encoder(enc_path, cfg);
  auto dcfg = pipeline::denoiser_for(cfg.encoder, cfg.denoiser);
  dcfg.latent_scale = 0;
  const auto model = pipeline::load_denoiser(model_path, dcfg);
  if (!input.empty()) {
    const auto tr = guidance::translate(read_wav(input), *model, *enc, cfg.guidance, seed);
    write_wav(out, tr.audio);
    io::write_json(sidecar_path(out), tr.sidecar(cfg.guidance, seed));
    return;
  }
  Recordings rec;
  auto pairs = read_pairs(pairs_path, rec);
  if (limit > 0 && pairs.size() > limit) pairs.resize(limit);
  fs::create_directories(out_dir);
  std::vector<io::Json> manifest(pairs.size());
  const auto audio = rec.lookup();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& y = pairs[i].seg_y;
    const auto src = pipeline::span_audio(audio, y.source_id, y.start, y.end);
    const auto tr = guidance::translate(src, *model, *enc, cfg.guidance, seed + i);
    const auto wav = fs::path(out_dir) / ("translation_" + std::to_string(i) + ".wav");
    write_wav(wav, tr.audio);
    const auto side = tr.sidecar(cfg.guidance, seed + i);
    io::write_json(sidecar_path(wav), side);
    manifest[i] = {{"source", {{"source_id", y.source_id}, {"start_s", y.start}, {"end_s", y.end}, {"index", y.index}}},
                   {"audio_path", wav.filename().string()},
                   {"mode", side.at("mode")},
                   {"steps", side.at("steps")},
                   {"seed", side.at("seed")},
                   {"pseudo_score", side.at("pseudo_score")}};
  }
  io::write_jsonl(fs::path(out_dir) / "translations.jsonl", manifest);
  log::info("wrote " + std::to_string(pairs.size()) + " translations to " + out_dir);
}

void run_evaluate(const PipelineConfig& cfg, const std::string& corpus_dir, const std::string& pairs_path, int method,
                  const std::string& study, const std::string& translations, const std::string& out) {
  const auto corpus = corpus::load_corpus(corpus_dir);
  io::Json report = io::Json::object();
  if (!pairs_path.empty()) {
    Recordings rec;
    const auto pairs = read_pairs(pairs_path, rec);
    const auto ep = pipeline::eval_pairs(pairs);
    // Each x segment appears in exactly one pair, so the pairs enumerate the targets.
    const std::size_t targets = pairs.size();
    const auto m = method == 1 ? evaluation::eval_method1(ep, corpus, oracle(cfg), targets)
                               : evaluation::eval_method2(ep, corpus, oracle(cfg), targets);
    report["pairing"] = m.to_json(method == 1 ? "method1" : "method2");
    if (study == "length") {
      double l_x = 0;
      for (const auto& p : ep) l_x += p.x.duration();
      l_x /= static_cast<double>(ep.size());
      io::Json rows = io::Json::array();
      for (const auto& r : evaluation::length_study(ep, corpus, oracle(cfg), l_x, cfg.evaluation.length_study_sample,
                                                    cfg.evaluation.oracle_seed, cfg.evaluation.length_band))
        rows.push_back({{"category", evaluation::category_name(r.category)}, {"metrics", r.metrics.to_json("method2")}});
      report["length_study"] = {{"l_x", l_x}, {"categories", rows}};
    }
  } else if (!study.empty()) {
    throw Error("--study needs --pairs");
  }
  if (!translations.empty()) {
    const fs::path tpath(translations);
    double sum = 0;
    std::size_t n = 0;
    io::Json rows = io::Json::array();
    for (const auto& r : io::read_jsonl(tpath)) {
      const auto& s = r.at("source");
      const evaluation::SpanRef src{s.at("source_id").get<std::string>(), s.at("start_s").get<double>(),
                                    s.at("end_s").get<double>(), s.at("index").get<int>()};
      const auto wave = read_wav(resolve_path(r.at("audio_path").get<std::string>(), tpath.parent_path()));
      const auto o = pipeline::score_translation(corpus, src, wave);
      sum += o.bleu;
      ++n;
      rows.push_back({{"source_id", src.source_id}, {"start_s", src.start}, {"bleu", o.bleu},
                      {"hypothesis", o.hypothesis}, {"reference", o.reference}});
    }
    if (n == 0) throw Error("translation manifest " + translations + " is empty");
    report["translation"] = {{"count", n}, {"mean_bleu", sum / static_cast<double>(n)}, {"per_item", rows}};
  }
  if (report.empty()) throw Error("nothing to evaluate: give --pairs and/or --translations");
  emit(report, out);
}

void run_schedule_dump(int T, double b0, double b1, const std::string& out) {
  const auto sched = diffusion::make_schedule(T, b0, b1);
  std::ostringstream s;
  s.precision(17);
  s << "t,beta,alpha_bar\n";
  for (int t = 1; t <= T; ++t) s << t << "," << sched.beta(t) << "," << sched.alpha_bar(t) << "\n";
  if (out.empty()) std::cout << s.str();
  else io::write_file_atomic(out, s.str());
}

}  // namespace

int main(int argc, char** argv) {
  kernels::apply_thread_limit();
  CLI::App app{"Segment-based speech-to-speech translation with a joint latent diffusion model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Base configuration: desk, ci or paper");
  app.add_option("--seed", g.seed, "Master seed for every random choice");
  app.add_option("--log-level", g.log_level, "debug, info, warn or error");

  std::string out, corpus_dir, lang, input, source_id, xs, ys, enc_path, model_path, pairs_path, out_dir, report_out,
      test_out, log_path, study, translations;
  int method = 2;
  std::size_t limit = 0;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic bilingual corpus");
  synth->add_option("--out", out, "Output directory")->required();

  auto* segment = app.add_subcommand("segment", "Split recordings at silences");
  auto* seg_corpus = segment->add_option("--corpus", corpus_dir, "Corpus directory")->check(CLI::ExistingDirectory);
  segment->add_option("--lang", lang, "x or y (with --corpus)")->needs(seg_corpus);
  auto* seg_input = segment->add_option("--input", input, "Single WAV recording")->check(CLI::ExistingFile);
  segment->add_option("--source-id", source_id, "Source id for --input (default: file stem)")->needs(seg_input);
  seg_corpus->excludes(seg_input);
  segment->add_option("--out", out, "Segment manifest (JSONL)")->required();

  auto* pair = app.add_subcommand("pair", "Pair target and source segments");
  pair->add_option("--x", xs, "Target-language segment manifest")->required()->check(CLI::ExistingFile);
  pair->add_option("--y", ys, "Source-language segment manifest")->required()->check(CLI::ExistingFile);
  pair->add_option("--encoder", enc_path, "Segment encoder checkpoint")->required()->check(CLI::ExistingFile);
  pair->add_option("--out", out, "Pair manifest (JSONL)")->required();
  pair->add_option("--corpus", corpus_dir, "Corpus directory; prints a method-2 report")
      ->check(CLI::ExistingDirectory);
  pair->add_option("--report", report_out, "Write the report here as well");

  auto* tenc = app.add_subcommand("train-encoder", "Train the segment encoder");
  tenc->add_option("--x", xs, "Target-language segment manifest")->required()->check(CLI::ExistingFile);
  tenc->add_option("--y", ys, "Source-language segment manifest")->required()->check(CLI::ExistingFile);
  tenc->add_option("--out", out, "Checkpoint path")->required();
  tenc->add_option("--log", log_path, "Training log (JSONL)");

  auto* tdif = app.add_subcommand("train-diffusion", "Train the joint denoiser");
  tdif->add_option("--pairs", pairs_path, "Pair manifest")->required()->check(CLI::ExistingFile);
  tdif->add_option("--encoder", enc_path, "Segment encoder checkpoint")->required()->check(CLI::ExistingFile);
  tdif->add_option("--out", out, "Checkpoint path")->required();
  tdif->add_option("--test-out", test_out, "Held-out pair manifest");
  tdif->add_option("--log", log_path, "Training log (JSONL)");

  std::string mode;
  std::optional<int> steps;
  std::optional<double> scale, sigma;
  auto* tr = app.add_subcommand("translate", "Generate target speech for source segments");
  tr->add_option("--encoder", enc_path, "Segment encoder checkpoint")->required()->check(CLI::ExistingFile);
  tr->add_option("--model", model_path, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
  auto* tr_input = tr->add_option("--input", input, "Source WAV")->check(CLI::ExistingFile);
  auto* tr_out = tr->add_option("--out", out, "Output WAV (with --input)");
  auto* tr_pairs = tr->add_option("--pairs", pairs_path, "Translate the y side of each pair")->check(CLI::ExistingFile);
  auto* tr_dir = tr->add_option("--out-dir", out_dir, "Output directory (with --pairs)");
  tr->add_option("--limit", limit, "Translate at most this many pairs");
  tr->add_option("--mode", mode, "uncond-noised, uncond-clean, cond-noised or cond-clean");
  tr->add_option("--steps", steps, "DDIM steps");
  tr->add_option("--guidance-scale", scale, "Pseudo-classifier guidance scale");
  tr->add_option("--sigma", sigma, "DDIM noise level");
  tr_input->needs(tr_out)->excludes(tr_pairs);
  tr_out->needs(tr_input);
  tr_pairs->needs(tr_dir);
  tr_dir->needs(tr_pairs);

  auto* ev = app.add_subcommand("evaluate", "Score pairs and translations");
  ev->add_option("--corpus", corpus_dir, "Corpus directory (ground truth)")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--pairs", pairs_path, "Pair manifest")->check(CLI::ExistingFile);
  ev->add_option("--method", method, "Pairing evaluation method")->check(CLI::IsMember({1, 2}));
  ev->add_option("--study", study, "Extra study over the pairs")->check(CLI::IsMember({"length"}));
  ev->add_option("--translations", translations, "Translation manifest from translate --pairs")
      ->check(CLI::ExistingFile);
  ev->add_option("--out", out, "Report path (JSON)");

  int T = 0;
  std::optional<double> beta_start, beta_end;
  auto* sd = app.add_subcommand("schedule-dump", "Print the noise schedule as CSV");
  sd->add_option("--T", T, "Number of diffusion steps");
  sd->add_option("--beta-start", beta_start, "First beta");
  sd->add_option("--beta-end", beta_end, "Last beta");
  sd->add_option("--out", out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g.log_level == "debug") log::threshold() = log::Level::debug;
    else if (g.log_level == "info") log::threshold() = log::Level::info;
    else if (g.log_level == "warn") log::threshold() = log::Level::warn;
    else if (g.log_level == "error") log::threshold() = log::Level::error;
    else {
      std::cerr << "unknown log level " << g.log_level << "\n";
      return 2;
    }
    PipelineConfig cfg = resolve(g);
    if (*synth) {
      run_synth(cfg, out);
    } else if (*segment) {
      if (corpus_dir.empty() && input.empty()) {
        std::cerr << "segment needs --corpus with --lang, or --input\n";
        return 2;
      }
      run_segment(cfg, corpus_dir, lang, input, source_id, out);
    } else if (*pair) {
      run_pair(cfg, xs, ys, enc_path, out, corpus_dir, report_out);
    } else if (*tenc) {
      run_train_encoder(cfg, xs, ys, out, log_path);
    } else if (*tdif) {
      run_train_diffusion(cfg, pairs_path, enc_path, out, test_out, log_path);
    } else if (*tr) {
      if (input.empty() && pairs_path.empty()) {
        std::cerr << "translate needs --input/--out or --pairs/--out-dir\n";
        return 2;
      }
      if (!mode.empty()) cfg.guidance.mode = mode;
      if (steps) cfg.guidance.ddim_steps = *steps;
      if (scale) cfg.guidance.guidance_scale = *scale;
      if (sigma) cfg.guidance.sigma = *sigma;
      cfg.guidance.validate(cfg.denoiser.schedule_steps);
      run_translate(cfg, g.seed.value_or(cfg.diffusion_train.seed), enc_path, model_path, input, out, pairs_path,
                    out_dir, limit);
    } else if (*ev) {
      run_evaluate(cfg, corpus_dir, pairs_path, method, study, translations, out);
    } else if (*sd) {
      run_schedule_dump(T > 0 ? T : cfg.denoiser.schedule_steps, beta_start.value_or(cfg.denoiser.beta_start),
                        beta_end.value_or(cfg.denoiser.beta_end), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
