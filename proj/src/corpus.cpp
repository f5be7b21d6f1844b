#include "segdiff/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace segdiff::corpus {

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid synth config: ") + what);
  };
  require(sample_rate > 0, "sample_rate must be positive");
  require(bulletins >= 1 && sentences_per_bulletin >= 1, "need at least one bulletin and sentence");
  require(vocab_size >= 2, "vocab_size must be at least 2");
  require(tone_grid >= 2 && vocab_size <= tone_grid * (tone_grid - 1) / 2, "vocab_size exceeds available dyads");
  require(words_min >= 1 && words_min <= words_max, "words_per_sentence range");
  require(word_min_s > 0 && word_min_s <= word_max_s, "word duration range");
  require(gap_min_s > 0 && gap_min_s <= gap_max_s, "gap range");
  require(silence_min_s > 0 && silence_min_s <= silence_max_s, "silence range");
  require(time_scale > 0, "time_scale must be positive");
  require(jitter_sd >= 0, "jitter_sd must be non-negative");
  require(spillover_rate >= 0 && spillover_rate <= 1, "spillover_rate must lie in [0, 1]");
  require(y_frequency_ratio > 0, "y_frequency_ratio must be positive");
  const double top = (tone_base_hz + tone_step_hz * (tone_grid - 1)) * std::max(1.0, y_frequency_ratio);
  require(top < sample_rate / 2 && marker_x_hz < sample_rate / 2 && marker_y_hz < sample_rate / 2,
          "tones must lie below Nyquist");
}

io::Json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"sample_rate", sample_rate},
          {"bulletins", bulletins},
          {"sentences_per_bulletin", sentences_per_bulletin},
          {"vocab_size", vocab_size},
          {"words_min", words_min},
          {"words_max", words_max},
          {"word_min_s", word_min_s},
          {"word_max_s", word_max_s},
          {"gap_min_s", gap_min_s},
          {"gap_max_s", gap_max_s},
          {"silence_min_s", silence_min_s},
          {"silence_max_s", silence_max_s},
          {"lead_s", lead_s},
          {"time_scale", time_scale},
          {"jitter_sd", jitter_sd},
          {"spillover_rate", spillover_rate},
          {"spillover_gap_s", spillover_gap_s},
          {"tone_base_hz", tone_base_hz},
          {"tone_step_hz", tone_step_hz},
          {"tone_grid", tone_grid},
          {"marker_x_hz", marker_x_hz},
          {"marker_y_hz", marker_y_hz},
          {"y_frequency_ratio", y_frequency_ratio},
          {"amplitude", amplitude},
          {"marker_amplitude", marker_amplitude},
          {"fade_s", fade_s},
          {"marker_inset_s", marker_inset_s}};
}

SynthConfig SynthConfig::from_json(const io::Json& j) {
  SynthConfig c;
  const io::Json defaults = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw Error("unknown synth config key: " + it.key());
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) j.at(k).get_to(field);
  };
  get("seed", c.seed);
  get("sample_rate", c.sample_rate);
  get("bulletins", c.bulletins);
  get("sentences_per_bulletin", c.sentences_per_bulletin);
  get("vocab_size", c.vocab_size);
  get("words_min", c.words_min);
  get("words_max", c.words_max);
  get("word_min_s", c.word_min_s);
  get("word_max_s", c.word_max_s);
  get("gap_min_s", c.gap_min_s);
  get("gap_max_s", c.gap_max_s);
  get("silence_min_s", c.silence_min_s);
  get("silence_max_s", c.silence_max_s);
  get("lead_s", c.lead_s);
  get("time_scale", c.time_scale);
  get("jitter_sd", c.jitter_sd);
  get("spillover_rate", c.spillover_rate);
  get("spillover_gap_s", c.spillover_gap_s);
  get("tone_base_hz", c.tone_base_hz);
  get("tone_step_hz", c.tone_step_hz);
  get("tone_grid", c.tone_grid);
  get("marker_x_hz", c.marker_x_hz);
  get("marker_y_hz", c.marker_y_hz);
  get("y_frequency_ratio", c.y_frequency_ratio);
  get("amplitude", c.amplitude);
  get("marker_amplitude", c.marker_amplitude);
  get("fade_s", c.fade_s);
  get("marker_inset_s", c.marker_inset_s);
  c.validate();
  return c;
}

const Bulletin& Corpus::bulletin(const std::string& id) const {
  for (const auto& b : bulletins)
    if (b.id == id) return b;
  throw Error("unknown bulletin: " + id);
}

std::pair<const Bulletin*, Lang> Corpus::recording(const std::string& source_id) const {
  const auto us = source_id.rfind('_');
  if (us == std::string::npos) throw Error("malformed source id: " + source_id);
  const std::string lang = source_id.substr(us + 1);
  if (lang != "x" && lang != "y") throw Error("malformed source id: " + source_id);
  return {&bulletin(source_id.substr(0, us)), lang == "x" ? Lang::x : Lang::y};
}

Lexicon make_lexicon(const SynthConfig& cfg) {
  cfg.validate();
  Lexicon lex;
  for (int j = 0; j < cfg.tone_grid; ++j) lex.grid.push_back(cfg.tone_base_hz + cfg.tone_step_hz * j);
  std::vector<std::pair<double, double>> all;
  for (int i = 0; i < cfg.tone_grid; ++i)
    for (int j = i + 1; j < cfg.tone_grid; ++j) all.emplace_back(lex.grid[static_cast<std::size_t>(i)], lex.grid[static_cast<std::size_t>(j)]);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(all.begin(), all.end(), rng);
  lex.dyads.assign(all.begin(), all.begin() + cfg.vocab_size);
  lex.codebook.resize(static_cast<std::size_t>(cfg.vocab_size));
  std::iota(lex.codebook.begin(), lex.codebook.end(), 0);
  std::shuffle(lex.codebook.begin(), lex.codebook.end(), rng);
  lex.inverse.resize(lex.codebook.size());
  for (std::size_t a = 0; a < lex.codebook.size(); ++a) lex.inverse[static_cast<std::size_t>(lex.codebook[a])] = static_cast<int>(a);
  return lex;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Add one word (dyad plus marker) into buf.
void render_word(std::vector<double>& buf, double rate, double start, double end, std::pair<double, double> dyad,
                 double marker_hz, const SynthConfig& cfg) {
  const auto a = static_cast<std::size_t>(std::llround(start * rate));
  const auto b = std::min(buf.size(), static_cast<std::size_t>(std::llround(end * rate)));
  const double n = static_cast<double>(b - a);
  const double fade = std::min(cfg.fade_s * rate, n / 2);
  // The marker is kept away from the word edges so that frames straddling an
  // edge look the same in both languages.
  const double inset = std::min(cfg.marker_inset_s * rate, n / 2);
  auto ramp = [](double k, double n, double len) {
    if (k < 0 || k > n - 1) return 0.0;
    if (k < len) return 0.5 - 0.5 * std::cos(std::numbers::pi * k / len);
    if (n - 1 - k < len) return 0.5 - 0.5 * std::cos(std::numbers::pi * (n - 1 - k) / len);
    return 1.0;
  };
  for (std::size_t i = a; i < b; ++i) {
    const double k = static_cast<double>(i - a);
    const double w = 2 * std::numbers::pi * k / rate;
    const double marker_env = ramp(k - inset, n - 2 * inset, fade);
    buf[i] += ramp(k, n, fade) * cfg.amplitude * (std::sin(w * dyad.first) + std::sin(w * dyad.second)) +
              marker_env * cfg.marker_amplitude * std::sin(w * marker_hz);
  }
}

std::pair<double, double> dyad_for(int token, Lang lang, const SynthConfig& cfg, const Lexicon& lex) {
  if (lang == Lang::x) return lex.dyads.at(static_cast<std::size_t>(token));
  const auto d = lex.dyads.at(static_cast<std::size_t>(lex.inverse.at(static_cast<std::size_t>(token))));
  return {d.first * cfg.y_frequency_ratio, d.second * cfg.y_frequency_ratio};
}

Waveform render_words(const std::vector<Word>& words, double duration, Lang lang, const SynthConfig& cfg,
                      const Lexicon& lex) {
  std::vector<double> buf(static_cast<std::size_t>(std::ceil(duration * cfg.sample_rate)), 0.0);
  const double marker = lang == Lang::x ? cfg.marker_x_hz : cfg.marker_y_hz;
  for (const auto& w : words) render_word(buf, cfg.sample_rate, w.start, w.end, dyad_for(w.token, lang, cfg, lex), marker, cfg);
  return Waveform(std::move(buf), cfg.sample_rate);
}

Bulletin make_bulletin(const SynthConfig& cfg, const Lexicon& lex, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  Rng rng(seq);
  const int n = cfg.sentences_per_bulletin;
  Bulletin b;
  char id[32];
  std::snprintf(id, sizeof id, "b%04d", index);
  b.id = id;

  // Spillover boundaries: boundary s joins sentences s and s+1 (no pause).
  std::vector<bool> spill_x(static_cast<std::size_t>(n), false), spill_y(static_cast<std::size_t>(n), false);
  for (int s = 0; s + 2 < n; ++s) {
    if (uniform(rng, 0, 1) < cfg.spillover_rate) {
      spill_x[static_cast<std::size_t>(s)] = true;
      spill_y[static_cast<std::size_t>(s + 1)] = true;
      s += 2;
    }
  }

  std::normal_distribution<double> jitter(0.0, cfg.jitter_sd);
  std::uniform_int_distribution<int> word_count(cfg.words_min, cfg.words_max);
  std::uniform_int_distribution<int> token(0, cfg.vocab_size - 1);
  const double min_pause = 0.75 * cfg.silence_min_s;
  double tx = cfg.lead_s, y_prev_end = 0.0;
  for (int s = 0; s < n; ++s) {
    Sentence sent;
    sent.index = s;
    const int words = word_count(rng);
    std::vector<double> offs, durs;
    double t = 0;
    for (int w = 0; w < words; ++w) {
      const int tok = token(rng);
      sent.tokens_x.push_back(tok);
      sent.tokens_y.push_back(lex.codebook[static_cast<std::size_t>(tok)]);
      const double d = uniform(rng, cfg.word_min_s, cfg.word_max_s);
      offs.push_back(t);
      durs.push_back(d);
      t += d;
      if (w + 1 < words) t += uniform(rng, cfg.gap_min_s, cfg.gap_max_s);
    }
    sent.x_start = tx;
    sent.x_end = tx + t;
    for (int w = 0; w < words; ++w)
      b.words_x.push_back({sent.tokens_x[static_cast<std::size_t>(w)], tx + offs[static_cast<std::size_t>(w)],
                           tx + offs[static_cast<std::size_t>(w)] + durs[static_cast<std::size_t>(w)]});

    const double j = cfg.jitter_sd > 0 ? jitter(rng) : 0.0;
    double ys;
    if (s > 0 && spill_y[static_cast<std::size_t>(s - 1)]) {
      ys = y_prev_end + cfg.spillover_gap_s;
    } else {
      ys = cfg.time_scale * sent.x_start + j;
      ys = std::max(ys, s == 0 ? 0.1 : y_prev_end + min_pause);
    }
    sent.y_start = ys;
    sent.y_end = ys + cfg.time_scale * t;
    for (int w = 0; w < words; ++w)
      b.words_y.push_back({sent.tokens_y[static_cast<std::size_t>(w)], ys + cfg.time_scale * offs[static_cast<std::size_t>(w)],
                           ys + cfg.time_scale * (offs[static_cast<std::size_t>(w)] + durs[static_cast<std::size_t>(w)])});
    y_prev_end = sent.y_end;

    const double pause = spill_x[static_cast<std::size_t>(s)] ? cfg.spillover_gap_s
                                                              : uniform(rng, cfg.silence_min_s, cfg.silence_max_s);
    tx = sent.x_end + pause;
    b.sentences.push_back(std::move(sent));
  }
  const double x_dur = b.sentences.back().x_end + cfg.lead_s;
  const double y_dur = b.sentences.back().y_end + cfg.lead_s;
  b.x = render_words(b.words_x, x_dur, Lang::x, cfg, lex);
  b.y = render_words(b.words_y, y_dur, Lang::y, cfg, lex);
  return b;
}

}  // namespace

Corpus generate_corpus(const SynthConfig& cfg) {
  Corpus c{cfg, make_lexicon(cfg), {}};
  c.bulletins.resize(static_cast<std::size_t>(cfg.bulletins));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < cfg.bulletins; ++i) c.bulletins[static_cast<std::size_t>(i)] = make_bulletin(cfg, c.lexicon, i);
  return c;
}

Waveform render_tokens(const TokenSequence& tokens, Lang lang, const SynthConfig& cfg, const Lexicon& lex,
                       double word_s, double gap_s) {
  std::vector<Word> words;
  double t = cfg.lead_s;
  for (int tok : tokens) {
    words.push_back({tok, t, t + word_s});
    t += word_s + gap_s;
  }
  return render_words(words, t + cfg.lead_s, lang, cfg, lex);
}

TokenSequence oracle_transcribe(const Corpus& corpus, const std::string& source_id, double start, double end,
                                double noise_rate, Rng& rng) {
  const auto [b, lang] = corpus.recording(source_id);
  const double dur = b->audio(lang).duration();
  constexpr double slack = 1e-6;
  if (start < -slack || end > dur + slack || end < start)
    throw Error("segment [" + std::to_string(start) + ", " + std::to_string(end) + "] outside recording " + source_id);
  const int vocab = corpus.config.vocab_size;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, vocab - 2);
  TokenSequence out;
  for (const auto& w : b->words(lang)) {
    const double mid = 0.5 * (w.start + w.end);
    if (mid < start || mid >= end) continue;
    int tok = w.token;
    if (noise_rate > 0 && coin(rng) < noise_rate) {
      const int r = other(rng);
      tok = r >= tok ? r + 1 : r;
    }
    out.push_back(tok);
  }
  return out;
}

TokenSequence oracle_translate(const TokenSequence& tokens, Lang from, const Lexicon& lex) {
  const auto& table = from == Lang::x ? lex.codebook : lex.inverse;
  TokenSequence out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= table.size()) throw Error("unknown token " + std::to_string(t));
    out.push_back(table[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<TokenSequence> reference_sentences(const Corpus& corpus, Lang lang) {
  std::vector<TokenSequence> out;
  for (const auto& b : corpus.bulletins)
    for (const auto& s : b.sentences) out.push_back(lang == Lang::x ? s.tokens_x : s.tokens_y);
  return out;
}

// ---- spectral transcriber ----

TokenSequence spectral_transcribe(const Waveform& wave, Lang lang, const SynthConfig& cfg, const Lexicon& lex,
                                  const TranscriberConfig& tc) {
  const double rate = wave.sample_rate;
  const auto win = static_cast<std::size_t>(std::llround(tc.window_s * rate));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(tc.hop_s * rate)));
  if (wave.size() < win) return {};
  const std::size_t frames = (wave.size() - win) / hop + 1;
  const double ratio = lang == Lang::x ? 1.0 : cfg.y_frequency_ratio;
  const std::size_t g = lex.grid.size();

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  std::vector<double> cosv(g * win), sinv(g * win);
  for (std::size_t k = 0; k < g; ++k)
    for (std::size_t i = 0; i < win; ++i) {
      const double ph = 2 * std::numbers::pi * lex.grid[k] * ratio * static_cast<double>(i) / rate;
      cosv[k * win + i] = std::cos(ph) * window[i];
      sinv[k * win + i] = std::sin(ph) * window[i];
    }
  std::map<std::pair<std::size_t, std::size_t>, int> dyad_token;
  for (std::size_t a = 0; a < lex.dyads.size(); ++a) {
    auto idx = [&](double f) {
      return static_cast<std::size_t>(std::llround((f - cfg.tone_base_hz) / cfg.tone_step_hz));
    };
    const int tok = lang == Lang::x ? static_cast<int>(a) : lex.codebook[a];
    dyad_token[{idx(lex.dyads[a].first), idx(lex.dyads[a].second)}] = tok;
  }

  std::vector<double> rms(frames);
  std::vector<int> label(frames, -1);
  std::vector<double> power(g);
  double peak = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* x = &wave.samples[f * hop];
    double e = 0;
    for (std::size_t i = 0; i < win; ++i) e += x[i] * x[i];
    rms[f] = std::sqrt(e / static_cast<double>(win));
    peak = std::max(peak, rms[f]);
  }
  if (peak <= 1e-9) return {};
  for (std::size_t f = 0; f < frames; ++f) {
    if (rms[f] < tc.gate * peak) continue;
    const double* x = &wave.samples[f * hop];
    for (std::size_t k = 0; k < g; ++k) {
      double re = 0, im = 0;
      for (std::size_t i = 0; i < win; ++i) {
        re += x[i] * cosv[k * win + i];
        im += x[i] * sinv[k * win + i];
      }
      power[k] = re * re + im * im;
    }
    std::size_t a = 0, b = 1;
    if (power[b] > power[a]) std::swap(a, b);
    for (std::size_t k = 2; k < g; ++k) {
      if (power[k] > power[a]) {
        b = a;
        a = k;
      } else if (power[k] > power[b]) {
        b = k;
      }
    }
    if (power[b] < tc.dyad_ratio * power[a]) continue;
    auto it = dyad_token.find({std::min(a, b), std::max(a, b)});
    if (it != dyad_token.end()) label[f] = it->second;
  }

  // Majority smoothing over 7 frames, keeping silence decisions.
  std::vector<int> smooth(label);
  for (std::size_t f = 0; f < frames; ++f) {
    if (label[f] < 0) continue;
    std::map<int, int> votes;
    for (std::size_t k = f >= 3 ? f - 3 : 0; k <= std::min(frames - 1, f + 3); ++k)
      if (label[k] >= 0) ++votes[label[k]];
    smooth[f] = std::max_element(votes.begin(), votes.end(), [](auto& p, auto& q) { return p.second < q.second; })->first;
  }

  TokenSequence out;
  std::size_t f = 0;
  while (f < frames) {
    std::size_t e = f;
    while (e < frames && smooth[e] == smooth[f]) ++e;
    if (smooth[f] >= 0 && static_cast<int>(e - f) >= tc.min_frames) out.push_back(smooth[f]);
    f = e;
  }
  return out;
}

// ---- persistence ----

io::Json truth_json(const Corpus& corpus) {
  io::Json lex;
  lex["grid"] = corpus.lexicon.grid;
  lex["codebook"] = corpus.lexicon.codebook;
  io::Json dy = io::Json::array();
  for (auto [a, b] : corpus.lexicon.dyads) dy.push_back({a, b});
  lex["dyads"] = dy;
  io::Json buls = io::Json::array();
  for (const auto& b : corpus.bulletins) {
    io::Json sents = io::Json::array();
    for (const auto& s : b.sentences)
      sents.push_back({{"index", s.index},
                       {"tokens_x", s.tokens_x},
                       {"tokens_y", s.tokens_y},
                       {"x_start", s.x_start},
                       {"x_end", s.x_end},
                       {"y_start", s.y_start},
                       {"y_end", s.y_end}});
    auto words = [](const std::vector<Word>& ws) {
      io::Json arr = io::Json::array();
      for (const auto& w : ws) arr.push_back({w.token, w.start, w.end});
      return arr;
    };
    buls.push_back({{"id", b.id},
                    {"sentences", sents},
                    {"words_x", words(b.words_x)},
                    {"words_y", words(b.words_y)},
                    {"x_duration_s", b.x.duration()},
                    {"y_duration_s", b.y.duration()}});
  }
  return {{"config", corpus.config.to_json()}, {"lexicon", lex}, {"bulletins", buls}};
}

std::vector<std::filesystem::path> write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  std::vector<io::Json> manifest;
  for (const auto& b : corpus.bulletins)
    for (Lang l : {Lang::x, Lang::y}) {
      const auto p = dir / (b.source_id(l) + ".wav");
      write_wav(p, b.audio(l));
      paths.push_back(p);
      manifest.push_back({{"source_id", b.source_id(l)},
                          {"bulletin", b.id},
                          {"lang", lang_name(l)},
                          {"audio_path", p.filename().string()},
                          {"duration_s", b.audio(l).duration()}});
    }
  io::write_json(dir / "truth.json", truth_json(corpus));
  io::write_jsonl(dir / "recordings.jsonl", manifest);
  return paths;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const io::Json j = io::read_json(dir / "truth.json");
  Corpus c;
  c.config = SynthConfig::from_json(j.at("config"));
  c.lexicon.grid = j.at("lexicon").at("grid").get<std::vector<double>>();
  c.lexicon.codebook = j.at("lexicon").at("codebook").get<std::vector<int>>();
  c.lexicon.inverse.resize(c.lexicon.codebook.size());
  for (std::size_t a = 0; a < c.lexicon.codebook.size(); ++a)
    c.lexicon.inverse.at(static_cast<std::size_t>(c.lexicon.codebook[a])) = static_cast<int>(a);
  for (const auto& d : j.at("lexicon").at("dyads")) c.lexicon.dyads.emplace_back(d.at(0).get<double>(), d.at(1).get<double>());
  for (const auto& bj : j.at("bulletins")) {
    Bulletin b;
    b.id = bj.at("id").get<std::string>();
    for (const auto& sj : bj.at("sentences"))
      b.sentences.push_back({sj.at("index").get<int>(), sj.at("tokens_x").get<TokenSequence>(),
                             sj.at("tokens_y").get<TokenSequence>(), sj.at("x_start").get<double>(),
                             sj.at("x_end").get<double>(), sj.at("y_start").get<double>(), sj.at("y_end").get<double>()});
    for (const auto& w : bj.at("words_x")) b.words_x.push_back({w.at(0).get<int>(), w.at(1).get<double>(), w.at(2).get<double>()});
    for (const auto& w : bj.at("words_y")) b.words_y.push_back({w.at(0).get<int>(), w.at(1).get<double>(), w.at(2).get<double>()});
    b.x = read_wav(dir / (b.id + "_x.wav"));
    b.y = read_wav(dir / (b.id + "_y.wav"));
    c.bulletins.push_back(std::move(b));
  }
  return c;
}

}  // namespace segdiff::corpus
