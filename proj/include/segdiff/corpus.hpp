#pragma once

// Synthetic bilingual broadcast corpus with exact ground truth.
//
// Each token is a tone dyad from a fixed frequency grid. Language x speaks
// token a; language y speaks codebook(a) with the same dyad scaled by
// y_frequency_ratio (1 by default, i.e. the two languages share their sound
// inventory) plus a language-specific marker tone under every word. Language
// y's timeline is language x's stretched by time_scale with gaussian jitter
// on every sentence onset.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segdiff/io.hpp"
#include "segdiff/signal.hpp"

namespace segdiff::corpus {

using TokenSequence = std::vector<int>;

enum class Lang { x, y };
inline const char* lang_name(Lang l) { return l == Lang::x ? "x" : "y"; }

struct SynthConfig {
  std::uint64_t seed = 7;
  double sample_rate = 1000.0;
  int bulletins = 4;
  int sentences_per_bulletin = 8;
  int vocab_size = 32;
  int words_min = 12;
  int words_max = 30;
  double word_min_s = 0.35;
  double word_max_s = 0.60;
  double gap_min_s = 0.08;
  double gap_max_s = 0.15;
  double silence_min_s = 0.6;
  double silence_max_s = 1.0;
  double lead_s = 0.5;
  double time_scale = 1.0;
  double jitter_sd = 0.0;
  /// Probability that a sentence boundary loses its pause in language x,
  /// with language y losing the following boundary instead.
  double spillover_rate = 0.0;
  /// Pause left at a spillover boundary (shorter than the VAD minimum).
  double spillover_gap_s = 0.2;
  double tone_base_hz = 100.0;
  double tone_step_hz = 40.0;
  int tone_grid = 9;
  double marker_x_hz = 50.0;
  double marker_y_hz = 470.0;
  double y_frequency_ratio = 1.0;
  double amplitude = 0.3;
  double marker_amplitude = 0.15;
  double fade_s = 0.01;
  double marker_inset_s = 0.03;

  void validate() const;
  io::Json to_json() const;
  static SynthConfig from_json(const io::Json& j);
};

struct Word {
  int token;
  double start;
  double end;
};

struct Sentence {
  int index;  // within bulletin
  TokenSequence tokens_x;
  TokenSequence tokens_y;
  double x_start, x_end, y_start, y_end;
};

struct Bulletin {
  std::string id;
  Waveform x, y;
  std::vector<Sentence> sentences;
  std::vector<Word> words_x, words_y;

  const Waveform& audio(Lang l) const { return l == Lang::x ? x : y; }
  const std::vector<Word>& words(Lang l) const { return l == Lang::x ? words_x : words_y; }
  std::string source_id(Lang l) const { return id + "_" + lang_name(l); }
};

/// Token -> dyad frequencies and the cross-language codebook.
struct Lexicon {
  std::vector<std::pair<double, double>> dyads;  // indexed by x token
  std::vector<int> codebook;                     // x token -> y token
  std::vector<int> inverse;                      // y token -> x token
  std::vector<double> grid;                      // tone grid in Hz
};

struct Corpus {
  SynthConfig config;
  Lexicon lexicon;
  std::vector<Bulletin> bulletins;

  const Bulletin& bulletin(const std::string& id) const;
  /// Locate a recording by source id ("<bulletin>_x" / "<bulletin>_y").
  std::pair<const Bulletin*, Lang> recording(const std::string& source_id) const;
};

Lexicon make_lexicon(const SynthConfig& cfg);
Corpus generate_corpus(const SynthConfig& cfg);

/// Waveform of a token sequence in one language with fixed word timing;
/// used by tests and by the reference translation control.
Waveform render_tokens(const TokenSequence& tokens, Lang lang, const SynthConfig& cfg, const Lexicon& lex,
                       double word_s = 0.45, double gap_s = 0.12);

// ---- oracles ----

/// Ground-truth tokens of the words whose midpoint lies in [start, end),
/// each replaced by a different random token with probability noise_rate.
TokenSequence oracle_transcribe(const Corpus& corpus, const std::string& source_id, double start, double end,
                                double noise_rate, Rng& rng);

/// Apply the codebook (x -> y) or its inverse (y -> x).
TokenSequence oracle_translate(const TokenSequence& tokens, Lang from, const Lexicon& lex);

/// Every sentence of the corpus in one language, in corpus order.
std::vector<TokenSequence> reference_sentences(const Corpus& corpus, Lang lang);

// ---- spectral transcriber for generated audio ----

struct TranscriberConfig {
  double window_s = 0.05;
  double hop_s = 0.01;
  /// Frames below this fraction of the loudest frame's RMS are silence.
  double gate = 0.2;
  /// Minimum ratio of the second to the first dyad power.
  double dyad_ratio = 0.15;
  /// Shortest run of identical frames accepted as a word.
  int min_frames = 8;
};

/// Read tokens off audio by locating the two strongest grid tones per frame.
TokenSequence spectral_transcribe(const Waveform& wave, Lang lang, const SynthConfig& cfg, const Lexicon& lex,
                                  const TranscriberConfig& tc = {});

// ---- persistence ----

/// WAV per recording plus truth.json; returns paths of the written WAVs.
std::vector<std::filesystem::path> write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reload truth.json and the WAVs written by write_corpus.
Corpus load_corpus(const std::filesystem::path& dir);
io::Json truth_json(const Corpus& corpus);

}  // namespace segdiff::corpus
