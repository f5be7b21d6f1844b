// Acceptance run: every gate at its stated tolerance and time budget, one
// PASS/FAIL line each. Exit status is non-zero when any gate fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

#include "CLI11.hpp"
#include "segdiff/log.hpp"
#include "segdiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segdiff;
using pipeline::PipelineConfig;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

double norm(const Tensor& t) {
  double s = 0;
  for (double v : t.vec()) s += v * v;
  return std::sqrt(s);
}

double rel_diff(const Tensor& a, const Tensor& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d) / std::max(norm(b), 1e-300);
}

Tensor gaussian(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---- shared experiment state ----

struct PairingRun {
  corpus::Corpus corpus;
  std::vector<pipeline::BulletinSegments> segs;
  std::vector<pairing::SegmentPair> pairs;
  std::size_t targets = 0;
};

struct DeskSystem {
  corpus::Corpus corpus;
  std::unique_ptr<encoder::SegmentEncoder> enc;
  std::unique_ptr<unified::UnifiedDenoiser> model;
  std::vector<pairing::SegmentPair> test_pairs;
  std::vector<unified::PairExample> test_examples;
  double train_seconds = 0;
};

class Lab {
 public:
  Lab(PipelineConfig desk, fs::path cli, fs::path work, long diffusion_steps, int translation_steps)
      : desk_(std::move(desk)),
        cli_(std::move(cli)),
        work_(std::move(work)),
        diffusion_steps_(diffusion_steps),
        translation_steps_(translation_steps) {}

  const PipelineConfig& desk() const { return desk_; }
  const fs::path& cli() const { return cli_; }
  const fs::path& work() const { return work_; }
  int translation_steps() const { return translation_steps_; }

  corpus::SynthConfig pairing_synth() const {
    auto s = desk_.synth;
    s.bulletins = 30;
    return s;
  }

  // Desk encoder trained with the desk schedule on the zero-jitter pairing corpus.
  const encoder::SegmentEncoder& pairing_encoder() {
    if (!pair_enc_) {
      const auto corpus = corpus::generate_corpus(pairing_synth());
      const auto segs = pipeline::segment_corpus(corpus, desk_);
      pair_enc_ = std::make_unique<encoder::SegmentEncoder>(desk_.encoder);
      pipeline::train_corpus_encoder(*pair_enc_, pipeline::corpus_audio(corpus), segs, desk_);
    }
    return *pair_enc_;
  }

  PairingRun pair(const corpus::SynthConfig& sc) {
    PairingRun r;
    r.corpus = corpus::generate_corpus(sc);
    r.segs = pipeline::segment_corpus(r.corpus, desk_);
    r.pairs = pipeline::pair_corpus(r.corpus, r.segs, pairing_encoder());
    r.targets = pipeline::target_segment_count(r.segs);
    return r;
  }

  DeskSystem& desk_system() {
    if (!system_) {
      build_desk_system();
      unclaimed_build_s_ = system_->train_seconds;
    }
    return *system_;
  }

  double take_build_seconds() { return std::exchange(unclaimed_build_s_, 0.0); }

 private:
  void build_desk_system() {
    const auto t0 = Clock::now();
    auto s = std::make_unique<DeskSystem>();
    auto cfg = desk_;
    cfg.synth.bulletins = 90;
    cfg.synth.seed = 11;
    cfg.diffusion_train.steps = diffusion_steps_;
    s->corpus = corpus::generate_corpus(cfg.synth);
    const auto audio = pipeline::corpus_audio(s->corpus);
    const auto segs = pipeline::segment_corpus(s->corpus, cfg);
    s->enc = std::make_unique<encoder::SegmentEncoder>(cfg.encoder);
    pipeline::train_corpus_encoder(*s->enc, audio, segs, cfg);
    const auto pairs = pipeline::pair_corpus(audio, segs, *s->enc);
    const auto [train_idx, test_idx] =
        unified::split_indices(pairs.size(), cfg.diffusion_train.train_fraction, cfg.diffusion_train.seed);
    std::vector<pairing::SegmentPair> train;
    for (auto i : train_idx) train.push_back(pairs[i]);
    for (auto i : test_idx) s->test_pairs.push_back(pairs[i]);
    const auto dcfg = pipeline::denoiser_for(cfg.encoder, cfg.denoiser);
    const auto train_examples = pipeline::diffusion_examples(audio, train, *s->enc, dcfg);
    s->test_examples = pipeline::diffusion_examples(audio, s->test_pairs, *s->enc, dcfg);
    log::info("desk system: " + std::to_string(pairs.size()) + " pairs, " + std::to_string(train.size()) +
              " for training, " + std::to_string(diffusion_steps_) + " steps");
    s->model = std::make_unique<unified::UnifiedDenoiser>(dcfg);
    unified::train_model(*s->model, train_examples, cfg.diffusion_train, [](const unified::DiffusionLogEntry& e) {
      if (e.step % 250 == 0) log::info("diffusion step " + std::to_string(e.step) + " loss " + fmt(e.loss, 6));
    });
    s->train_seconds = seconds_since(t0);
    system_ = std::move(s);
  }

  PipelineConfig desk_;
  fs::path cli_, work_;
  long diffusion_steps_;
  int translation_steps_;
  std::unique_ptr<encoder::SegmentEncoder> pair_enc_;
  std::unique_ptr<DeskSystem> system_;
  double unclaimed_build_s_ = 0;
};

// ---- gates ----

Outcome schedule_oracle(Lab&) {
  const auto sched = diffusion::make_schedule(1000, 1e-4, 0.005);
  long double product = 1;
  for (int t = 1; t <= 1000; ++t)
    product *= 1.0L - (1e-4L + (0.005L - 1e-4L) * static_cast<long double>(t - 1) / 999.0L);
  const double a1 = sched.alpha_bar(1), aT = sched.alpha_bar(1000);
  const double err = std::abs(aT - static_cast<double>(product));
  return {a1 == 0.9999 && err <= 1e-3,
          "alpha_bar_1=" + fmt(a1, 17) + " alpha_bar_1000=" + fmt(aT, 8) + " brute=" +
              fmt(static_cast<double>(product), 8)};
}

Outcome tweedie_round_trip(Lab&) {
  const auto sched = diffusion::make_schedule();
  Rng rng(101);
  std::uniform_int_distribution<int> step(1, 1000);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x0({8, 64});
    for (auto& v : x0.vec()) v = u(rng);
    const auto eps = gaussian({8, 64}, rng);
    const int t = step(rng);
    const auto back = diffusion::tweedie_x0(diffusion::forward_noise(x0, t, eps, sched), eps, t, sched);
    worst = std::max(worst, rel_diff(back, x0));
  }
  return {worst <= 1e-9, "max rel err " + fmt(worst, 3) + " over 100 triples"};
}

Outcome ddim_consistency(Lab&) {
  const auto sched = diffusion::make_schedule();
  Rng rng(102);
  std::uniform_int_distribution<int> step(1, 1000);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int t = step(rng);
    const int tp = std::uniform_int_distribution<int>(0, t - 1)(rng);
    const auto x0 = gaussian({8, 64}, rng);
    const auto eps = gaussian({8, 64}, rng);
    const auto xt = diffusion::forward_noise(x0, t, eps, sched);
    const auto expect = diffusion::forward_noise(x0, tp, eps, sched);
    worst = std::max(worst, rel_diff(guidance::ddim_step(xt, eps, t, tp, sched, 0.0), expect));
  }
  return {worst <= 1e-9, "max rel err " + fmt(worst, 3) + " over 50 (t, t_prev) pairs"};
}

Outcome guidance_gradient(Lab& lab) {
  auto sc = lab.pairing_synth();
  sc.bulletins = 2;
  const auto corpus = corpus::generate_corpus(sc);
  const auto segs = pipeline::segment_corpus(corpus, lab.desk());
  std::vector<Waveform> clips;
  for (const auto& b : segs)
    for (const auto* side : {&b.x, &b.y})
      for (const auto& s : *side) clips.push_back(pipeline::span_audio(corpus, s.source_id, s.start, s.end));
  encoder::SegmentEncoder enc(lab.desk().encoder);
  Rng rng(103);
  std::uniform_int_distribution<std::size_t> pick_clip(0, clips.size() - 1);
  double worst = 0;
  int checked = 0;
  for (int input = 0; input < 10; ++input) {
    Tensor lat = enc.latent(clips[pick_clip(rng)]).values;
    std::normal_distribution<double> jitter(0, 0.01);
    for (auto& v : lat.vec()) v += jitter(rng);
    const auto dir = enc.embed(clips[pick_clip(rng)]);
    const auto g = encoder::encoder_grad(lat, enc, dir);
    std::uniform_int_distribution<std::size_t> pick(0, lat.size() - 1);
    const double h = 1e-5;
    int here = 0;
    // Coordinates that no max-pool window selects have zero gradient on both
    // sides; draw again until the coordinate carries signal.
    for (int trial = 0; trial < 5000 && here < 10; ++trial) {
      const std::size_t i = pick(rng);
      Tensor lp = lat, lm = lat;
      lp[i] += h;
      lm[i] -= h;
      const double fd = (dot(enc.embed_latent(lp), dir) - dot(enc.embed_latent(lm), dir)) / (2 * h);
      if (std::abs(fd) < 1e-8 && std::abs(g[i]) < 1e-8) continue;
      worst = std::max(worst, std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-6}));
      ++here;
    }
    checked += here;
  }
  return {checked == 100 && worst <= 1e-3,
          "max rel err " + fmt(worst, 3) + " at " + std::to_string(checked) + " coordinates"};
}

Outcome zero_guidance(Lab& lab) {
  const auto& cfg = lab.desk();
  encoder::SegmentEncoder enc(cfg.encoder);
  auto dcfg = pipeline::denoiser_for(cfg.encoder, cfg.denoiser);
  dcfg.latent_scale = 3.0;
  unified::UnifiedDenoiser model(dcfg);
  const auto corpus = corpus::generate_corpus(lab.pairing_synth());
  const auto& s = corpus.bulletins[0].sentences[0];
  const auto src = guidance::source_context(
      pipeline::span_audio(corpus, corpus.bulletins[0].source_id(corpus::Lang::y), s.y_start, s.y_end), enc, dcfg);
  guidance::GuidanceConfig g;
  g.guidance_scale = 0;
  g.ddim_steps = 5;
  int same = 0, runs = 0;
  for (const char* mode : {"uncond-noised", "uncond-clean", "cond-noised", "cond-clean"}) {
    g.mode = mode;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      same += guidance::sample(src, model, enc, g, seed).latent.vec() ==
              guidance::sample_unguided(src, model, g, seed).latent.vec();
      ++runs;
    }
  }
  return {same == runs, std::to_string(same) + "/" + std::to_string(runs) + " bitwise equal (4 modes x 10 seeds)"};
}

Outcome pairing_oracle(Lab& lab) {
  lab.pairing_encoder();
  auto method2 = [&](const PairingRun& r) {
    return evaluation::eval_method2(pipeline::eval_pairs(r.pairs), r.corpus, {}, r.targets);
  };
  std::ostringstream d;
  bool pass = true;
  std::vector<evaluation::PairingMetrics> sweep;
  for (double jitter : {0.0, 0.2, 0.5, 1.0}) {
    auto sc = lab.pairing_synth();
    sc.jitter_sd = jitter;
    sweep.push_back(method2(lab.pair(sc)));
    d << "jitter " << jitter << ": p=" << fmt(sweep.back().precision, 3) << " r=" << fmt(sweep.back().recall, 3)
      << "; ";
  }
  pass &= sweep[0].precision == 1.0 && sweep[0].recall == 1.0;
  for (std::size_t i = 1; i < sweep.size(); ++i)
    pass &= sweep[i].precision <= sweep[i - 1].precision && sweep[i].recall <= sweep[i - 1].recall;
  auto sc = lab.pairing_synth();
  sc.time_scale = 1.04;
  sc.jitter_sd = 0.2;
  const auto m = method2(lab.pair(sc));
  pass &= m.precision >= 0.85 && m.recall >= 0.80;
  d << "time_scale 1.04 + jitter 0.2: p=" << fmt(m.precision, 3) << " r=" << fmt(m.recall, 3)
    << " (need 0.85/0.80)";
  return {pass, d.str()};
}

Outcome method2_dominance(Lab& lab) {
  bool pass = true;
  std::ostringstream d;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto sc = lab.pairing_synth();
    sc.seed = seed;
    sc.time_scale = 1.04;
    sc.jitter_sd = 0.2;
    const auto r = lab.pair(sc);
    const auto ep = pipeline::eval_pairs(r.pairs);
    const evaluation::OracleConfig noisy{0.14, seed};
    const auto m1 = evaluation::eval_method1(ep, r.corpus, noisy, r.targets);
    const auto m2 = evaluation::eval_method2(ep, r.corpus, noisy, r.targets);
    pass &= m2.f_measure >= m1.f_measure;
    d << "seed " << seed << ": F1=" << fmt(m1.f_measure, 3) << " F2=" << fmt(m2.f_measure, 3) << "; ";
  }
  return {pass, d.str()};
}

Outcome length_ordering(Lab& lab) {
  bool pass = true;
  std::ostringstream d;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto sc = lab.pairing_synth();
    sc.seed = seed;
    sc.bulletins = 60;
    sc.jitter_sd = 0.2;
    sc.spillover_rate = 0.3;
    const auto r = lab.pair(sc);
    double l_x = 0;
    std::size_t n = 0;
    for (const auto& b : r.segs)
      for (const auto& s : b.x) {
        l_x += s.duration();
        ++n;
      }
    l_x /= static_cast<double>(n);
    const auto cfg = lab.desk().evaluation;
    std::optional<double> avg, shrt, lng;
    for (const auto& res : evaluation::length_study(pipeline::eval_pairs(r.pairs), r.corpus, {}, l_x,
                                                    cfg.length_study_sample, seed, cfg.length_band)) {
      const double score = res.metrics.mean_bleu;
      if (res.category == evaluation::LengthCategory::average) avg = score;
      if (res.category == evaluation::LengthCategory::short_) shrt = score;
      if (res.category == evaluation::LengthCategory::long_) lng = score;
    }
    const bool ok = avg && shrt && lng && *avg > *shrt && *avg > *lng && *lng < *shrt;
    pass &= ok;
    d << "seed " << seed << ": short=" << (shrt ? fmt(*shrt, 3) : "-") << " average=" << (avg ? fmt(*avg, 3) : "-")
      << " long=" << (lng ? fmt(*lng, 3) : "-") << "; ";
  }
  return {pass, d.str()};
}

Outcome bleu_oracle(Lab&) {
  const double worked = evaluation::bleu({0, 1, 2, 3, 4}, {0, 1, 2, 3, 5});
  const double same = evaluation::bleu({3, 1, 4, 1, 5, 9}, {3, 1, 4, 1, 5, 9});
  const double disjoint = evaluation::bleu({0, 1, 2, 3}, {4, 5, 6, 7});
  return {std::abs(worked - 0.6687) <= 1e-4 && same == 1.0 && disjoint == 0.0,
          "worked=" + fmt(worked, 6) + " identity=" + fmt(same) + " disjoint=" + fmt(disjoint)};
}

Outcome simclr_oracle(Lab& lab) {
  const double e = std::exp(1.0);
  const double l2 = encoder::simclr_loss_from_dots(0.7, {0.7});
  const double l3 = encoder::simclr_loss_from_dots(-1.0, {-1.0, -1.0});
  const double le = encoder::simclr_loss_from_dots(1.0, {0.0, 0.0});
  bool pass = std::abs(l2 - std::log(2.0)) <= 1e-6 && std::abs(l3 - std::log(3.0)) <= 1e-6 &&
              std::abs(le - std::log((e + 2) / e)) <= 1e-6;

  const auto& cfg = lab.desk();
  const auto corpus = corpus::generate_corpus(lab.pairing_synth());
  const auto segs = pipeline::segment_corpus(corpus, cfg);
  std::vector<Waveform> xs, ys;
  for (const auto& b : segs) {
    for (const auto& s : b.x) xs.push_back(pipeline::span_audio(corpus, s.source_id, s.start, s.end));
    for (const auto& s : b.y) ys.push_back(pipeline::span_audio(corpus, s.source_id, s.start, s.end));
  }
  const auto sched = diffusion::make_schedule();
  const std::size_t n = cfg.encoder_train.batch_size;
  double init = 0;
  const int draws = 4;
  for (int d = 0; d < draws; ++d) {
    auto ec = cfg.encoder;
    ec.seed = 200 + static_cast<std::uint64_t>(d);
    encoder::SegmentEncoder enc(ec);
    Rng rng(300 + static_cast<std::uint64_t>(d));
    const auto batch = encoder::sample_batch(xs, ys, n, cfg.encoder_train.noised_fraction, 1000, rng, enc);
    init += encoder::simclr_loss(batch, enc, sched, static_cast<std::uint64_t>(d)) / draws;
  }
  const double target = std::log(static_cast<double>(n - 1));
  pass &= std::abs(init - target) <= 0.2 * target;
  return {pass, "ln2/ln3/ln((e+2)/e) errors " + fmt(std::abs(l2 - std::log(2.0)), 2) + "/" +
                    fmt(std::abs(l3 - std::log(3.0)), 2) + "/" + fmt(std::abs(le - std::log((e + 2) / e)), 2) +
                    "; init loss " + fmt(init) + " vs ln(" + std::to_string(n - 1) + ")=" + fmt(target)};
}

Outcome conditioning(Lab& lab) {
  auto& s = lab.desk_system();
  const auto cmp = unified::compare_conditioning(*s.model, s.test_examples, 12);
  const double mc = mean(cmp.conditional), mu = mean(cmp.unconditional);
  return {mc < mu && cmp.p_value < 0.05 && s.train_seconds <= 7200,
          "held-out " + std::to_string(cmp.conditional.size()) + " pairs: conditional " + fmt(mc, 6) +
              " unconditional " + fmt(mu, 6) + " p=" + fmt(cmp.p_value, 3) + "; training " +
              fmt(s.train_seconds / 60, 3) + " min"};
}

Outcome mode_ordering(Lab& lab) {
  auto& s = lab.desk_system();
  auto g = lab.desk().guidance;
  g.ddim_steps = lab.translation_steps();
  std::vector<std::vector<double>> bleu;
  std::ostringstream d;
  for (const char* mode : {"cond-noised", "cond-clean", "uncond-noised"}) {
    g.mode = mode;
    std::vector<double> b;
    for (const auto& o : pipeline::translate_and_score(s.corpus, s.test_pairs, *s.model, *s.enc, g, 5000))
      b.push_back(o.bleu);
    d << mode << " mean BLEU " << fmt(mean(b), 4) << "; ";
    bleu.push_back(std::move(b));
  }
  bool pass = s.test_pairs.size() >= 200;
  for (std::size_t other : {1, 2}) {
    std::size_t wins = 0, losses = 0;
    for (std::size_t i = 0; i < bleu[0].size(); ++i) {
      wins += bleu[0][i] > bleu[other][i];
      losses += bleu[0][i] < bleu[other][i];
    }
    const double p = evaluation::sign_test_p(wins, losses);
    pass &= p < 0.05;
    d << "vs " << (other == 1 ? "cond-clean" : "uncond-noised") << " " << wins << ":" << losses << " p=" << fmt(p, 3)
      << "; ";
  }
  d << s.test_pairs.size() << " pairs, " << g.ddim_steps << " DDIM steps";
  return {pass, d.str()};
}

Outcome timing_trend(Lab& lab) {
  const auto& cfg = lab.desk();
  encoder::SegmentEncoder enc(cfg.encoder);
  auto dcfg = pipeline::denoiser_for(cfg.encoder, cfg.denoiser);
  dcfg.latent_scale = 3.0;
  unified::UnifiedDenoiser model(dcfg);
  Rng rng(104);
  std::normal_distribution<double> n(0, 0.1);
  auto clip = [&](double seconds) {
    std::vector<double> v(static_cast<std::size_t>(seconds * cfg.encoder.sample_rate));
    for (auto& x : v) x = n(rng);
    return Waveform(std::move(v), cfg.encoder.sample_rate);
  };
  auto time_once = [&](const Waveform& src, int steps) {
    auto g = cfg.guidance;
    g.ddim_steps = steps;
    const auto t0 = Clock::now();
    guidance::translate(src, model, enc, g, 1);
    return seconds_since(t0);
  };
  // Round-robin repeats and the fastest run per condition keep load spikes
  // on a shared machine out of the fit.
  const int repeats = 5;
  auto fastest = [&](const std::vector<Waveform>& srcs, const std::vector<int>& steps) {
    std::vector<double> best(srcs.size(), 1e300);
    for (int r = 0; r < repeats; ++r)
      for (std::size_t i = 0; i < srcs.size(); ++i) best[i] = std::min(best[i], time_once(srcs[i], steps[i]));
    return best;
  };
  const std::vector<int> step_grid = {5, 10, 20, 40};
  std::vector<double> xs(step_grid.begin(), step_grid.end());
  auto ys = fastest(std::vector<Waveform>(step_grid.size(), clip(8.0)), step_grid);
  const auto fit_steps = evaluation::linear_fit(xs, ys);
  std::vector<Waveform> srcs;
  xs.clear();
  for (double seconds : {3.0, 6.0, 9.0, 12.0, 15.0, 18.0}) {
    srcs.push_back(clip(seconds));
    xs.push_back(static_cast<double>(srcs.back().samples.size() / static_cast<std::size_t>(cfg.encoder.stride)));
  }
  ys = fastest(srcs, std::vector<int>(srcs.size(), 10));
  const auto fit_len = evaluation::linear_fit(xs, ys);
  const double m = mean(ys);
  const double spread = fit_len.slope * (xs.back() - xs.front());
  return {fit_steps.r2 >= 0.99 && std::abs(fit_len.slope) < 0.01 * m,
          "steps R2=" + fmt(fit_steps.r2, 5) + " (" + fmt(fit_steps.slope * 1e3, 3) + " ms/step); length slope " +
              fmt(fit_len.slope * 1e6, 3) + " us/frame vs mean " + fmt(m * 1e3, 4) + " ms (change over range " +
              fmt(100 * spread / m, 3) + "%)"};
}

Outcome reproducibility(Lab& lab) {
  auto run = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string bin = lab.cli().string();
    const std::string base = bin + " --preset ci --seed 3 --log-level warn ";
    auto p = [&](const std::string& name) { return (dir / name).string(); };
    const std::vector<std::string> stages = {
        "synth --out " + p("corpus"),
        "segment --corpus " + p("corpus") + " --lang x --out " + p("x.jsonl"),
        "segment --corpus " + p("corpus") + " --lang y --out " + p("y.jsonl"),
        "train-encoder --x " + p("x.jsonl") + " --y " + p("y.jsonl") + " --out " + p("enc.ckpt"),
        "pair --x " + p("x.jsonl") + " --y " + p("y.jsonl") + " --encoder " + p("enc.ckpt") + " --out " +
            p("pairs.jsonl"),
        "train-diffusion --pairs " + p("pairs.jsonl") + " --encoder " + p("enc.ckpt") + " --out " + p("model.ckpt") +
            " --test-out " + p("test.jsonl"),
        "translate --encoder " + p("enc.ckpt") + " --model " + p("model.ckpt") + " --pairs " + p("test.jsonl") +
            " --out-dir " + p("translations"),
        "evaluate --corpus " + p("corpus") + " --pairs " + p("pairs.jsonl") + " --method 2 --study length" +
            " --translations " + p("translations/translations.jsonl") + " --out " + p("report.json"),
    };
    for (const auto& s : stages)
      if (std::system((base + s + " > /dev/null").c_str()) != 0) throw Error("stage failed: " + s);
    return io::read_file(dir / "report.json");
  };
  const auto a = run(lab.work() / "repro_a");
  const auto b = run(lab.work() / "repro_b");
  const auto j = io::Json::parse(a);
  const bool complete = j.contains("pairing") && j.contains("length_study") && j.contains("translation");
  return {complete && a == b, std::string(a == b ? "reports identical" : "reports differ") + " (" +
                                  std::to_string(a.size()) + " bytes)"};
}

struct Gate {
  int id;
  const char* name;
  double budget_s;
  Outcome (*run)(Lab&);
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gates"};
  std::string cli = SEGDIFF_CLI_PATH;
  std::string work = (fs::temp_directory_path() / "segdiff_acceptance").string();
  std::vector<int> only;
  long diffusion_steps = 5000;
  int translation_steps = 50;
  std::string log_level = "info";
  app.add_option("--cli", cli, "Path of the segdiff command-line tool");
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these gates");
  app.add_option("--diffusion-steps", diffusion_steps, "Denoiser training steps for the desk system");
  app.add_option("--translation-steps", translation_steps, "DDIM steps when translating the test pairs");
  app.add_option("--log-level", log_level, "debug, info, warn or error");
  CLI11_PARSE(app, argc, argv);
  if (log_level == "debug") log::threshold() = log::Level::debug;
  else if (log_level == "warn") log::threshold() = log::Level::warn;
  else if (log_level == "error") log::threshold() = log::Level::error;
  else log::threshold() = log::Level::info;

  const std::vector<Gate> gates = {
      {1, "schedule oracle", 1, schedule_oracle},
      {2, "forward/clean-estimate round trip", 1, tweedie_round_trip},
      {3, "DDIM consistency", 1, ddim_consistency},
      {4, "guidance gradient", 30, guidance_gradient},
      {5, "zero-guidance equivalence", 60, zero_guidance},
      {6, "pairing oracle", 600, pairing_oracle},
      {7, "method 2 beats method 1 under a noisy oracle", 600, method2_dominance},
      {8, "segment-length ordering", 600, length_ordering},
      {9, "BLEU oracle", 1, bleu_oracle},
      {10, "contrastive loss oracle", 60, simclr_oracle},
      {11, "conditioning helps the denoiser", 7200, conditioning},
      {12, "translation mode ordering", 3600, mode_ordering},
      {13, "sampling time trend", 600, timing_trend},
      {14, "reproducibility", 10800, reproducibility},
  };
  const std::set<int> selected(only.begin(), only.end());
  Lab lab(pipeline::preset("desk"), cli, work, diffusion_steps, translation_steps);
  int failed = 0;
  for (const auto& g : gates) {
    if (!selected.empty() && !selected.count(g.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = g.run(lab);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double elapsed = seconds_since(t0);
    // The desk system is trained once and shared by gates 11 and 12; gate 12
    // is only charged for sampling.
    const double charged = g.id == 12 ? elapsed - lab.take_build_seconds() : elapsed;
    const bool in_time = charged <= g.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << std::setw(2) << g.id << " " << g.name << ": " << o.detail
              << " [" << fmt(elapsed, 4) << " s" << (in_time ? "" : ", over the " + fmt(g.budget_s) + " s budget")
              << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
