#pragma once

// Acceptance suite. Each criterion returns a pass/fail line plus details;
// nothing here is tuned per outcome, the configuration is pinned up front.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "orient/gradsuite.hpp"
#include "orient/runner.hpp"

namespace orient {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string summary;              // one line
  std::vector<std::string> details;
  double seconds = 0.0;
};

struct AcceptanceSettings {
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;

  // theta convergence / axis recovery: one LOSO fold per seed
  std::size_t theta_image_size = 64;
  std::vector<std::size_t> theta_channels{8, 16, 32, 32};
  std::size_t theta_epochs = 40;
  double theta_lr = 1e-3;
  double theta_lr_multiplier = 20.0;
  int theta_fold = 0;
  double theta_window = 0.15;
  std::size_t theta_required = 4;

  // mis-frozen axis: full LOSO per seed
  std::size_t loso_image_size = 32;
  std::vector<std::size_t> loso_channels{8, 16, 32, 32};
  std::size_t loso_epochs = 40;
  double required_drop = 0.10;

  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path() / "orient_acceptance";
};

using LogFn = std::function<void(const std::string&)>;

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline RunConfig theta_run(const AcceptanceSettings& s, double rho) {
  RunConfig r;
  r.model.variant = Variant::B;
  r.model.input_size = s.theta_image_size;
  r.model.channels = s.theta_channels;
  r.data.image_size = s.theta_image_size;
  r.data.motion_axis = rho;
  r.epochs = s.theta_epochs;
  r.optimizer.lr = s.theta_lr;
  r.theta_lr_multiplier = s.theta_lr_multiplier;
  r.folds = {s.theta_fold};
  return r;
}

// Final theta per seed (one fold each).
inline std::vector<double> final_thetas(const AcceptanceSettings& s, double rho, const LogFn& log) {
  const RunConfig run = theta_run(s, rho);
  DatasetSpec spec = run.data;
  const auto data = generate_dataset(spec);
  std::vector<double> out;
  for (std::size_t k = 0; k < s.seeds; ++k) {
    const RunResult rr = train(run, data, s.base_seed + k);
    const auto& f = rr.folds.front();
    out.push_back(f.diverged || f.final_thetas.empty() ? std::numeric_limits<double>::quiet_NaN() : f.final_thetas[0]);
    if (log) log("    seed " + std::to_string(s.base_seed + k) + ": final theta " + fmt("%.4f", out.back()));
  }
  return out;
}

}  // namespace detail

// 1. gradient correctness
inline CriterionResult criterion_gradients(const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{1, "gradient correctness", true, "", {}, 0.0};
  std::size_t failed = 0;
  const auto entries = run_gradient_suite(0, [&](const SuiteEntry& e) {
    if (log) log("    " + format_suite_row(e));
  });
  for (const auto& e : entries) {
    r.details.push_back(format_suite_row(e));
    if (!e.passed()) {
      ++failed;
      r.passed = false;
    }
  }
  r.seconds = detail::seconds_since(t0);
  if (r.seconds >= 120.0) r.passed = false;
  r.summary = std::to_string(entries.size() - failed) + "/" + std::to_string(entries.size()) +
              " checks within tolerance, " + detail::fmt("%.1fs", r.seconds) + " (limit 120s)";
  return r;
}

// 2. vertical degeneration: SOA at S=0 vs CVA
inline CriterionResult criterion_vertical(const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{2, "vertical degeneration", true, "", {}, 0.0};
  std::mt19937_64 rng(2024);
  std::size_t agree = 0;
  for (int k = 0; k < 10; ++k) {
    std::uniform_int_distribution<std::size_t> dim(2, 9);
    const std::size_t C = 8 * (1 + rng() % 3), H = dim(rng), W = dim(rng), B = 1 + rng() % 3;
    const std::size_t hidden = bottleneck_width(C);
    ParamSet w{{"reduce", Tensor::normal({hidden, C, 1, 1}, rng, 0.0, 0.5)},
               {"expand", Tensor::normal({C, hidden, 1, 1}, rng, 0.0, 0.5)},
               {"bn.gamma", Tensor::uniform({hidden}, rng, 0.5, 1.5)},
               {"bn.beta", Tensor::uniform({hidden}, rng, -0.5, 0.5)}};
    const Tensor probe = Tensor::normal({std::max<std::size_t>(B, 2), C, H, W}, rng);
    const bool ok = soa_equals_cva_at_vertical(w, w, probe, 1e-9);
    agree += ok;
    r.details.push_back("attention probe " + std::to_string(k) + " " + shape_str(probe.shape()) + ": " +
                        (ok ? "agree" : "DIFFER"));
  }

  // Full model: A weights transplanted into a B model with a CVA-layout
  // bottleneck, S forced to 0 and no epsilon in the line means.
  double worst = 0.0;
  bool names_match = true;
  for (int k = 0; k < 3; ++k) {
    ModelConfig ca;
    ca.variant = Variant::A;
    ca.input_size = 32;
    ca.channels = {8, 16, 16, 32};
    ca.seed = 100 + static_cast<std::uint64_t>(k);
    ModelConfig cb = ca;
    cb.variant = Variant::B;
    cb.soa_activation = Activation::hard_swish;
    cb.soa_batchnorm = true;
    cb.oap_epsilon = 0.0;
    ModelState a = build_model(ca), b = build_model(cb);
    for (const auto& [name, value] : b.params) {
      if (name == "theta") continue;
      auto it = a.params.find(name);
      if (it == a.params.end() || it->second.shape() != value.shape()) names_match = false;
    }
    if (a.params.size() + 1 != b.params.size()) names_match = false;
    for (const auto& [name, value] : a.params) b.params[name] = value;
    const Tensor frames = Tensor::normal({3, 1, 32, 32}, rng, 0.0, 0.3);
    for (bool training : {false, true}) {
      ForwardOptions fo;
      fo.training = training;
      fo.forced_step = 0;
      ModelState a2 = a, b2 = b;
      const double d = max_abs_diff(forward(a2, frames, nullptr, fo), forward(b2, frames, nullptr, fo));
      worst = std::max(worst, d);
      r.details.push_back("model logits seed " + std::to_string(ca.seed) + (training ? " (batch stats)" : " (running stats)") +
                          ": max |diff| " + detail::fmt("%.3e", d));
    }
  }
  r.passed = agree == 10 && names_match && worst <= 1e-9;
  r.summary = std::to_string(agree) + "/10 attention probes agree within 1e-9; logits max |diff| " +
              detail::fmt("%.2e", worst) + (names_match ? "" : "; parameter layouts differ");
  r.seconds = detail::seconds_since(t0);
  if (log)
    for (const auto& d : r.details) log("    " + d);
  return r;
}

// 3. theta convergence on vertical data
inline CriterionResult criterion_theta_convergence(const AcceptanceSettings& s, const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{3, "theta convergence", false, "", {}, 0.0};
  const auto finals = detail::final_thetas(s, 0.0, log);
  std::size_t hits = 0;
  std::ostringstream os;
  for (double th : finals) {
    const bool in = std::abs(th - std::numbers::pi / 2) < s.theta_window;
    hits += in;
    os << detail::fmt("%.3f", th) << (in ? "* " : " ");
  }
  r.seconds = detail::seconds_since(t0);
  r.passed = hits >= s.theta_required && r.seconds < 600.0;
  r.summary = std::to_string(hits) + "/" + std::to_string(finals.size()) + " seeds within pi/2 +- " +
              detail::fmt("%.2f", s.theta_window) + " (need " + std::to_string(s.theta_required) + "); finals " +
              os.str() + detail::fmt("; %.0fs (limit 600s)", r.seconds);
  const auto ts = theta_summary(finals);
  r.details.push_back("mean " + detail::fmt("%.4f", ts.mean) + ", std " + detail::fmt("%.4f", ts.std));
  return r;
}

// 4. axis recovery on rho = pi/6 data
inline CriterionResult criterion_axis_recovery(const AcceptanceSettings& s, const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{4, "axis recovery", false, "", {}, 0.0};
  const double rho = std::numbers::pi / 6;
  const auto finals = detail::final_thetas(s, rho, log);
  std::size_t hits = 0;
  std::ostringstream os;
  for (double th : finals) {
    const bool closer = std::abs(th - (std::numbers::pi / 2 - rho)) < std::abs(th - std::numbers::pi / 2);
    hits += closer;
    os << detail::fmt("%.3f", th) << (closer ? "* " : " ");
  }
  r.passed = hits >= s.theta_required;
  r.seconds = detail::seconds_since(t0);
  r.summary = std::to_string(hits) + "/" + std::to_string(finals.size()) +
              " seeds closer to pi/2 - pi/6 than to pi/2 (need " + std::to_string(s.theta_required) + "); finals " +
              os.str();
  return r;
}

// 5. variant D (theta frozen near 0) vs B, full LOSO per seed
inline CriterionResult criterion_frozen_axis(const AcceptanceSettings& s, const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{5, "mis-frozen axis degradation", false, "", {}, 0.0};
  RunConfig run;
  run.model.input_size = s.loso_image_size;
  run.model.channels = s.loso_channels;
  run.data.image_size = s.loso_image_size;
  run.epochs = s.loso_epochs;
  DatasetSpec spec = run.data;
  const auto data = generate_dataset(spec);
  std::vector<double> acc_b, acc_d;
  for (Variant v : {Variant::B, Variant::D}) {
    RunConfig rv = run;
    rv.model.variant = v;
    for (std::size_t k = 0; k < s.seeds; ++k) {
      const RunResult rr = train(rv, data, s.base_seed + k);
      (v == Variant::B ? acc_b : acc_d).push_back(rr.micro_accuracy);
      const std::string line = std::string("variant ") + variant_letter(v) + " seed " +
                               std::to_string(s.base_seed + k) + ": LOSO accuracy " +
                               detail::fmt("%.4f", rr.micro_accuracy) + " (fold mean " +
                               detail::fmt("%.4f", rr.fold_mean_accuracy) + ")";
      r.details.push_back(line);
      if (log) log("    " + line);
    }
  }
  double mb = 0, md = 0;
  for (double v : acc_b) mb += v;
  for (double v : acc_d) md += v;
  mb /= static_cast<double>(acc_b.size());
  md /= static_cast<double>(acc_d.size());
  r.passed = mb - md >= s.required_drop;
  std::string ttest;
  if (acc_b.size() >= 2) {
    const auto t = paired_t_test(acc_b, acc_d);
    ttest = "; paired t " + detail::fmt("%.3f", t.t) + ", p " + detail::fmt("%.4f", t.p_value);
  }
  r.summary = "B " + detail::fmt("%.4f", mb) + " vs D " + detail::fmt("%.4f", md) + ", drop " +
              detail::fmt("%.4f", mb - md) + " (need >= " + detail::fmt("%.2f", s.required_drop) + ")" + ttest;
  r.seconds = detail::seconds_since(t0);
  return r;
}

// 6. parameter accounting
inline CriterionResult criterion_param_counts(const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{6, "parameter accounting", true, "", {}, 0.0};
  ModelConfig cfg;
  std::map<Variant, ParamCounts> counts;
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D}) {
    cfg.variant = v;
    counts[v] = param_count(build_model(cfg));
    r.details.push_back(std::string("variant ") + variant_letter(v) + ": trainable " +
                        std::to_string(counts[v].total.trainable) + ", theta " +
                        std::to_string(counts[v].theta.stored));
  }
  const bool c_plus_3 = counts[Variant::C].total.trainable == counts[Variant::B].total.trainable + 3;
  const bool a_theta = counts[Variant::A].theta.stored == 0 && counts[Variant::A].theta.trainable == 0;
  bool closed_form = true;
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D})
    for (std::size_t i = 0; i < kNumBlocks; ++i) {
      const std::size_t C = cfg.channels[i];
      const std::size_t red = std::max<std::size_t>(8, C / 32);
      const std::size_t expected = 2 * C * (C / red);
      if (counts[v].bottleneck_per_block[i] != expected) {
        closed_form = false;
        r.details.push_back(std::string("variant ") + variant_letter(v) + " block " + std::to_string(i) + ": " +
                            std::to_string(counts[v].bottleneck_per_block[i]) + " != " + std::to_string(expected));
      }
    }
  r.passed = c_plus_3 && a_theta && closed_form;
  r.summary = std::string("C = B + 3: ") + (c_plus_3 ? "yes" : "no") + "; A theta group 0: " +
              (a_theta ? "yes" : "no") + "; bottleneck closed form: " + (closed_form ? "yes" : "no");
  r.seconds = detail::seconds_since(t0);
  if (log)
    for (const auto& d : r.details) log("    " + d);
  return r;
}

// 7. line partition over a theta x (H, W) grid, with brute-force recount
inline CriterionResult criterion_geometry(const LogFn& = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{7, "geometry invariants", true, "", {}, 0.0};
  std::vector<double> thetas;
  for (int k = 1; k < 360; ++k) thetas.push_back(std::numbers::pi * k / 360.0);
  for (double d : {1e-9, 1e-6, 1e-3, 5e-3, 9.9e-3})
    for (double sgn : {-1.0, 1.0}) thetas.push_back(std::numbers::pi / 2 + sgn * d);
  thetas.push_back(std::numbers::pi / 2);
  thetas.push_back(1e-4);
  thetas.push_back(std::numbers::pi - 1e-4);
  std::size_t cases = 0, bad = 0;
  for (double th : thetas)
    for (std::size_t H = 1; H <= 12; ++H)
      for (std::size_t W = 1; W <= 12; ++W) {
        ++cases;
        const auto g = build_orientation(th, H, W);
        bool ok = g.length == g.step * (H - 1) + W && g.counts.size() == g.length;
        std::vector<std::size_t> hits(g.length, 0);
        for (std::size_t i = 0; i < H && ok; ++i)
          for (std::size_t c = 0; c < W; ++c) {
            const std::size_t j = g.line_of(i, c);
            if (j >= g.length) {
              ok = false;
              break;
            }
            ++hits[j];
          }
        std::size_t total = 0;
        for (std::size_t j = 0; ok && j < g.length; ++j) {
          total += g.counts[j];
          if (hits[j] != g.counts[j] || g.counts[j] == 0) ok = false;
        }
        ok = ok && total == H * W;
        if (th == std::numbers::pi / 2) ok = ok && g.step == 0 && g.length == W;
        if (!ok) {
          ++bad;
          if (r.details.size() < 10) {
            r.details.push_back("violation at theta " + detail::fmt("%.6f", th) + ", H " + std::to_string(H) +
                                ", W " + std::to_string(W));
          }
        }
      }
  r.seconds = detail::seconds_since(t0);
  r.passed = bad == 0 && r.seconds < 5.0;
  r.summary = std::to_string(cases - bad) + "/" + std::to_string(cases) + " (theta, H, W) cases hold, " +
              detail::fmt("%.2fs", r.seconds) + " (limit 5s)";
  return r;
}

// 8. two identical train invocations -> identical bytes
inline CriterionResult criterion_determinism(const AcceptanceSettings& s, const LogFn& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r{8, "determinism", true, "", {}, 0.0};
  RunConfig run;
  run.model.variant = Variant::C;
  run.model.input_size = 32;
  run.model.channels = {8, 16, 16, 32};
  run.data.image_size = 32;
  run.data.num_subjects = 4;
  run.data.samples_per_subject = 12;
  run.epochs = 3;
  run.batch_size = 8;
  run.folds = {0, 1};
  run.repeats = 2;
  run.compare_to = Variant::D;
  std::filesystem::remove_all(s.scratch_dir);
  std::vector<std::filesystem::path> dirs{s.scratch_dir / "first", s.scratch_dir / "second"};
  for (const auto& d : dirs) {
    RunConfig rd = run;
    rd.output_dir = d.string();
    run_training(rd);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dirs[0]);
    const auto ext = rel.extension();
    if (rel.filename() == "config.echo.json") continue;  // differs only in output_dir
    if (ext != ".csv" && ext != ".fslt" && ext != ".json") continue;
    ++compared;
    const auto other = dirs[1] / rel;
    if (!std::filesystem::exists(other) || read_text(entry.path()) != read_text(other)) {
      ++differing;
      r.details.push_back("differs: " + rel.string());
    }
  }
  std::filesystem::remove_all(s.scratch_dir);
  r.passed = differing == 0 && compared > 0;
  r.summary = std::to_string(compared - differing) + "/" + std::to_string(compared) +
              " metrics/checkpoint/summary files byte-identical across two runs";
  r.seconds = detail::seconds_since(t0);
  if (log)
    for (const auto& d : r.details) log("    " + d);
  return r;
}

inline std::string format_criterion(const CriterionResult& c) {
  return std::string(c.passed ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " (" + c.name +
         "): " + c.summary;
}

inline std::vector<CriterionResult> run_acceptance(const std::set<int>& which, const AcceptanceSettings& s = {},
                                                   const LogFn& log = {},
                                                   const std::function<void(const CriterionResult&)>& on_result = {}) {
  std::vector<CriterionResult> out;
  auto done = [&](CriterionResult c) {
    if (on_result) on_result(c);
    out.push_back(std::move(c));
  };
  for (int id : which) {
    if (log) log("criterion " + std::to_string(id) + " ...");
    switch (id) {
      case 1: done(criterion_gradients(log)); break;
      case 2: done(criterion_vertical(log)); break;
      case 3: done(criterion_theta_convergence(s, log)); break;
      case 4: done(criterion_axis_recovery(s, log)); break;
      case 5: done(criterion_frozen_axis(s, log)); break;
      case 6: done(criterion_param_counts(log)); break;
      case 7: done(criterion_geometry(log)); break;
      case 8: done(criterion_determinism(s, log)); break;
      default: throw std::invalid_argument("no acceptance criterion " + std::to_string(id));
    }
  }
  return out;
}

}  // namespace orient
