#pragma once

// `train` end to end: config echo, per-seed metrics CSVs, best-val
// checkpoints per fold and summary.json, all under run.output_dir.
//
//   <out>/config.echo.json
//   <out>/summary.json
//   <out>/<variant>/seed_<s>/metrics.csv
//   <out>/<variant>/seed_<s>/fold_<k>.{fslt,json}

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "orient/io.hpp"

namespace orient {

struct VariantRuns {
  Variant variant = Variant::B;
  std::vector<RunResult> runs;  // one per seed

  std::vector<double> micro_accuracies() const {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.micro_accuracy);
    return out;
  }
  double mean_micro_accuracy() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.micro_accuracy;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
  }
};

struct RunArtifacts {
  std::vector<VariantRuns> variants;
  std::optional<PairedTTest> t_test;  // first variant minus compare_to, micro accuracy per seed
  json summary;
};

inline json theta_json(const ModelState& proto, const std::vector<RunResult>& runs) {
  const auto names = proto.theta_names();
  const auto per = final_thetas_by_param(runs);
  json j{{"per_parameter", json::array()}};
  std::vector<double> pooled;
  for (std::size_t i = 0; i < per.size(); ++i) {
    const auto s = theta_summary(per[i]);
    j["per_parameter"].push_back(
        {{"name", i < names.size() ? names[i] : "theta_" + std::to_string(i)}, {"mean", s.mean}, {"std", s.std}, {"finals", s.finals}});
    pooled.insert(pooled.end(), per[i].begin(), per[i].end());
  }
  if (!pooled.empty()) {
    const auto s = theta_summary(pooled);
    j["pooled"] = {{"mean", s.mean}, {"std", s.std}};
  }
  return j;
}

inline json run_json(const RunResult& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json fj{{"fold", f.fold},
            {"test_subject", f.test_subject},
            {"val_subject", f.val_subject ? json(*f.val_subject) : json(nullptr)},
            {"diverged", f.diverged},
            {"final_thetas", f.final_thetas}};
    if (f.diverged) {
      fj["diagnostic"] = f.diagnostic;
    } else {
      fj["best_epoch"] = f.best_epoch;
      fj["accuracy"] = f.test.accuracy;
      fj["macro_f1"] = f.test.macro_f1;
      fj["samples"] = f.labels.size();
    }
    folds.push_back(std::move(fj));
  }
  return json{{"seed", r.seed},
              {"micro_accuracy", r.micro_accuracy},
              {"micro_macro_f1", r.micro_macro_f1},
              {"fold_mean_accuracy", r.fold_mean_accuracy},
              {"fold_mean_macro_f1", r.fold_mean_macro_f1},
              {"completed_folds", r.completed_folds},
              {"folds", folds}};
}

inline json variant_json(const RunConfig& run, const VariantRuns& v) {
  json runs = json::array();
  double acc = 0, f1 = 0, facc = 0, ff1 = 0;
  for (const auto& r : v.runs) {
    runs.push_back(run_json(r));
    acc += r.micro_accuracy;
    f1 += r.micro_macro_f1;
    facc += r.fold_mean_accuracy;
    ff1 += r.fold_mean_macro_f1;
  }
  const double n = static_cast<double>(v.runs.size());
  ModelConfig mc = run.model;
  mc.variant = v.variant;
  json j{{"variant", std::string(1, variant_letter(v.variant))},
         {"mean_micro_accuracy", acc / n},
         {"mean_micro_macro_f1", f1 / n},
         {"mean_fold_accuracy", facc / n},
         {"mean_fold_macro_f1", ff1 / n},
         {"runs", runs}};
  if (mc.variant != Variant::A) {
    ModelState proto;
    proto.config = mc;
    bool any = false;
    for (const auto& r : v.runs)
      for (const auto& f : r.folds) any = any || !f.diverged;
    if (any) j["theta"] = theta_json(proto, v.runs);
  }
  return j;
}

using ProgressFn = std::function<void(const std::string&)>;

// Trains run.model.variant (and run.compare_to) for seeds seed..seed+repeats-1
// on the configured synthetic data and writes every artifact.
inline RunArtifacts run_training(const RunConfig& run, const ProgressFn& progress = {}) {
  run.validate();
  const fs::path out = run.output_dir;
  create_fresh_dir(out);
  write_text(out / "config.echo.json", canonical_dump(run_to_json(run)));

  DatasetSpec spec = run.data;
  const auto data = generate_dataset(spec);

  std::vector<Variant> variants{run.model.variant};
  if (run.compare_to && *run.compare_to != run.model.variant) variants.push_back(*run.compare_to);

  RunArtifacts art;
  for (Variant v : variants) {
    RunConfig rv = run;
    rv.model.variant = v;
    VariantRuns vr{v, {}};
    for (std::size_t k = 0; k < run.repeats; ++k) {
      const std::uint64_t seed = run.seed + k;
      if (progress) progress(std::string("variant ") + variant_letter(v) + " seed " + std::to_string(seed));
      RunResult rr = train(rv, data, seed);
      const fs::path dir = out / std::string(1, variant_letter(v)) / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      write_text(dir / "metrics.csv", metrics_csv(rr.records()));
      for (const auto& f : rr.folds)
        if (!f.diverged) save_checkpoint(dir / ("fold_" + std::to_string(f.test_subject)), f.checkpoint);
      if (progress) {
        progress("  micro acc " + format_number(rr.micro_accuracy) + ", fold-mean acc " +
                 format_number(rr.fold_mean_accuracy));
      }
      vr.runs.push_back(std::move(rr));
    }
    art.variants.push_back(std::move(vr));
  }

  json summary{{"variants", json::array()}};
  for (const auto& v : art.variants) summary["variants"].push_back(variant_json(run, v));
  if (art.variants.size() == 2 && run.repeats >= 2) {
    art.t_test = paired_t_test(art.variants[0].micro_accuracies(), art.variants[1].micro_accuracies());
    summary["t_test"] = {{"metric", "micro_accuracy"},
                         {"a", std::string(1, variant_letter(art.variants[0].variant))},
                         {"b", std::string(1, variant_letter(art.variants[1].variant))},
                         {"n", art.t_test->n},
                         {"mean_difference", art.t_test->mean_difference},
                         {"t", art.t_test->t},
                         {"df", art.t_test->degrees_of_freedom},
                         {"p_value", art.t_test->p_value}};
  }
  art.summary = summary;
  write_text(out / "summary.json", canonical_dump(summary));
  return art;
}

}  // namespace orient
