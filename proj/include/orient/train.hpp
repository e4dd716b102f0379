#pragma once

// LOSO training harness: per-fold model construction, mini-batch Adam/SGD on
// cross-entropy, per-epoch metrics with theta trajectories, best-validation
// checkpointing and fold aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "orient/metrics.hpp"
#include "orient/model.hpp"
#include "orient/optim.hpp"
#include "orient/synth.hpp"

namespace orient {

struct RunConfig {
  ModelConfig model;
  DatasetSpec data;
  OptimizerConfig optimizer;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double theta_lr_multiplier = 5.0;
  std::size_t theta_warmup_epochs = 0;  // theta held fixed for the first epochs
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  bool validation = true;        // hold out one training subject for checkpoint selection
  std::vector<int> folds;        // test subjects to run; empty = all
  std::size_t repeats = 1;       // seeds seed, seed+1, ...
  std::optional<Variant> compare_to;  // second variant trained on the same seeds, paired t-test
  std::size_t jobs = 1;

  void validate() const {
    model.validate();
    data.validate();
    optimizer.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (batch statistics)");
    if (!(theta_lr_multiplier >= 0.0)) throw std::invalid_argument("theta_lr_multiplier must be >= 0");
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    if (model.input_size != data.image_size) {
      throw std::invalid_argument("model.input_size " + std::to_string(model.input_size) + " != data.image_size " +
                                  std::to_string(data.image_size));
    }
    if (model.num_classes != data.num_classes) {
      throw std::invalid_argument("model.num_classes " + std::to_string(model.num_classes) + " != data.num_classes " +
                                  std::to_string(data.num_classes));
    }
    for (int f : folds)
      if (f < 0 || static_cast<std::size_t>(f) >= data.num_subjects) {
        throw std::invalid_argument("folds: subject " + std::to_string(f) + " does not exist");
      }
  }
};

struct MetricsRecord {
  int fold = 0;
  std::size_t epoch = 0;
  std::string split;  // train | val | test | diverged
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> thetas;
};

struct FoldResult {
  int fold = 0;
  int test_subject = 0;
  std::optional<int> val_subject;
  bool diverged = false;
  std::string diagnostic;
  std::size_t best_epoch = 0;
  ClassificationMetrics test;  // at the selected checkpoint
  std::vector<int> predictions, labels;
  std::vector<double> final_thetas;
  ModelState checkpoint;
  std::vector<MetricsRecord> history;
};

struct RunResult {
  Variant variant = Variant::B;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  double micro_accuracy = 0.0;
  double micro_macro_f1 = 0.0;
  double fold_mean_accuracy = 0.0;
  double fold_mean_macro_f1 = 0.0;
  std::size_t completed_folds = 0;

  std::vector<MetricsRecord> records() const {
    std::vector<MetricsRecord> out;
    for (const auto& f : folds) out.insert(out.end(), f.history.begin(), f.history.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor frames;                 // [B,1,H,W]
  std::optional<Tensor> au;      // [B,21]
  std::vector<int> labels;
};

inline Batch make_batch(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end, bool with_au) {
  const std::size_t B = end - begin;
  const Shape& s = data[idx[begin]].difference.shape();
  const std::size_t H = s[1], W = s[2];
  std::vector<double> frames;
  frames.reserve(B * H * W);
  std::vector<double> au;
  Batch b;
  for (std::size_t k = begin; k < end; ++k) {
    const auto& smp = data[idx[k]];
    const auto d = smp.difference.data();
    frames.insert(frames.end(), d.begin(), d.end());
    if (with_au)
      for (auto bit : smp.au_bits) au.push_back(bit);
    b.labels.push_back(smp.label);
  }
  b.frames = Tensor({B, 1, H, W}, std::move(frames));
  if (with_au) b.au = Tensor({B, kAuLength}, std::move(au));
  return b;
}

// Batch boundaries; a trailing batch of one sample joins the previous batch
// so batch statistics are always defined.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (std::size_t b = 0; b < n; b += batch_size) r.emplace_back(b, std::min(n, b + batch_size));
  if (r.size() > 1 && r.back().second - r.back().first == 1) {
    r[r.size() - 2].second = r.back().second;
    r.pop_back();
  }
  return r;
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  const std::size_t K = logits.dim(1);
  for (std::size_t n = 0; n < logits.dim(0); ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits.at(n, k) > logits.at(n, best)) best = k;
    out[n] = static_cast<int>(best);
  }
  return out;
}

struct Evaluation {
  ClassificationMetrics metrics;
  double loss = 0.0;
  std::vector<int> predictions, labels;
};

// Inference-mode metrics over the given samples.
inline Evaluation evaluate(ModelState& model, const std::vector<SyntheticSample>& data,
                           const std::vector<std::size_t>& idx, std::size_t batch_size = 64) {
  if (idx.empty()) throw std::invalid_argument("evaluate: empty sample set");
  Evaluation ev;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::size_t e = std::min(idx.size(), b + batch_size);
    Batch batch = make_batch(data, idx, b, e, model.config.use_au);
    const Tensor logits = forward(model, batch.frames, batch.au ? &*batch.au : nullptr);
    loss_sum += cross_entropy(logits, batch.labels) * static_cast<double>(e - b);
    const auto pred = argmax_rows(logits);
    ev.predictions.insert(ev.predictions.end(), pred.begin(), pred.end());
    ev.labels.insert(ev.labels.end(), batch.labels.begin(), batch.labels.end());
  }
  ev.loss = loss_sum / static_cast<double>(idx.size());
  ev.metrics = classification_metrics(ev.predictions, ev.labels, model.config.num_classes);
  return ev;
}

inline Evaluation evaluate(ModelState& model, const std::vector<SyntheticSample>& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return evaluate(model, data, idx);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct TrainStep {
  double loss = 0.0;
  std::vector<int> predictions;
  std::string bad_gradient;  // first parameter with a non-finite gradient
};

inline TrainStep train_step(ModelState& model, Optimizer& opt, const Batch& batch) {
  ad::Graph g;
  VarMap vars = bind_params(g, model.params, model.frozen);
  ForwardOptions fo;
  fo.training = true;
  ForwardTrace trace = forward_graph(g, model, vars, batch.frames, batch.au ? &*batch.au : nullptr, fo);
  ad::Var loss = ad::cross_entropy(g, trace.logits, batch.labels);
  TrainStep out;
  out.loss = g.value(loss).item();
  out.predictions = argmax_rows(g.value(trace.logits));
  if (!std::isfinite(out.loss)) return out;
  auto grads = g.backward(loss);
  // ReLU and max-pool can hide a NaN from the loss while it still reaches
  // the gradients; never let it into the weights.
  for (const auto& [name, t] : grads)
    if (!t.all_finite()) {
      out.bad_gradient = name;
      return out;
    }
  opt.step(model.params, grads);
  return out;
}

inline FoldResult train_fold(const RunConfig& run, const std::vector<SyntheticSample>& data, const LosoFold& fold,
                             int fold_index, std::uint64_t seed) {
  FoldResult res;
  res.fold = fold_index;
  res.test_subject = fold.test_subject;

  std::vector<std::size_t> train_idx = fold.train_indices, val_idx;
  if (run.validation && fold.train_subjects.size() >= 2) {
    // Next subject id after the test subject, wrapping around.
    auto it = std::upper_bound(fold.train_subjects.begin(), fold.train_subjects.end(), fold.test_subject);
    const int val = it == fold.train_subjects.end() ? fold.train_subjects.front() : *it;
    res.val_subject = val;
    train_idx.clear();
    for (std::size_t i : fold.train_indices) (data[i].subject == val ? val_idx : train_idx).push_back(i);
  }

  ModelConfig mc = run.model;
  mc.seed = mix_seed(seed, static_cast<std::uint64_t>(fold.test_subject));
  ModelState model = build_model(mc);

  std::map<std::string, double> mult;
  std::set<std::string> no_decay;
  for (const auto& n : model.theta_names()) {
    mult[n] = run.theta_lr_multiplier;
    no_decay.insert(n);
  }
  Optimizer opt(run.optimizer, mult, no_decay);
  std::mt19937_64 shuffle_rng(mix_seed(seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(fold.test_subject)));

  std::optional<double> best_acc, best_loss;
  res.checkpoint = model;
  const auto ranges = batch_ranges(train_idx.size(), run.batch_size);

  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    for (const auto& n : model.theta_names())
      opt.set_multiplier(n, epoch <= run.theta_warmup_epochs ? 0.0 : run.theta_lr_multiplier);
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::vector<int> preds, labels;
    for (const auto& [b, e] : ranges) {
      Batch batch = make_batch(data, train_idx, b, e, mc.use_au);
      TrainStep st = train_step(model, opt, batch);
      if (!std::isfinite(st.loss) || !st.bad_gradient.empty()) {
        res.diverged = true;
        res.diagnostic = st.bad_gradient.empty()
                             ? "non-finite training loss at epoch " + std::to_string(epoch)
                             : "non-finite gradient for '" + st.bad_gradient + "' at epoch " + std::to_string(epoch);
        res.history.push_back({fold_index, epoch, "diverged", st.loss, 0.0, 0.0, model.thetas()});
        res.final_thetas = model.thetas();
        return res;
      }
      loss_sum += st.loss * static_cast<double>(e - b);
      preds.insert(preds.end(), st.predictions.begin(), st.predictions.end());
      labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    }
    const auto thetas = model.thetas();
    const auto tm = classification_metrics(preds, labels, mc.num_classes);
    res.history.push_back({fold_index, epoch, "train", loss_sum / static_cast<double>(train_idx.size()), tm.accuracy,
                           tm.macro_f1, thetas});

    bool improved = true;
    if (!val_idx.empty()) {
      const Evaluation ve = evaluate(model, data, val_idx);
      res.history.push_back({fold_index, epoch, "val", ve.loss, ve.metrics.accuracy, ve.metrics.macro_f1, thetas});
      improved = !best_acc || ve.metrics.accuracy > *best_acc ||
                 (ve.metrics.accuracy == *best_acc && ve.loss < *best_loss);
      if (improved) {
        best_acc = ve.metrics.accuracy;
        best_loss = ve.loss;
      }
    }
    const Evaluation te = evaluate(model, data, fold.test_indices);
    res.history.push_back({fold_index, epoch, "test", te.loss, te.metrics.accuracy, te.metrics.macro_f1, thetas});
    if (improved) {
      res.best_epoch = epoch;
      res.checkpoint = model;
      res.test = te.metrics;
      res.predictions = te.predictions;
      res.labels = te.labels;
    }
  }
  res.final_thetas = model.thetas();
  return res;
}

inline std::vector<LosoFold> selected_folds(const RunConfig& run, const std::vector<SyntheticSample>& data) {
  auto all = loso_folds(data);
  if (run.folds.empty()) return all;
  std::vector<LosoFold> out;
  for (auto& f : all)
    if (std::find(run.folds.begin(), run.folds.end(), f.test_subject) != run.folds.end()) out.push_back(f);
  return out;
}

// One seed of one variant over the selected LOSO folds. Folds run on up to
// run.jobs threads; results are merged in fold order.
inline RunResult train(const RunConfig& run, const std::vector<SyntheticSample>& data, std::uint64_t seed) {
  run.validate();
  const auto folds = selected_folds(run, data);
  RunResult rr;
  rr.variant = run.model.variant;
  rr.seed = seed;
  rr.folds.resize(folds.size());
  auto job = [&](std::size_t i) { rr.folds[i] = train_fold(run, data, folds[i], static_cast<int>(i), seed); };
  if (run.jobs <= 1) {
    for (std::size_t i = 0; i < folds.size(); ++i) job(i);
  } else {
    for (std::size_t start = 0; start < folds.size(); start += run.jobs) {
      std::vector<std::future<void>> pending;
      for (std::size_t i = start; i < std::min(folds.size(), start + run.jobs); ++i)
        pending.push_back(std::async(std::launch::async, job, i));
      for (auto& p : pending) p.get();
    }
  }

  std::vector<int> preds, labels;
  for (const auto& f : rr.folds) {
    if (f.diverged) continue;
    ++rr.completed_folds;
    preds.insert(preds.end(), f.predictions.begin(), f.predictions.end());
    labels.insert(labels.end(), f.labels.begin(), f.labels.end());
    rr.fold_mean_accuracy += f.test.accuracy;
    rr.fold_mean_macro_f1 += f.test.macro_f1;
  }
  if (rr.completed_folds) {
    const auto m = classification_metrics(preds, labels, run.model.num_classes);
    rr.micro_accuracy = m.accuracy;
    rr.micro_macro_f1 = m.macro_f1;
    rr.fold_mean_accuracy /= static_cast<double>(rr.completed_folds);
    rr.fold_mean_macro_f1 /= static_cast<double>(rr.completed_folds);
  }
  return rr;
}

inline RunResult train(const RunConfig& run, std::uint64_t seed) {
  DatasetSpec spec = run.data;
  return train(run, generate_dataset(spec), seed);
}

// Final theta values of every completed fold, per theta parameter.
inline std::vector<std::vector<double>> final_thetas_by_param(const std::vector<RunResult>& runs) {
  std::vector<std::vector<double>> out;
  for (const auto& r : runs)
    for (const auto& f : r.folds) {
      if (f.diverged) continue;
      if (out.size() < f.final_thetas.size()) out.resize(f.final_thetas.size());
      for (std::size_t i = 0; i < f.final_thetas.size(); ++i) out[i].push_back(f.final_thetas[i]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Theta sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double theta = 0.0;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
};

// Frozen-theta models (variant D layout) at each grid value, averaged over
// run.repeats seeds of micro LOSO accuracy.
inline std::vector<SweepRow> sweep_theta(const RunConfig& run, const std::vector<SyntheticSample>& data,
                                         const std::vector<double>& grid) {
  std::vector<SweepRow> rows;
  for (double theta : grid) {
    if (!(theta > 0.0 && theta < std::numbers::pi)) {
      throw std::invalid_argument("sweep-theta: grid value " + std::to_string(theta) + " outside (0, pi)");
    }
    RunConfig r = run;
    r.model.variant = Variant::D;
    r.model.frozen_theta = theta;
    SweepRow row{theta, 0.0, 0.0};
    for (std::size_t k = 0; k < run.repeats; ++k) {
      const RunResult rr = train(r, data, run.seed + k);
      row.mean_accuracy += rr.micro_accuracy;
      row.mean_macro_f1 += rr.micro_macro_f1;
    }
    row.mean_accuracy /= static_cast<double>(run.repeats);
    row.mean_macro_f1 /= static_cast<double>(run.repeats);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader = "fold,epoch,split,loss,acc,macro_f1,theta_0,theta_1,theta_2,theta_3";

inline std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : records) {
    os << r.fold << ',' << r.epoch << ',' << r.split << ',' << format_number(r.loss) << ','
       << format_number(r.accuracy) << ',' << format_number(r.macro_f1);
    for (std::size_t i = 0; i < 4; ++i) {
      os << ',';
      if (i < r.thetas.size()) os << format_number(r.thetas[i]);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "theta,mean_acc,mean_f1\n";
  for (const auto& r : rows)
    os << format_number(r.theta) << ',' << format_number(r.mean_accuracy) << ',' << format_number(r.mean_macro_f1)
       << '\n';
  return os.str();
}

}  // namespace orient
