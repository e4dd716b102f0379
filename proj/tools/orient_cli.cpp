// orient_cli: data generation, training, evaluation and verification.
// Exit codes: 0 success, 1 verification/gradient failure or runtime error,
// 2 usage or configuration error.

#include <cstdio>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orient/orient.hpp"

using namespace orient;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void add_config_options(CLI::App* cmd, Common& c, bool required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "JSON run configuration");
  if (required) opt->required();
  cmd->add_option("-s,--set", c.overrides, "dotted override key.path=value (repeatable)");
}

RunConfig load_run(const Common& c) {
  if (c.config.empty()) return parse_config(json::object(), c.overrides);
  if (!std::filesystem::exists(c.config)) throw UsageError("config file '" + c.config + "' does not exist");
  return parse_config_file(c.config, c.overrides);
}

std::vector<SyntheticSample> dataset_for(const std::string& data_dir, const RunConfig& run) {
  if (!data_dir.empty()) return load_dataset(data_dir).samples;
  DatasetSpec spec = run.data;
  return generate_dataset(spec);
}

void print_metrics(const Evaluation& ev, std::size_t K) {
  std::printf("samples   %zu\n", ev.labels.size());
  std::printf("loss      %.6f\n", ev.loss);
  std::printf("accuracy  %.6f\n", ev.metrics.accuracy);
  std::printf("macro_f1  %.6f\n", ev.metrics.macro_f1);
  std::printf("confusion (rows true, cols predicted)\n");
  for (std::size_t i = 0; i < K; ++i) {
    std::printf("  ");
    for (std::size_t j = 0; j < K; ++j) std::printf("%5zu", ev.metrics.confusion[i][j]);
    std::printf("\n");
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--grid: '" + item + "' is not a number");
    }
  }
  if (grid.empty()) throw UsageError("--grid is empty");
  return grid;
}

std::set<int> parse_criteria(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        out.insert(std::stoi(item));
      } else {
        for (int k = std::stoi(item.substr(0, dash)); k <= std::stoi(item.substr(dash + 1)); ++k) out.insert(k);
      }
    } catch (const std::exception&) {
      throw UsageError("--criteria: cannot parse '" + item + "'");
    }
  }
  for (int k : out)
    if (k < 1 || k > 8) throw UsageError("--criteria: no criterion " + std::to_string(k));
  return out;
}

// CSV rows block_index,channel,line_index,value. SOA blocks report the
// dominant branch (lambda < 0.5 -> floor(s), else floor(s)+1) before chaining.
std::string attention_csv(ModelState& model, const SyntheticSample& sample) {
  ad::Graph g;
  VarMap vars = bind_params(g, model.params, model.frozen);
  const auto d = sample.difference.data();
  const std::size_t N = sample.difference.dim(1);
  Tensor frames({1, 1, N, N}, std::vector<double>(d.begin(), d.end()));
  std::optional<Tensor> au;
  if (model.config.use_au) {
    au = Tensor({1, kAuLength});
    for (std::size_t i = 0; i < kAuLength; ++i) (*au)[i] = sample.au_bits[i];
  }
  const ForwardTrace t = forward_graph(g, model, vars, frames, au ? &*au : nullptr);
  std::ostringstream os;
  os << "block_index,channel,line_index,value\n";
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    Tensor a;
    if (model.config.uses_soa()) {
      const SoaOutput& s = t.soa[b];
      const std::size_t pick = s.branches.size() == 2 && s.lambda >= 0.5 ? 1 : 0;
      a = g.value(s.branches[pick].attention);
    } else {
      a = g.value(t.cva[b].attention);
    }
    for (std::size_t c = 0; c < a.dim(1); ++c)
      for (std::size_t j = 0; j < a.dim(3); ++j)
        os << b << ',' << c << ',' << j << ',' << format_number(a.at(0, c, 0, j)) << '\n';
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orientation-aware attention: synthetic data, training and verification"};
  app.require_subcommand(1);

  Common common;
  int jobs = 0;
  std::string checkpoint, data_dir, grid_text = "0.01,0.7853981633974483,1.5707963267948966,2.356194490192345";
  std::string criteria_text = "1-6";
  std::size_t sample_index = 0;
  std::vector<int> subjects;

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "run the gradient verification suite");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset (FSLT per subject + manifest.json)");
  add_config_options(gen, common, true);
  gen->add_option("-o,--out", common.out, "dataset directory (default <output_dir>/data)");

  auto* train_cmd = app.add_subcommand("train", "LOSO training; writes metrics CSV, summary.json and checkpoints");
  add_config_options(train_cmd, common, true);
  train_cmd->add_option("-o,--out", common.out, "output directory (overrides output_dir)");
  train_cmd->add_option("-j,--jobs", jobs, "folds trained in parallel")->check(CLI::PositiveNumber);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_config_options(eval_cmd, common, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem, .json or .fslt")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory (default: generate from config)");
  eval_cmd->add_option("--subjects", subjects, "restrict to these subject ids");

  auto* sweep = app.add_subcommand("sweep-theta", "accuracy of frozen-theta models over a grid");
  add_config_options(sweep, common, true);
  sweep->add_option("--grid", grid_text, "comma-separated radians in (0, pi)");
  sweep->add_option("-o,--out", common.out, "CSV path (default stdout)");

  auto* pc = app.add_subcommand("param-count", "per-group parameter counts for variants A-D");
  add_config_options(pc, common, false);

  auto* dump = app.add_subcommand("dump-attn", "write attention vectors of one sample as CSV");
  add_config_options(dump, common, false);
  dump->add_option("--checkpoint", checkpoint, "checkpoint stem, .json or .fslt")->required();
  dump->add_option("--data", data_dir, "dataset directory (default: generate from config)");
  dump->add_option("--sample", sample_index, "sample index");
  dump->add_option("-o,--out", common.out, "CSV path (default stdout)");

  auto* verify = app.add_subcommand("verify", "run the acceptance criteria and print pass/fail per criterion");
  verify->add_option("--criteria", criteria_text, "criteria to run, e.g. 1-6 or 1,2,7");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gradcheck_cmd->parsed()) {
      bool ok = true;
      for (const auto& e : run_gradient_suite(0)) {
        std::cout << format_suite_row(e) << '\n';
        ok = ok && e.passed();
      }
      return ok ? kExitOk : kExitFailure;
    }

    if (gen->parsed()) {
      const RunConfig run = load_run(common);
      const std::string dir = common.out.empty() ? run.output_dir + "/data" : common.out;
      DatasetSpec spec = run.data;
      const auto data = generate_dataset(spec);
      save_dataset(dir, spec, data);
      std::cout << "wrote " << data.size() << " samples to " << dir << '\n';
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      if (!common.out.empty()) common.overrides.push_back("output_dir=\"" + common.out + "\"");
      if (jobs > 0) common.overrides.push_back("jobs=" + std::to_string(jobs));
      const RunConfig run = load_run(common);
      const auto art = run_training(run, [](const std::string& m) { std::cout << m << std::endl; });
      for (const auto& v : art.variants)
        std::cout << "variant " << variant_letter(v.variant) << ": mean micro accuracy "
                  << format_number(v.mean_micro_accuracy()) << '\n';
      if (art.t_test)
        std::cout << "paired t-test: t " << format_number(art.t_test->t) << ", p " << format_number(art.t_test->p_value)
                  << '\n';
      std::cout << "artifacts in " << run.output_dir << '\n';
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      const RunConfig run = load_run(common);
      ModelState model = load_checkpoint(checkpoint);
      const auto data = dataset_for(data_dir, run);
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (subjects.empty() || std::find(subjects.begin(), subjects.end(), data[i].subject) != subjects.end())
          idx.push_back(i);
      const Evaluation ev = evaluate(model, data, idx);
      print_metrics(ev, model.config.num_classes);
      return kExitOk;
    }

    if (sweep->parsed()) {
      const RunConfig run = load_run(common);
      const auto grid = parse_grid(grid_text);
      DatasetSpec spec = run.data;
      const auto rows = sweep_theta(run, generate_dataset(spec), grid);
      const std::string csv = sweep_csv(rows);
      if (common.out.empty()) std::cout << csv;
      else write_text(common.out, csv);
      return kExitOk;
    }

    if (pc->parsed()) {
      const RunConfig run = load_run(common);
      std::printf("%-8s %12s %12s %12s %8s %8s %12s\n", "variant", "preprocess", "blocks", "bottlenecks", "theta",
                  "head", "trainable");
      for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D}) {
        ModelConfig cfg = run.model;
        cfg.variant = v;
        const ParamCounts c = param_count(build_model(cfg));
        std::printf("%-8c %12zu %12zu %12zu %8zu %8zu %12zu\n", variant_letter(v), c.preprocess.trainable,
                    c.blocks.trainable, c.bottlenecks.trainable, c.theta.trainable, c.head.trainable,
                    c.total.trainable);
      }
      return kExitOk;
    }

    if (dump->parsed()) {
      const RunConfig run = load_run(common);
      ModelState model = load_checkpoint(checkpoint);
      const auto data = dataset_for(data_dir, run);
      if (sample_index >= data.size()) {
        throw UsageError("--sample " + std::to_string(sample_index) + " out of range (" +
                         std::to_string(data.size()) + " samples)");
      }
      const std::string csv = attention_csv(model, data[sample_index]);
      if (common.out.empty()) std::cout << csv;
      else write_text(common.out, csv);
      return kExitOk;
    }

    if (verify->parsed()) {
      const auto which = parse_criteria(criteria_text);
      std::vector<int> failed;
      run_acceptance(
          which, AcceptanceSettings{}, [](const std::string& m) { std::cerr << m << std::endl; },
          [&](const CriterionResult& c) {
            std::cout << format_criterion(c) << std::endl;
            if (!c.passed) failed.push_back(c.id);
          });
      if (!failed.empty()) {
        std::cout << "failed criteria:";
        for (int id : failed) std::cout << ' ' << id;
        std::cout << '\n';
        return kExitFailure;
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
