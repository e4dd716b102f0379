#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "orient/autodiff.hpp"

namespace orient {

using ParamSet = std::map<std::string, Tensor>;

// Builds a scalar loss from the given parameter values. Must be
// deterministic: it is re-run for every perturbed coordinate.
using GraphBuilder = std::function<ad::Var(ad::Graph&, const ParamSet&)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_param = 32;
  std::uint64_t seed = 0;
};

struct ParamGradReport {
  std::string name;
  Shape shape;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  // Over the checked coordinates, for a norm-wise view.
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
};

struct GradReport {
  std::vector<ParamGradReport> params;
  std::vector<Shape> probe_shapes;
  std::uint64_t seed = 0;
  double step = 0.0;
  double max_rel_error = 0.0;
  std::optional<std::string> nan_error;

  bool passed(double tolerance) const { return !nan_error && max_rel_error < tolerance; }

  // ||a - n|| / max(||a||, ||n||, 1e-8) over every checked coordinate.
  double normwise_error() const {
    double d = 0.0, a = 0.0, n = 0.0;
    for (const auto& p : params) {
      d += p.diff_sq;
      a += p.analytic_sq;
      n += p.numeric_sq;
    }
    return std::sqrt(d) / std::max({std::sqrt(a), std::sqrt(n), 1e-8});
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Registers every entry of `params` as a trainable leaf, in name order.
inline std::map<std::string, ad::Var> register_params(ad::Graph& g, const ParamSet& params) {
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, g.param(name, value));
  return vars;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline double evaluate_loss(const GraphBuilder& build, const ParamSet& params) {
  ad::Graph g;
  return g.value(build(g, params)).item();
}

}  // namespace detail

// Central differences per coordinate against reverse-mode gradients. Large
// tensors are subsampled with a seed derived from (seed, parameter name).
inline GradReport gradcheck(const GraphBuilder& build, ParamSet probe, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  GradReport report;
  report.seed = opt.seed;
  report.step = opt.step;
  for (const auto& [name, t] : probe) report.probe_shapes.push_back(t.shape());

  ad::GradMap analytic;
  {
    ad::Graph g;
    ad::Var loss = build(g, probe);
    analytic = g.backward(loss);
  }

  for (const auto& [name, grad] : analytic) {
    auto it = probe.find(name);
    if (it == probe.end()) continue;
    Tensor& value = it->second;
    ParamGradReport pr;
    pr.name = name;
    pr.shape = value.shape();

    std::vector<std::size_t> coords(value.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.max_coords_per_param) {
      std::mt19937_64 rng(opt.seed ^ detail::fnv1a(name));
      for (std::size_t i = 0; i < opt.max_coords_per_param; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
        std::swap(coords[i], coords[pick(rng)]);
      }
      coords.resize(opt.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    for (std::size_t idx : coords) {
      const double orig = value[idx];
      value[idx] = orig + opt.step;
      const double up = detail::evaluate_loss(build, probe);
      value[idx] = orig - opt.step;
      const double down = detail::evaluate_loss(build, probe);
      value[idx] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = grad[idx];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.nan_error = "non-finite gradient for '" + name + "' at coordinate " + std::to_string(idx);
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.params.push_back(pr);
        return report;
      }
      const double err = relative_error(a, numeric);
      ++pr.coords_checked;
      pr.diff_sq += (a - numeric) * (a - numeric);
      pr.analytic_sq += a * a;
      pr.numeric_sq += numeric * numeric;
      if (err >= pr.max_rel_error) {
        pr.max_rel_error = err;
        pr.worst_index = idx;
        pr.analytic = a;
        pr.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, pr.max_rel_error);
    report.params.push_back(std::move(pr));
  }
  return report;
}

}  // namespace orient
