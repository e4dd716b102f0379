#pragma once

// The gradient verification suite: every differentiable primitive on three
// random probes, a CVA block, SOA blocks at theta in {0.9, 1.2, 2.0} and the
// full B and C models on a 2-sample batch.

#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "orient/gradcheck.hpp"
#include "orient/model.hpp"

namespace orient {

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kCompositeTolerance = 1e-5;

struct SuiteEntry {
  std::string name;
  double tolerance = kPrimitiveTolerance;
  GradReport report;  // worst probe
  std::size_t probes = 1;

  bool passed() const { return report.passed(tolerance); }
};

using ProbeFactory = std::function<std::pair<ParamSet, GraphBuilder>(std::mt19937_64&)>;

inline std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

namespace detail {

inline Tensor away_from_zero(Shape s, std::mt19937_64& rng, double gap) {
  Tensor t = Tensor::uniform(std::move(s), rng);
  for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
  return t;
}

// Random values on a 0.1-spaced lattice plus jitter: no near-ties for max.
inline Tensor distinct_values(Shape s, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i] + jitter(rng);
  return t;
}

inline ad::Var project(ad::Graph& g, ad::Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::dot_constant(g, y, Tensor::uniform(g.value(y).shape(), rng));
}

// Unary elementwise op probe with an input generator.
inline ProbeFactory unary_probe(std::function<ad::Var(ad::Graph&, ad::Var)> op,
                                std::function<Tensor(std::mt19937_64&)> input) {
  return [op, input](std::mt19937_64& rng) {
    ParamSet p{{"x", input(rng)}};
    const std::uint64_t proj = rng();
    GraphBuilder b = [op, proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      return project(g, op(g, v.at("x")), proj);
    };
    return std::make_pair(p, b);
  };
}

}  // namespace detail

// Default step for ops with curvature; ops linear in any single input
// coordinate have no truncation error, so they use a larger step that keeps
// rounding noise down.
inline constexpr double kCurvedStep = 1e-5;
inline constexpr double kLinearStep = 1e-3;

inline SuiteEntry run_check(const std::string& name, double tolerance, std::size_t probes, const ProbeFactory& factory,
                            std::uint64_t seed, double step = kCurvedStep) {
  SuiteEntry e{name, tolerance, {}, probes};
  for (std::size_t k = 0; k < probes; ++k) {
    std::mt19937_64 rng(seed + 7919 * k + detail::fnv1a(name));
    auto [probe, build] = factory(rng);
    GradCheckOptions opt;
    opt.seed = seed + k;
    opt.step = step;
    GradReport r = gradcheck(build, probe, opt);
    if (k == 0 || r.nan_error || (!e.report.nan_error && r.max_rel_error > e.report.max_rel_error)) e.report = r;
    if (r.nan_error) break;
  }
  return e;
}

struct PrimitiveProbe {
  std::string name;
  ProbeFactory factory;
  double step = kCurvedStep;
};

inline std::vector<PrimitiveProbe> primitive_probes() {
  using detail::project;
  using detail::unary_probe;
  std::vector<PrimitiveProbe> out;
  auto uni = [](Shape s, double lo, double hi) {
    return [s, lo, hi](std::mt19937_64& rng) { return Tensor::uniform(s, rng, lo, hi); };
  };

  auto conv = [](Conv2dOptions o, std::size_t k) {
    return ProbeFactory([o, k](std::mt19937_64& rng) {
      ParamSet p{{"x", Tensor::uniform({2, 3, 5, 5}, rng)},
                 {"w", Tensor::uniform({4, 3, k, k}, rng)},
                 {"b", Tensor::uniform({4}, rng)}};
      const std::uint64_t proj = rng();
      GraphBuilder b = [o, proj](ad::Graph& g, const ParamSet& ps) {
        auto v = register_params(g, ps);
        return project(g, ad::conv2d(g, v.at("x"), v.at("w"), v.at("b"), o), proj);
      };
      return std::make_pair(p, b);
    });
  };
  out.emplace_back("conv2d 3x3 stride2 pad1", conv({2, 1}, 3), kLinearStep);
  out.emplace_back("conv2d 1x1", conv({1, 0}, 1), kLinearStep);
  out.emplace_back("relu", unary_probe(ad::relu, [](auto& rng) { return detail::away_from_zero({2, 3, 4, 4}, rng, 0.05); }), kLinearStep);
  out.emplace_back("hard_swish", unary_probe(ad::hard_swish, uni({2, 3, 4, 4}, -2.5, 2.5)));
  out.emplace_back("gelu", unary_probe(ad::gelu, uni({2, 3, 4, 4}, -3.0, 3.0)));
  out.emplace_back("sigmoid", unary_probe(ad::sigmoid, uni({2, 3, 4, 4}, -4.0, 4.0)));
  out.emplace_back("one_minus", unary_probe(ad::one_minus, uni({3, 4}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("avg_pool_height", unary_probe(ad::avg_pool_height, uni({2, 3, 4, 5}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("global_avg_pool", unary_probe(ad::global_avg_pool, uni({2, 3, 4, 5}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("flatten", unary_probe(ad::flatten, uni({2, 3, 2, 2}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("sum", unary_probe([](ad::Graph& g, ad::Var x) { return ad::sum(g, ad::mul(g, x, x)); },
                                      uni({3, 4}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("scale", unary_probe([](ad::Graph& g, ad::Var x) { return ad::scale(g, x, -1.7); },
                                        uni({3, 4}, -1.0, 1.0)), kLinearStep);
  out.emplace_back("max_pool2d 2x2",
                   unary_probe([](ad::Graph& g, ad::Var x) { return ad::max_pool2d(g, x, PoolWindow{2, 2, 2, 2}); },
                               [](auto& rng) { return detail::distinct_values({2, 2, 4, 6}, rng); }), kLinearStep);
  out.emplace_back("max_pool2d 1x2",
                   unary_probe([](ad::Graph& g, ad::Var x) { return ad::max_pool2d(g, x, PoolWindow{1, 2, 1, 2}); },
                               [](auto& rng) { return detail::distinct_values({2, 2, 1, 6}, rng); }), kLinearStep);

  auto binary = [](std::function<ad::Var(ad::Graph&, ad::Var, ad::Var)> op, Shape sa, Shape sb) {
    return ProbeFactory([op, sa, sb](std::mt19937_64& rng) {
      ParamSet p{{"a", Tensor::uniform(sa, rng)}, {"b", Tensor::uniform(sb, rng)}};
      const std::uint64_t proj = rng();
      GraphBuilder b = [op, proj](ad::Graph& g, const ParamSet& ps) {
        auto v = register_params(g, ps);
        return project(g, op(g, v.at("a"), v.at("b")), proj);
      };
      return std::make_pair(p, b);
    });
  };
  out.emplace_back("add", binary(ad::add, {2, 3, 2, 2}, {2, 3, 2, 2}), kLinearStep);
  out.emplace_back("mul", binary(ad::mul, {2, 3, 2, 2}, {2, 3, 2, 2}), kLinearStep);
  out.emplace_back("scale_by", binary(ad::scale_by, {2, 3, 2, 2}, {1}), kLinearStep);
  out.emplace_back("mul_broadcast_height", binary(ad::mul_broadcast_height, {2, 3, 4, 5}, {2, 3, 1, 5}), kLinearStep);
  out.emplace_back("concat_columns", binary(ad::concat_columns, {2, 3}, {2, 4}), kLinearStep);
  out.emplace_back("matmul", binary(ad::matmul, {3, 4}, {4, 2}), kLinearStep);

  out.emplace_back("linear", [](std::mt19937_64& rng) {
    ParamSet p{{"x", Tensor::uniform({3, 4}, rng)}, {"w", Tensor::uniform({2, 4}, rng)}, {"b", Tensor::uniform({2}, rng)}};
    const std::uint64_t proj = rng();
    GraphBuilder b = [proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      return project(g, ad::linear(g, v.at("x"), v.at("w"), v.at("b")), proj);
    };
    return std::make_pair(p, b);
  }, kLinearStep);

  out.emplace_back("batchnorm (batch statistics)", [](std::mt19937_64& rng) {
    ParamSet p{{"x", Tensor::uniform({4, 3, 2, 3}, rng)},
               {"gamma", Tensor::uniform({3}, rng, 0.5, 1.5)},
               {"beta", Tensor::uniform({3}, rng)}};
    const std::uint64_t proj = rng();
    GraphBuilder b = [proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      auto state = std::make_shared<BatchNormState>(BatchNormState::identity(3));
      ad::Var y = ad::batchnorm(g, v.at("x"), v.at("gamma"), v.at("beta"), *state, false);
      return project(g, y, proj);
    };
    return std::make_pair(p, b);
  });

  out.emplace_back("cross_entropy", [](std::mt19937_64& rng) {
    ParamSet p{{"logits", Tensor::uniform({3, 4}, rng, -2.0, 2.0)}};
    std::vector<int> labels{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)};
    GraphBuilder b = [labels](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      return ad::cross_entropy(g, v.at("logits"), labels);
    };
    return std::make_pair(p, b);
  });

  auto line_probe = [](double theta, OapDenominator den) {
    return ProbeFactory([theta, den](std::mt19937_64& rng) {
      ParamSet p{{"x", Tensor::uniform({2, 3, 4, 5}, rng)}};
      const std::uint64_t proj = rng();
      GraphBuilder b = [theta, den, proj](ad::Graph& g, const ParamSet& ps) {
        auto v = register_params(g, ps);
        return project(g, ad::oap(g, v.at("x"), build_orientation(theta, 4, 5), den), proj);
      };
      return std::make_pair(p, b);
    });
  };
  out.emplace_back("oap theta=0.45 (S=2)", line_probe(0.45, OapDenominator::count), kLinearStep);
  out.emplace_back("oap theta=2.3 (S=1, tilted)", line_probe(2.3, OapDenominator::count), kLinearStep);
  out.emplace_back("oap theta=pi/2 (S=0)", line_probe(std::numbers::pi / 2, OapDenominator::count), kLinearStep);
  out.emplace_back("oap height denominator", line_probe(0.45, OapDenominator::height), kLinearStep);

  out.emplace_back("fold_back", [](std::mt19937_64& rng) {
    const auto geom = build_orientation(0.45, 4, 5);
    ParamSet p{{"a", Tensor::uniform({2, 3, 1, geom.length}, rng)}};
    const std::uint64_t proj = rng();
    GraphBuilder b = [geom, proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      return project(g, ad::fold_back(g, v.at("a"), geom), proj);
    };
    return std::make_pair(p, b);
  }, kLinearStep);

  for (double theta : {0.9, 1.2, 2.0}) {
    out.emplace_back("blend_weight theta=" + format_short(theta), [theta](std::mt19937_64& rng) {
      ParamSet p{{"theta", Tensor::scalar(raw_from_theta(theta))}};
      const double c = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
      GraphBuilder b = [c](ad::Graph& g, const ParamSet& ps) {
        auto v = register_params(g, ps);
        return ad::scale(g, blend_weight(g, v.at("theta"), 8), c);
      };
      return std::make_pair(p, b);
    });
  }
  return out;
}

// CVA block (residual preprocess + chained column attention), inputs included.
inline ProbeFactory cva_block_probe() {
  return [](std::mt19937_64& rng) {
    ParamSet params;
    BatchNormMap bns;
    init_cva_block(params, bns, "blk.", BlockShape{4, 8, 2, 4}, rng);
    params["x"] = Tensor::uniform({2, 4, 8, 8}, rng);
    params["prev"] = Tensor::uniform({2, 4, 1, 8}, rng, 0.1, 0.9);
    const std::uint64_t proj = rng();
    GraphBuilder b = [bns, proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      auto local = std::make_shared<BatchNormMap>(bns);
      CvaOutput out = cva_block_forward(g, v, *local, "blk.", v.at("x"), v.at("prev"), 2);
      return detail::project(g, out.features, proj);
    };
    return std::make_pair(params, b);
  };
}

// SOA block at a fixed theta, chained to a previous attention grid.
inline ProbeFactory soa_block_probe(double theta) {
  return [theta](std::mt19937_64& rng) {
    ParamSet params;
    BatchNormMap bns;
    init_soa_block(params, bns, "blk.", BlockShape{4, 8, 2, 4}, rng);
    params["theta"] = Tensor::scalar(raw_from_theta(theta));
    params["x"] = Tensor::uniform({2, 4, 8, 8}, rng);
    params["prev"] = detail::distinct_values({2, 4, 8, 8}, rng);
    const std::uint64_t proj = rng();
    GraphBuilder b = [bns, proj](ad::Graph& g, const ParamSet& ps) {
      auto v = register_params(g, ps);
      auto local = std::make_shared<BatchNormMap>(bns);
      SoaOutput out = soa_block_forward(g, v, *local, "blk.", "theta", v.at("x"), v.at("prev"), 2);
      return detail::project(g, out.features, proj);
    };
    return std::make_pair(params, b);
  };
}

// Full model, cross-entropy on a 2-sample batch, thetas placed away from
// integer steps.
inline ProbeFactory model_probe(Variant variant) {
  return [variant](std::mt19937_64& rng) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.input_size = 32;
    cfg.channels = {4, 4, 8, 8};
    cfg.seed = rng();
    ModelState model = build_model(cfg);
    const double thetas[] = {1.2, 0.9, 2.0, 1.1};
    const auto names = model.theta_names();
    for (std::size_t i = 0; i < names.size(); ++i) model.params[names[i]] = Tensor::scalar(raw_from_theta(thetas[i]));
    ParamSet params = model.params;
    const Tensor frames = Tensor::uniform({2, 1, 32, 32}, rng, -0.5, 0.5);
    GraphBuilder b = [model, frames](ad::Graph& g, const ParamSet& ps) {
      auto local = std::make_shared<ModelState>(model);
      VarMap vars = bind_params(g, ps, local->frozen);
      ForwardOptions fo;
      fo.training = true;
      ForwardTrace t = forward_graph(g, *local, vars, frames, nullptr, fo);
      return ad::cross_entropy(g, t.logits, {1, 3});
    };
    return std::make_pair(params, b);
  };
}

inline std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed = 0,
                                                  const std::function<void(const SuiteEntry&)>& on_entry = {}) {
  std::vector<SuiteEntry> out;
  auto add = [&](SuiteEntry e) {
    if (on_entry) on_entry(e);
    out.push_back(std::move(e));
  };
  for (const auto& p : primitive_probes()) add(run_check(p.name, kPrimitiveTolerance, 3, p.factory, seed, p.step));
  add(run_check("CVA block", kCompositeTolerance, 1, cva_block_probe(), seed));
  for (double theta : {0.9, 1.2, 2.0}) {
    add(run_check("SOA block theta=" + format_short(theta), kCompositeTolerance, 1, soa_block_probe(theta), seed));
  }
  add(run_check("model B, 2-sample batch", kCompositeTolerance, 1, model_probe(Variant::B), seed));
  add(run_check("model C, 2-sample batch", kCompositeTolerance, 1, model_probe(Variant::C), seed));
  return out;
}

inline std::string format_suite_row(const SuiteEntry& e) {
  char buf[200];
  std::string worst = "-";
  for (const auto& p : e.report.params)
    if (p.max_rel_error == e.report.max_rel_error) {
      worst = p.name;
      break;
    }
  std::snprintf(buf, sizeof buf, "%-30s %-4s max_rel_err=%.3e tol=%.0e normwise=%.2e worst=%s", e.name.c_str(),
                e.passed() ? "ok" : "FAIL", e.report.max_rel_error, e.tolerance, e.report.normwise_error(),
                worst.c_str());
  std::string row = buf;
  for (const auto& p : e.report.params)
    if (p.name == worst && p.max_rel_error > e.tolerance) {
      std::snprintf(buf, sizeof buf, " (analytic %.6e, numeric %.6e)", p.analytic, p.numeric);
      row += buf;
    }
  if (e.report.nan_error) row += " (" + *e.report.nan_error + ")";
  return row;
}

}  // namespace orient
