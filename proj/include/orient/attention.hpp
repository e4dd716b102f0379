#pragma once

// Orientation-aware attention layers: the vertical (CVA) block and the
// single-orientation (SOA) layer with a learnable pooling angle.
//
// Parameters live in a name-keyed ParamSet; a layer is identified by a
// prefix such as "block2." and reads its leaves from a VarMap produced by
// bind_params(). BatchNorm running statistics are kept in a BatchNormMap
// keyed the same way.

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/autodiff.hpp"
#include "orient/geometry.hpp"
#include "orient/gradcheck.hpp"

namespace orient {

using VarMap = std::map<std::string, ad::Var>;
using BatchNormMap = std::map<std::string, BatchNormState>;

inline VarMap bind_params(ad::Graph& g, const ParamSet& params, const std::set<std::string>& frozen = {}) {
  VarMap vars;
  for (const auto& [name, value] : params) vars.emplace(name, g.param(name, value, !frozen.count(name)));
  return vars;
}

inline ad::Var lookup(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

// He-style fan-in initialisation for a conv weight [Cout, Cin, k, k].
template <class Rng>
Tensor he_conv_weight(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  const double fan_in = static_cast<double>(in * k * k);
  return Tensor::normal({out, in, k, k}, rng, 0.0, std::sqrt(2.0 / fan_in));
}

// ---------------------------------------------------------------------------
// Bottleneck: sigmoid(expand(act([BN](reduce(pooled)))))
// ---------------------------------------------------------------------------

enum class Activation { gelu, hard_swish };

struct BottleneckSettings {
  Activation activation = Activation::gelu;
  bool batchnorm = false;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;
};

inline BottleneckSettings cva_bottleneck_settings() { return {Activation::hard_swish, true, 1e-5, 0.1}; }
inline BottleneckSettings soa_bottleneck_settings() { return {Activation::gelu, false, 1e-5, 0.1}; }

// r = max(8, C/32)
inline std::size_t reduction_factor(std::size_t channels) { return std::max<std::size_t>(8, channels / 32); }

// Hidden width C/r, at least one channel.
inline std::size_t bottleneck_width(std::size_t channels) {
  return std::max<std::size_t>(1, channels / reduction_factor(channels));
}

template <class Rng>
void init_bottleneck(ParamSet& params, BatchNormMap& bns, const std::string& prefix, std::size_t channels,
                     const BottleneckSettings& settings, Rng& rng) {
  const std::size_t hidden = bottleneck_width(channels);
  params[prefix + "reduce"] = he_conv_weight(hidden, channels, 1, rng);
  params[prefix + "expand"] = he_conv_weight(channels, hidden, 1, rng);
  if (settings.batchnorm) {
    params[prefix + "bn.gamma"] = Tensor::ones({hidden});
    params[prefix + "bn.beta"] = Tensor::zeros({hidden});
    bns[prefix + "bn"] = BatchNormState::identity(hidden, settings.bn_epsilon, settings.bn_momentum);
  }
}

// pooled: [B,C,1,L] -> attention [B,C,1,L] in (0,1).
inline ad::Var bottleneck_forward(ad::Graph& g, const VarMap& vars, BatchNormMap& bns, const std::string& prefix,
                                  ad::Var pooled, const BottleneckSettings& settings, bool update_running = true) {
  ad::Var h = ad::conv2d(g, pooled, lookup(vars, prefix + "reduce"), std::nullopt);
  if (settings.batchnorm) {
    auto it = bns.find(prefix + "bn");
    if (it == bns.end()) throw std::out_of_range("missing batchnorm state '" + prefix + "bn'");
    h = ad::batchnorm(g, h, lookup(vars, prefix + "bn.gamma"), lookup(vars, prefix + "bn.beta"), it->second,
                      update_running);
  }
  h = settings.activation == Activation::gelu ? ad::gelu(g, h) : ad::hard_swish(g, h);
  h = ad::conv2d(g, h, lookup(vars, prefix + "expand"), std::nullopt);
  return ad::sigmoid(g, h);
}

// ---------------------------------------------------------------------------
// Residual preprocess: ReLU(f1x1(f3x3(F)) + downsample(F))
// ---------------------------------------------------------------------------

inline bool needs_downsample(std::size_t in_channels, std::size_t out_channels, std::size_t stride) {
  return in_channels != out_channels || stride != 1;
}

template <class Rng>
void init_residual(ParamSet& params, const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
                   std::size_t stride, Rng& rng) {
  params[prefix + "conv3.weight"] = he_conv_weight(out_channels, in_channels, 3, rng);
  params[prefix + "conv3.bias"] = Tensor::zeros({out_channels});
  params[prefix + "conv1.weight"] = he_conv_weight(out_channels, out_channels, 1, rng);
  if (needs_downsample(in_channels, out_channels, stride)) {
    params[prefix + "down.weight"] = he_conv_weight(out_channels, in_channels, 1, rng);
  }
}

inline ad::Var residual_forward(ad::Graph& g, const VarMap& vars, const std::string& prefix, ad::Var x,
                                std::size_t stride) {
  ad::Var h = ad::conv2d(g, x, lookup(vars, prefix + "conv3.weight"), lookup(vars, prefix + "conv3.bias"),
                         Conv2dOptions{stride, 1});
  h = ad::conv2d(g, h, lookup(vars, prefix + "conv1.weight"), std::nullopt);
  ad::Var identity = x;
  if (auto it = vars.find(prefix + "down.weight"); it != vars.end()) {
    identity = ad::conv2d(g, x, it->second, std::nullopt, Conv2dOptions{stride, 0});
  }
  return ad::relu(g, ad::add(g, h, identity));
}

// ---------------------------------------------------------------------------
// Attention chaining: conv1x1(P_M(previous attention))
// ---------------------------------------------------------------------------

template <class Rng>
void init_chain(ParamSet& params, const std::string& prefix, std::size_t prev_channels, std::size_t channels,
                Rng& rng) {
  params[prefix + "chain.weight"] = he_conv_weight(channels, prev_channels, 1, rng);
}

// prev: [B,Cp,Hp,Wp] with Hp either 1 (column attention) or 2*H (grid).
// Max-pools 2x along each spatial axis longer than one, then maps channels.
inline ad::Var chain_factor(ad::Graph& g, const VarMap& vars, const std::string& prefix, ad::Var prev,
                            std::size_t height, std::size_t width) {
  const Tensor& pv = g.value(prev);
  const bool column = pv.dim(2) == 1 && height == 1;
  const PoolWindow win = column ? PoolWindow{1, 2, 1, 2} : PoolWindow{2, 2, 2, 2};
  const std::size_t ph = column ? 1 : pv.dim(2) / 2;
  if (pv.dim(3) / 2 != width || ph != height || (!column && pv.dim(2) % 2) || pv.dim(3) % 2) {
    throw std::invalid_argument("chain_factor: previous attention " + shape_str(pv.shape()) +
                                " is not reducible by 2x max-pooling to " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  ad::Var pooled = ad::max_pool2d(g, prev, win);
  return ad::conv2d(g, pooled, lookup(vars, prefix + "chain.weight"), std::nullopt);
}

// ---------------------------------------------------------------------------
// CVA block
// ---------------------------------------------------------------------------

struct CvaOutput {
  ad::Var features;   // F_conv reweighted column-wise
  ad::Var attention;  // chained attention [B,C,1,W]
  ad::Var vertical;   // sigmoid output before chaining [B,C,1,W]
};

// Attention stage on an already preprocessed map F_conv.
inline CvaOutput cva_attention(ad::Graph& g, const VarMap& vars, BatchNormMap& bns, const std::string& prefix,
                               ad::Var fconv, std::optional<ad::Var> prev_attn,
                               const BottleneckSettings& settings = cva_bottleneck_settings()) {
  ad::Var pooled = ad::avg_pool_height(g, fconv);
  ad::Var y = bottleneck_forward(g, vars, bns, prefix + "att.", pooled, settings);
  ad::Var attn = y;
  if (prev_attn) {
    const std::size_t W = g.value(fconv).dim(3);
    attn = ad::mul(g, y, chain_factor(g, vars, prefix, *prev_attn, 1, W));
  }
  return CvaOutput{ad::mul_broadcast_height(g, fconv, attn), attn, y};
}

struct BlockShape {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 2;
  std::size_t prev_channels = 0;  // 0 for the first block (no chaining)
};

template <class Rng>
void init_cva_block(ParamSet& params, BatchNormMap& bns, const std::string& prefix, const BlockShape& shape, Rng& rng,
                    const BottleneckSettings& settings = cva_bottleneck_settings()) {
  init_residual(params, prefix, shape.in_channels, shape.out_channels, shape.stride, rng);
  init_bottleneck(params, bns, prefix + "att.", shape.out_channels, settings, rng);
  if (shape.prev_channels) init_chain(params, prefix, shape.prev_channels, shape.out_channels, rng);
}

inline CvaOutput cva_block_forward(ad::Graph& g, const VarMap& vars, BatchNormMap& bns, const std::string& prefix,
                                   ad::Var x, std::optional<ad::Var> prev_attn, std::size_t stride,
                                   const BottleneckSettings& settings = cva_bottleneck_settings()) {
  ad::Var fconv = residual_forward(g, vars, prefix, x, stride);
  return cva_attention(g, vars, bns, prefix, fconv, prev_attn, settings);
}

// ---------------------------------------------------------------------------
// SOA layer
// ---------------------------------------------------------------------------

inline double theta_from_raw(double raw) { return std::numbers::pi * sigmoid_scalar(raw); }

inline double raw_from_theta(double theta) {
  if (!(theta > 0.0 && theta < std::numbers::pi)) {
    throw std::invalid_argument("raw_from_theta: theta " + std::to_string(theta) + " outside (0, pi)");
  }
  const double p = theta / std::numbers::pi;
  return std::log(p / (1.0 - p));
}

struct SoaSettings {
  BottleneckSettings bottleneck = soa_bottleneck_settings();
  OapDenominator denominator = OapDenominator::count;
  double epsilon = kOapEpsilon;
  std::optional<std::size_t> forced_step;  // bypasses theta entirely
};

struct StepBlend {
  std::size_t lower = 0;  // floor(s)
  std::size_t upper = 1;  // floor(s) + 1
  double lambda = 0.0;    // s - floor(s)
  bool single = false;    // both steps collapse to the same capped geometry
};

inline StepBlend step_blend(double theta, std::size_t width) {
  const double s = cot_magnitude(theta);
  const double fl = std::floor(s);
  StepBlend b;
  b.lower = static_cast<std::size_t>(fl);
  b.upper = b.lower + 1;
  b.lambda = s - fl;
  b.single = b.lower >= max_step(width);
  return b;
}

// lambda = frac(max(|cot(pi * sigmoid(raw))|, 1e-2)) as a graph node. Its
// derivative is the derivative of s; the integer part contributes nothing.
inline ad::Var blend_weight(ad::Graph& g, ad::Var theta_raw, std::size_t width) {
  const double raw = g.value(theta_raw).item();
  const double theta = theta_from_raw(raw);
  const StepBlend b = step_blend(theta, width);
  return g.make(Tensor::scalar(b.lambda), {theta_raw}, [theta_raw, b](ad::Graph& gr, const Tensor& gy) {
    if (b.single) return;
    const double r = gr.value(theta_raw).item();
    const double sig = sigmoid_scalar(r);
    const double th = std::numbers::pi * sig;
    const double cot = std::cos(th) / std::sin(th);
    if (std::abs(cot) <= kCotFloor) return;
    const double sin_t = std::sin(th);
    const double ds_dtheta = -(cot > 0 ? 1.0 : -1.0) / (sin_t * sin_t);
    const double dtheta_draw = std::numbers::pi * sig * (1.0 - sig);
    gr.grad_slot(theta_raw)[0] += gy[0] * ds_dtheta * dtheta_draw;
  });
}

struct SoaBranch {
  OrientationGeometry geometry;
  ad::Var attention;  // a_theta [B,C,1,L], before chaining
};

struct SoaOutput {
  ad::Var features;        // reweighted F [B,C,H,W]
  ad::Var attention_grid;  // folded, blended and chained weights [B,C,H,W]
  std::vector<SoaBranch> branches;
  double lambda = 0.0;
  double theta = std::numbers::pi / 2;
};

// Pools along the theta-induced lines for floor(s) and floor(s)+1, runs the
// bottleneck on each, folds the weights back onto the grid and blends the two
// by lambda = frac(s). `chain` is an already computed [B,C,H,W] factor.
inline SoaOutput soa_layer_forward(ad::Graph& g, const VarMap& vars, BatchNormMap& bns, const std::string& prefix,
                                   const std::string& theta_name, ad::Var x, std::optional<ad::Var> chain,
                                   const SoaSettings& settings = {}) {
  const Tensor& xv = g.value(x);
  if (xv.rank() != 4) throw std::invalid_argument("soa_layer_forward: expected [B,C,H,W], got " + shape_str(xv.shape()));
  const std::size_t H = xv.dim(2), W = xv.dim(3);
  const std::string att = prefix + "att.";

  SoaOutput out;
  auto branch = [&](std::size_t step, Tilt tilt, bool update_running) {
    SoaBranch b{geometry_for_step(step, tilt, H, W, settings.epsilon, out.theta), ad::Var{}};
    ad::Var pooled = ad::oap(g, x, b.geometry, settings.denominator);
    b.attention = bottleneck_forward(g, vars, bns, att, pooled, settings.bottleneck, update_running);
    return b;
  };

  ad::Var grid;
  if (settings.forced_step) {
    out.branches.push_back(branch(*settings.forced_step, Tilt::below_vertical, true));
    grid = ad::fold_back(g, out.branches[0].attention, out.branches[0].geometry);
  } else {
    const ad::Var theta_raw = lookup(vars, theta_name);
    const double raw = g.value(theta_raw).item();
    if (!std::isfinite(raw)) throw std::invalid_argument("soa_layer_forward: non-finite theta");
    out.theta = theta_from_raw(raw);
    const StepBlend blend = step_blend(out.theta, W);
    const Tilt tilt = tilt_of(out.theta);
    out.lambda = blend.lambda;
    if (blend.single) {
      out.branches.push_back(branch(blend.lower, tilt, true));
      grid = ad::fold_back(g, out.branches[0].attention, out.branches[0].geometry);
    } else {
      const bool lower_dominant = blend.lambda < 0.5;
      out.branches.push_back(branch(blend.lower, tilt, lower_dominant));
      out.branches.push_back(branch(blend.upper, tilt, !lower_dominant));
      ad::Var lambda = blend_weight(g, theta_raw, W);
      ad::Var lo = ad::fold_back(g, out.branches[0].attention, out.branches[0].geometry);
      ad::Var hi = ad::fold_back(g, out.branches[1].attention, out.branches[1].geometry);
      grid = ad::add(g, ad::scale_by(g, lo, ad::one_minus(g, lambda)), ad::scale_by(g, hi, lambda));
    }
  }
  if (chain) grid = ad::mul(g, grid, *chain);
  out.attention_grid = grid;
  out.features = ad::mul(g, x, grid);
  return out;
}

template <class Rng>
void init_soa_block(ParamSet& params, BatchNormMap& bns, const std::string& prefix, const BlockShape& shape, Rng& rng,
                    const BottleneckSettings& settings = soa_bottleneck_settings()) {
  init_residual(params, prefix, shape.in_channels, shape.out_channels, shape.stride, rng);
  init_bottleneck(params, bns, prefix + "att.", shape.out_channels, settings, rng);
  if (shape.prev_channels) init_chain(params, prefix, shape.prev_channels, shape.out_channels, rng);
}

// Residual preprocess followed by an SOA layer chained to the previous
// block's attention grid.
inline SoaOutput soa_block_forward(ad::Graph& g, const VarMap& vars, BatchNormMap& bns, const std::string& prefix,
                                   const std::string& theta_name, ad::Var x, std::optional<ad::Var> prev_grid,
                                   std::size_t stride, const SoaSettings& settings = {}) {
  ad::Var fconv = residual_forward(g, vars, prefix, x, stride);
  std::optional<ad::Var> chain;
  if (prev_grid) {
    const Tensor& fv = g.value(fconv);
    chain = chain_factor(g, vars, prefix, *prev_grid, fv.dim(2), fv.dim(3));
  }
  return soa_layer_forward(g, vars, bns, prefix, theta_name, fconv, chain, settings);
}

// ---------------------------------------------------------------------------
// Vertical degeneration check
// ---------------------------------------------------------------------------

// Runs the CVA bottleneck on column means and the SOA bottleneck on S = 0
// line means (epsilon removed) over the same probe [B,C,H,W]. Both weight sets
// use the CVA bottleneck layout: "reduce", "expand", "bn.gamma", "bn.beta".
inline bool soa_equals_cva_at_vertical(const ParamSet& cva_weights, const ParamSet& soa_weights, const Tensor& probe,
                                       double tolerance = 1e-9) {
  const auto settings = cva_bottleneck_settings();
  auto run = [&](const ParamSet& weights, bool soa) {
    ad::Graph g;
    VarMap vars;
    for (const auto& [name, value] : weights) vars.emplace("att." + name, g.param("att." + name, value));
    BatchNormMap bns;
    bns["att.bn"] = BatchNormState::identity(weights.at("bn.gamma").numel(), settings.bn_epsilon, settings.bn_momentum);
    ad::Var x = g.input(probe);
    ad::Var pooled = soa ? ad::oap(g, x, geometry_for_step(0, Tilt::below_vertical, probe.dim(2), probe.dim(3), 0.0))
                         : ad::avg_pool_height(g, x);
    return g.value(bottleneck_forward(g, vars, bns, "att.", pooled, settings));
  };
  const Tensor a = run(cva_weights, false);
  const Tensor b = run(soa_weights, true);
  return a.shape() == b.shape() && max_abs_diff(a, b) <= tolerance;
}

}  // namespace orient
