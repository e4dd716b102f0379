#pragma once

// Motion-stream classifier: stem conv, four stride-2 attention blocks with
// chained attention, global pooling, optional AU bits, linear head.

#include <array>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/attention.hpp"

namespace orient {

enum class Variant { A, B, C, D };
enum class HeadInput { gap, flatten };

inline constexpr std::size_t kNumBlocks = 4;
inline constexpr std::size_t kAuLength = 21;

inline char variant_letter(Variant v) { return "ABCD"[static_cast<int>(v)]; }

inline Variant parse_variant(const std::string& s) {
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  if (s == "C") return Variant::C;
  if (s == "D") return Variant::D;
  throw std::invalid_argument("variant '" + s + "' not in {A,B,C,D}");
}

struct ModelConfig {
  Variant variant = Variant::B;
  std::size_t input_size = 64;
  std::vector<std::size_t> channels{16, 32, 64, 128};
  std::size_t num_classes = 4;
  bool use_au = false;
  std::size_t au_length = kAuLength;
  std::uint64_t seed = 0;
  double theta_init = std::numbers::pi / 4;
  double theta_jitter = 0.1;
  double frozen_theta = 1e-2;  // variant D
  HeadInput head_input = HeadInput::gap;
  OapDenominator oap_denominator = OapDenominator::count;
  double oap_epsilon = kOapEpsilon;
  Activation soa_activation = Activation::gelu;
  bool soa_batchnorm = false;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  bool uses_soa() const noexcept { return variant != Variant::A; }

  void validate() const {
    if (channels.size() != kNumBlocks) {
      throw std::invalid_argument("model.channels must list exactly 4 block widths, got " +
                                  std::to_string(channels.size()));
    }
    for (auto c : channels)
      if (c == 0) throw std::invalid_argument("model.channels entries must be positive");
    if (input_size < 16 || input_size % 16 != 0) {
      throw std::invalid_argument("input size " + std::to_string(input_size) + " must be a positive multiple of 16");
    }
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (!(theta_init > 0.0 && theta_init < std::numbers::pi)) throw std::invalid_argument("theta_init outside (0, pi)");
    if (theta_jitter < 0.0) throw std::invalid_argument("theta_jitter must be >= 0");
    if (!(frozen_theta > 0.0 && frozen_theta < std::numbers::pi)) {
      throw std::invalid_argument("frozen_theta outside (0, pi)");
    }
  }

  BottleneckSettings soa_bottleneck() const {
    return BottleneckSettings{soa_activation, soa_batchnorm, bn_epsilon, bn_momentum};
  }
  BottleneckSettings cva_bottleneck() const {
    return BottleneckSettings{Activation::hard_swish, true, bn_epsilon, bn_momentum};
  }
};

struct ModelState {
  ModelConfig config;
  ParamSet params;
  std::set<std::string> frozen;
  BatchNormMap batchnorm;

  // Parameter names of the orientation angles, in block order.
  std::vector<std::string> theta_names() const {
    switch (config.variant) {
      case Variant::A:
        return {};
      case Variant::B:
      case Variant::D:
        return {"theta"};
      case Variant::C:
        return {"block0.theta", "block1.theta", "block2.theta", "block3.theta"};
    }
    return {};
  }

  std::string theta_name_for_block(std::size_t block) const {
    return config.variant == Variant::C ? "block" + std::to_string(block) + ".theta" : "theta";
  }

  std::vector<double> thetas() const {
    std::vector<double> out;
    for (const auto& n : theta_names()) out.push_back(theta_from_raw(params.at(n).item()));
    return out;
  }
};

inline std::string block_prefix(std::size_t i) { return "block" + std::to_string(i) + "."; }

inline ModelState build_model(const ModelConfig& config) {
  config.validate();
  ModelState m;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  const auto& ch = config.channels;

  m.params["stem.weight"] = he_conv_weight(ch[0], 1, 3, rng);
  m.params["stem.bias"] = Tensor::zeros({ch[0]});

  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const BlockShape shape{i == 0 ? ch[0] : ch[i - 1], ch[i], 2, i == 0 ? 0 : ch[i - 1]};
    if (config.uses_soa()) {
      init_soa_block(m.params, m.batchnorm, block_prefix(i), shape, rng, config.soa_bottleneck());
    } else {
      init_cva_block(m.params, m.batchnorm, block_prefix(i), shape, rng, config.cva_bottleneck());
    }
  }

  std::uniform_real_distribution<double> jitter(-config.theta_jitter, config.theta_jitter);
  for (const auto& name : m.theta_names()) {
    double theta = config.theta_init + (config.theta_jitter > 0.0 ? jitter(rng) : 0.0);
    if (config.variant == Variant::D) {
      theta = config.frozen_theta;
      m.frozen.insert(name);
    }
    m.params[name] = Tensor::scalar(raw_from_theta(theta));
  }

  const std::size_t spatial = config.input_size / 16;
  const std::size_t features =
      ch.back() * (config.head_input == HeadInput::flatten ? spatial * spatial : 1) + (config.use_au ? config.au_length : 0);
  m.params["head.weight"] =
      Tensor::normal({config.num_classes, features}, rng, 0.0, std::sqrt(1.0 / static_cast<double>(features)));
  m.params["head.bias"] = Tensor::zeros({config.num_classes});
  return m;
}

struct ForwardOptions {
  bool training = false;
  std::optional<std::size_t> forced_step;  // SOA variants: single fixed step, theta bypassed
  bool ablate_chain = false;               // replace the chained factor by 1
};

struct ForwardTrace {
  ad::Var logits;
  ad::Var features;                  // final block output [B,C,h,w]
  std::vector<ad::Var> attention;    // per block: CVA [B,C,1,W], SOA grid [B,C,H,W]
  std::vector<CvaOutput> cva;
  std::vector<SoaOutput> soa;
};

inline void check_inputs(const ModelConfig& cfg, const Tensor& frames, const Tensor* au_bits) {
  const std::size_t S = cfg.input_size;
  if (frames.rank() != 4 || frames.dim(1) != 1 || frames.dim(2) != S || frames.dim(3) != S) {
    throw std::invalid_argument("forward: expected difference frames [B,1," + std::to_string(S) + "," +
                                std::to_string(S) + "], got " + shape_str(frames.shape()));
  }
  if (!cfg.use_au && au_bits) throw std::invalid_argument("forward: AU bits supplied but use_au is false");
  if (cfg.use_au && !au_bits) throw std::invalid_argument("forward: use_au is true but no AU bits supplied");
  if (au_bits) {
    if (au_bits->rank() != 2 || au_bits->dim(0) != frames.dim(0) || au_bits->dim(1) != cfg.au_length) {
      throw std::invalid_argument("forward: AU bits " + shape_str(au_bits->shape()) + " do not match batch of " +
                                  std::to_string(frames.dim(0)) + " x " + std::to_string(cfg.au_length));
    }
    for (double v : au_bits->data())
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("forward: AU bits must be 0 or 1");
  }
}

// Builds the forward graph on `g` with parameters already bound in `vars`.
inline ForwardTrace forward_graph(ad::Graph& g, ModelState& model, const VarMap& vars, const Tensor& frames,
                                  const Tensor* au_bits, const ForwardOptions& opts = {}) {
  const ModelConfig& cfg = model.config;
  check_inputs(cfg, frames, au_bits);
  for (auto& [name, bn] : model.batchnorm) bn.mode = opts.training ? BatchNormMode::training : BatchNormMode::inference;

  ForwardTrace trace;
  ad::Var x = g.input(frames);
  x = ad::relu(g, ad::conv2d(g, x, lookup(vars, "stem.weight"), lookup(vars, "stem.bias"), Conv2dOptions{1, 1}));

  SoaSettings soa;
  soa.bottleneck = cfg.soa_bottleneck();
  soa.denominator = cfg.oap_denominator;
  soa.epsilon = cfg.oap_epsilon;
  soa.forced_step = opts.forced_step;

  std::optional<ad::Var> prev;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const std::string prefix = block_prefix(i);
    if (cfg.uses_soa()) {
      ad::Var fconv = residual_forward(g, vars, prefix, x, 2);
      std::optional<ad::Var> chain;
      if (prev && !opts.ablate_chain) {
        const Tensor& fv = g.value(fconv);
        chain = chain_factor(g, vars, prefix, *prev, fv.dim(2), fv.dim(3));
      }
      SoaOutput out = soa_layer_forward(g, vars, model.batchnorm, prefix, model.theta_name_for_block(i), fconv, chain, soa);
      x = out.features;
      prev = out.attention_grid;
      trace.attention.push_back(out.attention_grid);
      trace.soa.push_back(std::move(out));
    } else {
      ad::Var fconv = residual_forward(g, vars, prefix, x, 2);
      CvaOutput out = cva_attention(g, vars, model.batchnorm, prefix, fconv, opts.ablate_chain ? std::nullopt : prev,
                                    cfg.cva_bottleneck());
      x = out.features;
      prev = out.attention;
      trace.attention.push_back(out.attention);
      trace.cva.push_back(out);
    }
  }
  trace.features = x;

  ad::Var pooled = cfg.head_input == HeadInput::gap ? ad::global_avg_pool(g, x) : ad::flatten(g, x);
  if (au_bits) pooled = ad::concat_columns(g, pooled, g.input(*au_bits));
  trace.logits = ad::linear(g, pooled, lookup(vars, "head.weight"), lookup(vars, "head.bias"));
  return trace;
}

// Inference convenience: logits [B,K] for a batch.
inline Tensor forward(ModelState& model, const Tensor& frames, const Tensor* au_bits = nullptr,
                      const ForwardOptions& opts = {}) {
  ad::Graph g;
  VarMap vars = bind_params(g, model.params, model.frozen);
  return g.value(forward_graph(g, model, vars, frames, au_bits, opts).logits);
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct GroupCount {
  std::size_t stored = 0;
  std::size_t trainable = 0;
};

struct ParamCounts {
  GroupCount preprocess;   // stem
  GroupCount blocks;       // residual convs, chain maps, BN affine
  GroupCount bottlenecks;  // attention reduce/expand maps
  GroupCount theta;
  GroupCount head;
  GroupCount total;
  std::array<std::size_t, kNumBlocks> bottleneck_per_block{};
};

inline ParamCounts param_count(const ModelState& model) {
  ParamCounts pc;
  for (const auto& [name, value] : model.params) {
    const std::size_t n = value.numel();
    const bool trainable = !model.frozen.count(name);
    GroupCount* group = nullptr;
    if (name.starts_with("stem.")) {
      group = &pc.preprocess;
    } else if (name.starts_with("head.")) {
      group = &pc.head;
    } else if (name == "theta" || name.ends_with(".theta")) {
      group = &pc.theta;
    } else if (name.ends_with("att.reduce") || name.ends_with("att.expand")) {
      group = &pc.bottlenecks;
      pc.bottleneck_per_block[static_cast<std::size_t>(name[5] - '0')] += n;
    } else {
      group = &pc.blocks;
    }
    group->stored += n;
    pc.total.stored += n;
    if (trainable) {
      group->trainable += n;
      pc.total.trainable += n;
    }
  }
  return pc;
}

}  // namespace orient
