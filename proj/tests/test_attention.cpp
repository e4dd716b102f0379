#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "orient/attention.hpp"

using namespace orient;
using std::numbers::pi;

namespace {

constexpr double kEps = kOapEpsilon;

// Brute force line assignment from the geometric rule, independent of the
// library's offsets: a pixel's line index is its column shifted by S per row
// counted from the bottom (theta < pi/2) or from the top (theta > pi/2).
std::vector<std::vector<std::size_t>> brute_lines(std::size_t S, bool above, std::size_t H, std::size_t W) {
  const std::size_t L = S * (H - 1) + W;
  std::vector<std::vector<std::size_t>> lines(L);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t shift = above ? i * S : (H - 1 - i) * S;
      lines.at(c + shift).push_back(i * W + c);
    }
  return lines;
}

double gelu_ref(double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / pi) * (x + 0.044715 * x * x * x))); }
double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// 1x1 conv on a [B,C,1,L] vector by loops.
std::vector<double> pointwise(const std::vector<double>& in, std::size_t B, std::size_t Cin, std::size_t L,
                              const Tensor& w) {
  const std::size_t Cout = w.dim(0);
  std::vector<double> out(B * Cout * L, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t j = 0; j < L; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < Cin; ++c) s += w.at(o, c, 0, 0) * in[(n * Cin + c) * L + j];
        out[(n * Cout + o) * L + j] = s;
      }
  return out;
}

// SOA layer without chaining, computed step by step from the definitions.
Tensor soa_reference(const Tensor& F, double theta, const Tensor& reduce, const Tensor& expand) {
  const std::size_t B = F.dim(0), C = F.dim(1), H = F.dim(2), W = F.dim(3), hid = reduce.dim(0);
  const double s = std::max(std::abs(std::cos(theta) / std::sin(theta)), 1e-2);
  const std::size_t lo = static_cast<std::size_t>(std::floor(s));
  const double lambda = s - std::floor(s);
  const bool above = theta > pi / 2;
  Tensor out(F.shape());
  for (std::size_t branch = 0; branch < 2; ++branch) {
    const std::size_t S = std::min(lo + branch, std::max<std::size_t>(W - 1, 1));
    const double weight = branch == 0 ? 1.0 - lambda : lambda;
    auto lines = brute_lines(S, above, H, W);
    const std::size_t L = lines.size();
    std::vector<double> pooled(B * C * L);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < L; ++j) {
          double sum = 0;
          for (std::size_t px : lines[j]) sum += F[((n * C + c) * H * W) + px];
          pooled[(n * C + c) * L + j] = sum / (static_cast<double>(lines[j].size()) + kEps);
        }
    auto h = pointwise(pooled, B, C, L, reduce);
    for (auto& v : h) v = gelu_ref(v);
    auto a = pointwise(h, B, hid, L, expand);
    for (auto& v : a) v = sigmoid_ref(v);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < L; ++j)
          for (std::size_t px : lines[j]) {
            const std::size_t idx = (n * C + c) * H * W + px;
            out[idx] += weight * F[idx] * a[(n * C + c) * L + j];
          }
  }
  return out;
}

struct SoaProbe {
  ParamSet params;
  BatchNormMap bns;
  Tensor x;
};

SoaProbe make_soa_probe(std::uint64_t seed, std::size_t B, std::size_t C, std::size_t H, std::size_t W, double theta) {
  std::mt19937_64 rng(seed);
  SoaProbe p;
  init_bottleneck(p.params, p.bns, "att.", C, soa_bottleneck_settings(), rng);
  p.params["theta"] = Tensor::scalar(raw_from_theta(theta));
  p.x = Tensor::uniform({B, C, H, W}, rng);
  return p;
}

SoaOutput run_soa(ad::Graph& g, SoaProbe& p, const SoaSettings& settings = {}, const std::set<std::string>& frozen = {},
                  const Tensor* x = nullptr) {
  VarMap vars = bind_params(g, p.params, frozen);
  ad::Var in = g.input(x ? *x : p.x);
  return soa_layer_forward(g, vars, p.bns, "", "theta", in, std::nullopt, settings);
}

}  // namespace

TEST_CASE("geometry examples") {
  auto g = build_orientation(pi / 2, 3, 4);
  CHECK(g.step == 0);
  CHECK(g.length == 4);
  CHECK(g.counts == std::vector<std::size_t>{3, 3, 3, 3});
  CHECK(g.offsets == std::vector<std::size_t>{0, 0, 0});

  g = build_orientation(pi / 4, 3, 4);
  CHECK(g.step == 1);
  CHECK(g.length == 6);
  CHECK(g.offsets == std::vector<std::size_t>{2, 1, 0});

  g = build_orientation(3 * pi / 4, 2, 2);
  CHECK(g.step == 1);
  CHECK(g.offsets == std::vector<std::size_t>{0, 1});
  CHECK(g.length == 3);
  CHECK(g.counts == std::vector<std::size_t>{1, 2, 1});
}

TEST_CASE("geometry rejects theta outside (0, pi)") {
  for (double t : {0.0, pi, -0.1, 4.0, std::nan("")}) CHECK_THROWS_AS(build_orientation(t, 4, 4), std::invalid_argument);
}

TEST_CASE("line assignment partitions the grid") {
  std::vector<double> grid;
  for (double t = 0.1; t < 3.11; t += 0.2) grid.push_back(t);
  grid.push_back(3.04);
  for (double theta : grid)
    for (auto [H, W] : {std::pair<std::size_t, std::size_t>{4, 4}, {7, 5}, {8, 8}}) {
      const auto g = build_orientation(theta, H, W);
      INFO("theta " << theta << " H " << H << " W " << W);
      CHECK(g.length == g.step * (H - 1) + W);
      std::vector<int> seen(H * W, 0);
      std::size_t total = 0;
      const auto lines = brute_lines(g.step, theta > pi / 2, H, W);
      REQUIRE(lines.size() == g.length);
      for (std::size_t j = 0; j < g.length; ++j) {
        CHECK(g.counts[j] == lines[j].size());
        CHECK(g.counts[j] > 0);
        total += g.counts[j];
        for (std::size_t px : lines[j]) {
          ++seen[px];
          CHECK(g.line_of(px / W, px % W) == j);
        }
      }
      CHECK(total == H * W);
      for (int s : seen) CHECK(s == 1);
    }
}

TEST_CASE("oap examples") {
  Tensor F({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor v = oap_forward(F, build_orientation(pi / 2, 2, 2));
  CHECK(v[0] == 4.0 / (2.0 + kEps));
  CHECK(v[1] == 6.0 / (2.0 + kEps));

  auto g = build_orientation(pi / 4, 2, 2);
  CHECK(g.offsets == std::vector<std::size_t>{1, 0});
  v = oap_forward(F, g);
  REQUIRE(v.numel() == 3);
  CHECK(std::abs(v[0] - 3.0) < 1e-7);
  CHECK(std::abs(v[1] - 2.5) < 1e-7);
  CHECK(std::abs(v[2] - 2.0) < 1e-7);

  g = build_orientation(0.7, 5, 6);
  v = oap_forward(Tensor({1, 1, 5, 6}, 0.8), g);
  for (std::size_t j = 0; j < g.length; ++j) {
    const double n = static_cast<double>(g.counts[j]);
    CHECK(std::abs(v[j] - 0.8 * n / (n + kEps)) < 1e-15);
  }
}

TEST_CASE("oap shape mismatch rejected") {
  CHECK_THROWS_AS(oap_forward(Tensor::ones({1, 1, 3, 4}), build_orientation(0.5, 4, 4)), std::invalid_argument);
}

TEST_CASE("vertical oap equals avg_pool_height up to epsilon") {
  std::mt19937_64 rng(2);
  for (std::size_t H : {2, 3, 8}) {
    Tensor F = Tensor::uniform({2, 3, H, 5}, rng, 0.5, 1.5);
    Tensor a = oap_forward(F, build_orientation(pi / 2, H, 5));
    Tensor b = avg_pool_height(F);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(std::abs(a[i] - b[i]) / std::abs(b[i]) < 1e-6);
      CHECK(std::abs(a[i] - b[i] * H / (H + kEps)) < 1e-14);
    }
  }
}

TEST_CASE("permuting values within a line leaves oap unchanged") {
  std::mt19937_64 rng(6);
  for (double theta : {0.4, 1.1, 2.3}) {
    const std::size_t H = 6, W = 5;
    auto g = build_orientation(theta, H, W);
    auto lines = brute_lines(g.step, theta > pi / 2, H, W);
    // Dyadic values keep every partial sum exact.
    Tensor F({1, 2, H, W});
    std::uniform_int_distribution<int> pick(-64, 64);
    for (auto& v : F.data()) v = pick(rng) / 16.0;
    Tensor P = F;
    for (const auto& line : lines) {
      std::vector<std::size_t> perm = line;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < line.size(); ++k) P[c * H * W + line[k]] = F[c * H * W + perm[k]];
    }
    CHECK(oap_forward(F, g) == oap_forward(P, g));
  }
}

TEST_CASE("fold_back is the inverse assignment") {
  auto g = build_orientation(0.6, 4, 5);
  std::mt19937_64 rng(8);
  Tensor a = Tensor::uniform({1, 2, 1, g.length}, rng);
  Tensor grid = fold_back(a, g);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t w = 0; w < 5; ++w) CHECK(grid.at(0, c, i, w) == a.at(0, c, 0, w + g.offsets[i]));
}

TEST_CASE("soa layer matches a step-by-step reference") {
  for (double theta : {1.2, 0.4, 2.0, 0.05}) {
    auto p = make_soa_probe(31, 2, 8, 4, 4, theta);
    ad::Graph g;
    SoaOutput out = run_soa(g, p);
    Tensor ref = soa_reference(p.x, out.theta, p.params.at("att.reduce"), p.params.at("att.expand"));
    INFO("theta " << theta);
    CHECK(max_abs_diff(g.value(out.features), ref) < 1e-12);
  }
}

TEST_CASE("soa at pi/2 with saturated attention is the identity") {
  auto p = make_soa_probe(4, 2, 8, 6, 6, pi / 2);
  for (auto& v : p.params["att.reduce"].data()) v = 5.0;
  for (auto& v : p.params["att.expand"].data()) v = 5.0;
  Tensor x = p.x;
  for (auto& v : x.data()) v = 0.5 + 0.25 * (v + 1.0);
  ad::Graph g;
  SoaOutput out = run_soa(g, p, {}, {}, &x);
  CHECK(out.theta == pi / 2);
  CHECK(std::abs(out.lambda - 0.01) < 1e-12);
  CHECK(out.branches.at(0).geometry.step == 0);
  CHECK(max_abs_diff(g.value(out.features), x) < 1e-9);
}

TEST_CASE("integer s collapses to the single-step pipeline") {
  auto p = make_soa_probe(5, 2, 8, 5, 5, pi / 4);
  ad::Graph g1, g2;
  SoaOutput blended = run_soa(g1, p);
  SoaSettings forced;
  forced.forced_step = 1;
  SoaOutput single = run_soa(g2, p, forced);
  CHECK(blended.lambda < 1e-12);
  CHECK(max_abs_diff(g1.value(blended.features), g2.value(single.features)) < 1e-12);
}

TEST_CASE("soa output is continuous across a step breakpoint") {
  auto at = [](double s) {
    auto p = make_soa_probe(6, 2, 8, 6, 6, std::atan(1.0 / s));
    ad::Graph g;
    return g.value(run_soa(g, p).features);
  };
  CHECK(max_abs_diff(at(2.0 - 1e-6), at(2.0 + 1e-6)) < 1e-6);
}

TEST_CASE("theta gradient flows unless frozen") {
  auto p = make_soa_probe(7, 2, 8, 6, 6, 1.2);
  std::mt19937_64 rng(70);
  Tensor w = Tensor::uniform(p.x.shape(), rng);
  {
    ad::Graph g;
    SoaOutput out = run_soa(g, p);
    auto grads = g.backward(ad::dot_constant(g, out.features, w));
    REQUIRE(grads.count("theta"));
    CHECK(grads.at("theta")[0] != 0.0);
  }
  {
    ad::Graph g;
    SoaOutput out = run_soa(g, p, {}, {"theta"});
    auto grads = g.backward(ad::dot_constant(g, out.features, w));
    CHECK((!grads.count("theta") || grads.at("theta")[0] == 0.0));
  }
}

TEST_CASE("attention lies strictly inside (0, 1)") {
  auto p = make_soa_probe(9, 2, 8, 8, 8, 0.8);
  ad::Graph g;
  SoaOutput out = run_soa(g, p);
  for (const auto& b : out.branches)
    for (double v : g.value(b.attention).data()) CHECK((v > 0.0 && v < 1.0));

  std::mt19937_64 rng(10);
  ParamSet params;
  BatchNormMap bns;
  init_cva_block(params, bns, "b.", BlockShape{4, 8, 2, 4}, rng);
  ad::Graph g2;
  VarMap vars = bind_params(g2, params);
  ad::Var prev = g2.input(Tensor::uniform({2, 4, 1, 8}, rng, 0.0, 1.0));
  CvaOutput cva = cva_block_forward(g2, vars, bns, "b.", g2.input(Tensor::uniform({2, 4, 8, 8}, rng)), prev, 2);
  for (double v : g2.value(cva.vertical).data()) CHECK((v > 0.0 && v < 1.0));
}

// ---------------------------------------------------------------------------
// CVA block
// ---------------------------------------------------------------------------

namespace {

Tensor conv_ref(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3), Co = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor y({B, Co, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t a = 0; a < k; ++a)
              for (std::size_t b = 0; b < k; ++b) {
                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (r >= 0 && q >= 0 && r < static_cast<long>(H) && q < static_cast<long>(W))
                  s += x.at(n, c, r, q) * w.at(o, c, a, b);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

}  // namespace

TEST_CASE("cva block matches a step-by-step reference") {
  std::mt19937_64 rng(40);
  const std::size_t B = 2, Cin = 2, Cout = 8, H = 4, W = 4, Cp = 4;
  ParamSet params;
  BatchNormMap bns;
  init_cva_block(params, bns, "b.", BlockShape{Cin, Cout, 1, Cp}, rng);
  params["b.conv3.bias"] = Tensor::uniform({Cout}, rng);
  params["b.att.bn.gamma"] = Tensor::uniform(params["b.att.bn.gamma"].shape(), rng, 0.5, 1.5);
  params["b.att.bn.beta"] = Tensor::uniform(params["b.att.bn.beta"].shape(), rng);
  const Tensor x = Tensor::uniform({B, Cin, H, W}, rng);
  const Tensor prev = Tensor::uniform({B, Cp, 1, 2 * W}, rng, 0.0, 1.0);

  ad::Graph g;
  VarMap vars = bind_params(g, params);
  BatchNormMap lib_bns = bns;
  CvaOutput out = cva_block_forward(g, vars, lib_bns, "b.", g.input(x), g.input(prev), 1);

  // (1) F_conv = ReLU(f1x1(f3x3(F)) + f1x1(F))
  Tensor h = conv_ref(conv_ref(x, params["b.conv3.weight"], &params["b.conv3.bias"], 1, 1), params["b.conv1.weight"],
                      nullptr, 1, 0);
  Tensor d = conv_ref(x, params["b.down.weight"], nullptr, 1, 0);
  Tensor fconv(h.shape());
  for (std::size_t i = 0; i < h.numel(); ++i) fconv[i] = std::max(0.0, h[i] + d[i]);
  // (2) y = sigmoid(f2(hswish(BN(f1(column means)))))
  std::vector<double> pooled(B * Cout * W, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < Cout; ++c)
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t i = 0; i < H; ++i) pooled[(n * Cout + c) * W + w] += fconv.at(n, c, i, w);
        pooled[(n * Cout + c) * W + w] /= static_cast<double>(H);
      }
  const Tensor& red = params["b.att.reduce"];
  const std::size_t hid = red.dim(0);
  auto z = pointwise(pooled, B, Cout, W, red);
  for (std::size_t k = 0; k < hid; ++k) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t w = 0; w < W; ++w) mean += z[(n * hid + k) * W + w];
    mean /= static_cast<double>(B * W);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t w = 0; w < W; ++w) var += std::pow(z[(n * hid + k) * W + w] - mean, 2);
    var /= static_cast<double>(B * W);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t w = 0; w < W; ++w) {
        double& v = z[(n * hid + k) * W + w];
        v = params["b.att.bn.gamma"][k] * (v - mean) / std::sqrt(var + 1e-5) + params["b.att.bn.beta"][k];
        v = v * std::max(0.0, v + 3.0) / 6.0;
      }
  }
  auto y = pointwise(z, B, hid, W, params["b.att.expand"]);
  for (auto& v : y) v = sigmoid_ref(v);
  // (3) chain: conv1x1(maxpool_2(prev))
  std::vector<double> pp(B * Cp * W);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < Cp; ++c)
      for (std::size_t w = 0; w < W; ++w)
        pp[(n * Cp + c) * W + w] = std::max(prev.at(n, c, 0, 2 * w), prev.at(n, c, 0, 2 * w + 1));
  auto chain = pointwise(pp, B, Cp, W, params["b.chain.weight"]);
  // (4) every column reweighted
  Tensor ref(fconv.shape());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < Cout; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t a = (n * Cout + c) * W + w;
          ref.at(n, c, i, w) = fconv.at(n, c, i, w) * y[a] * chain[a];
        }
  CHECK(max_abs_diff(g.value(out.features), ref) < 1e-12);
}

TEST_CASE("cva block with saturated attention passes F_conv through") {
  std::mt19937_64 rng(41);
  ParamSet params;
  BatchNormMap bns;
  init_cva_block(params, bns, "b.", BlockShape{4, 8, 2, 0}, rng);
  params["b.att.bn.gamma"].fill(0.0);
  params["b.att.bn.beta"].fill(10.0);
  params["b.att.expand"].fill(10.0);
  ad::Graph g;
  VarMap vars = bind_params(g, params);
  ad::Var fconv = residual_forward(g, vars, "b.", g.input(Tensor::uniform({2, 4, 8, 8}, rng)), 2);
  CvaOutput out = cva_attention(g, vars, bns, "b.", fconv, std::nullopt);
  for (double v : g.value(out.attention).data()) CHECK(v == 1.0);
  CHECK(g.value(out.features) == g.value(fconv));
}

TEST_CASE("cva block with constant input and identity weights") {
  std::mt19937_64 rng(42);
  const std::size_t C = 4;
  ParamSet params;
  BatchNormMap bns;
  init_cva_block(params, bns, "b.", BlockShape{C, C, 1, 0}, rng);
  params["b.conv3.weight"].fill(0.0);
  params["b.conv1.weight"].fill(0.0);
  for (std::size_t c = 0; c < C; ++c) {
    params["b.conv3.weight"].at(c, c, 1, 1) = 1.0;
    params["b.conv1.weight"].at(c, c, 0, 0) = 1.0;
  }
  ad::Graph g;
  VarMap vars = bind_params(g, params);
  ad::Var x = g.input(Tensor({2, C, 6, 6}, 0.75));
  ad::Var fconv = residual_forward(g, vars, "b.", x, 1);
  for (double v : g.value(fconv).data()) CHECK(v == 1.5);
  CvaOutput out = cva_attention(g, vars, bns, "b.", fconv, std::nullopt);
  const Tensor& a = g.value(out.attention);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t w = 0; w < 6; ++w) CHECK(a.at(n, c, 0, w) == a.at(0, c, 0, 0));
  const Tensor& f = g.value(out.features);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t w = 0; w < 6; ++w) CHECK(f.at(n, c, i, w) == 1.5 * a.at(0, c, 0, 0));
}

TEST_CASE("chain rejects an attention map that does not pool to the width") {
  std::mt19937_64 rng(43);
  ParamSet params;
  BatchNormMap bns;
  init_cva_block(params, bns, "b.", BlockShape{4, 8, 2, 4}, rng);
  ad::Graph g;
  VarMap vars = bind_params(g, params);
  ad::Var x = g.input(Tensor::uniform({2, 4, 8, 8}, rng));
  ad::Var bad = g.input(Tensor::uniform({2, 4, 1, 6}, rng));
  CHECK_THROWS_AS(cva_block_forward(g, vars, bns, "b.", x, bad, 2), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Vertical degeneration
// ---------------------------------------------------------------------------

namespace {

ParamSet bottleneck_weights(std::mt19937_64& rng, std::size_t C) {
  const std::size_t hid = bottleneck_width(C);
  return {{"reduce", Tensor::normal({hid, C, 1, 1}, rng, 0.0, 0.5)},
          {"expand", Tensor::normal({C, hid, 1, 1}, rng, 0.0, 0.5)},
          {"bn.gamma", Tensor::uniform({hid}, rng, 0.5, 1.5)},
          {"bn.beta", Tensor::uniform({hid}, rng, -0.2, 0.2)}};
}

Tensor bottleneck_on(const ParamSet& w, const Tensor& pooled) {
  ad::Graph g;
  VarMap vars;
  for (const auto& [name, value] : w) vars.emplace("att." + name, g.param("att." + name, value));
  BatchNormMap bns;
  bns["att.bn"] = BatchNormState::identity(w.at("bn.gamma").numel());
  return g.value(bottleneck_forward(g, vars, bns, "att.", g.input(pooled), cva_bottleneck_settings()));
}

}  // namespace

TEST_CASE("soa at S=0 equals cva on random probes") {
  std::mt19937_64 rng(50);
  for (int k = 0; k < 5; ++k) {
    ParamSet w = bottleneck_weights(rng, 16);
    CHECK(soa_equals_cva_at_vertical(w, w, Tensor::uniform({4, 16, 8, 8}, rng)));
  }
}

TEST_CASE("mismatched weights are detected") {
  std::mt19937_64 rng(51);
  ParamSet w = bottleneck_weights(rng, 16);
  ParamSet other = w;
  other["expand"][3] += 0.5;
  CHECK_FALSE(soa_equals_cva_at_vertical(w, other, Tensor::uniform({4, 16, 8, 8}, rng)));
}

TEST_CASE("one hot column ranks highest on both paths") {
  std::mt19937_64 rng(52);
  const std::size_t C = 8, H = 8, W = 8, hot = 5;
  ParamSet w{{"reduce", Tensor({1, C, 1, 1}, 1.0 / C)},
             {"expand", Tensor({C, 1, 1, 1}, 1.0)},
             {"bn.gamma", Tensor({1}, 1.0)},
             {"bn.beta", Tensor({1}, 0.0)}};
  Tensor probe = Tensor::uniform({2, C, H, W}, rng, 0.0, 0.1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i) probe.at(n, c, i, hot) = 1.0;
  Tensor cva = bottleneck_on(w, avg_pool_height(probe));
  Tensor soa = bottleneck_on(w, oap_forward(probe, geometry_for_step(0, Tilt::below_vertical, H, W, 0.0)));
  for (const Tensor* a : {&cva, &soa})
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = 0;
        for (std::size_t col = 1; col < W; ++col)
          if (a->at(n, c, 0, col) > a->at(n, c, 0, best)) best = col;
        CHECK(best == hot);
      }
  CHECK(soa_equals_cva_at_vertical(w, w, probe));
}

TEST_CASE("theta parameterisation stays inside (0, pi)") {
  for (double raw : {-700.0, -30.0, -1.0, 0.0, 2.5, 30.0}) {
    const double t = theta_from_raw(raw);
    CHECK(t >= 0.0);
    CHECK(t <= pi);
  }
  for (double t : {0.3, 1.0, pi / 2, 2.9}) CHECK(std::abs(theta_from_raw(raw_from_theta(t)) - t) < 1e-14);
  CHECK(bottleneck_width(16) == 2);
  CHECK(reduction_factor(16) == 8);
  CHECK(reduction_factor(1024) == 32);
}
