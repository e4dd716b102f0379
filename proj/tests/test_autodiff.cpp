#include <catch_amalgamated.hpp>

#include <random>

#include "orient/gradsuite.hpp"

using namespace orient;

TEST_CASE("sum gives an all-ones gradient") {
  ad::Graph g;
  std::mt19937_64 rng(1);
  ad::Var x = g.param("x", Tensor::uniform({2, 3, 4, 5}, rng));
  auto grads = g.backward(ad::sum(g, x));
  for (double v : grads.at("x").data()) CHECK(v == 1.0);
}

TEST_CASE("hard_swish gradient at 1 is 5/6") {
  ad::Graph g;
  ad::Var x = g.param("x", Tensor({2, 2}, 1.0));
  auto grads = g.backward(ad::sum(g, ad::hard_swish(g, x)));
  for (double v : grads.at("x").data()) CHECK(std::abs(v - 5.0 / 6.0) < 1e-15);
}

TEST_CASE("hard_swish gradient at the kink is zero") {
  ad::Graph g;
  ad::Var x = g.param("x", Tensor({1}, -3.0));
  CHECK(g.backward(ad::sum(g, ad::hard_swish(g, x))).at("x")[0] == 0.0);
}

TEST_CASE("non-scalar loss rejected") {
  ad::Graph g;
  ad::Var x = g.param("x", Tensor::ones({2, 2}));
  CHECK_THROWS(g.backward(ad::relu(g, x)));
}

TEST_CASE("conv -> sigmoid -> sum against finite differences") {
  std::mt19937_64 rng(3);
  ParamSet probe{{"x", Tensor::uniform({1, 2, 3, 3}, rng)},
                 {"w", Tensor::uniform({2, 2, 3, 3}, rng)},
                 {"b", Tensor::uniform({2}, rng)}};
  GraphBuilder build = [](ad::Graph& g, const ParamSet& p) {
    auto v = register_params(g, p);
    return ad::sum(g, ad::sigmoid(g, ad::conv2d(g, v.at("x"), v.at("w"), v.at("b"), Conv2dOptions{1, 1})));
  };
  GradReport r = gradcheck(build, probe);
  CHECK(r.passed(1e-6));
  CHECK(r.params.size() == 3);
}

TEST_CASE("linear function is exact under central differences") {
  std::mt19937_64 rng(4);
  ParamSet probe{{"x", Tensor::uniform({3, 4}, rng)}};
  Tensor weights = Tensor::uniform({3, 4}, rng);
  GraphBuilder build = [weights](ad::Graph& g, const ParamSet& p) {
    auto v = register_params(g, p);
    return ad::dot_constant(g, ad::scale(g, v.at("x"), 2.5), weights);
  };
  GradCheckOptions opt;
  opt.step = 1e-3;
  CHECK(gradcheck(build, probe, opt).max_rel_error < 1e-10);
}

TEST_CASE("two consumers accumulate gradients") {
  std::mt19937_64 rng(5);
  Tensor x0 = Tensor::uniform({2, 3}, rng);
  auto grad_of = [&](int which) {
    ad::Graph g;
    ad::Var x = g.param("x", x0);
    ad::Var f = ad::sum(g, ad::sigmoid(g, x));
    ad::Var h = ad::sum(g, ad::mul(g, x, x));
    ad::Var loss = which == 0 ? f : which == 1 ? h : ad::add(g, f, h);
    return g.backward(loss).at("x");
  };
  Tensor gf = grad_of(0), gh = grad_of(1), both = grad_of(2);
  for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(std::abs(both[i] - (gf[i] + gh[i])) < 1e-15);
}

TEST_CASE("backward is bitwise repeatable") {
  std::mt19937_64 rng(8);
  auto [params, build] = cva_block_probe()(rng);
  auto once = [&] {
    ad::Graph g;
    return g.backward(build(g, params));
  };
  auto a = once(), b = once();
  for (const auto& [name, t] : a) CHECK(t == b.at(name));
}

TEST_CASE("identical seeds give identical reports") {
  auto run = [] {
    std::mt19937_64 rng(12);
    auto [params, build] = soa_block_probe(1.2)(rng);
    GradCheckOptions opt;
    opt.seed = 99;
    opt.max_coords_per_param = 6;
    return gradcheck(build, params, opt);
  };
  GradReport a = run(), b = run();
  REQUIRE(a.params.size() == b.params.size());
  CHECK(a.max_rel_error == b.max_rel_error);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].worst_index == b.params[i].worst_index);
    CHECK(a.params[i].analytic == b.params[i].analytic);
    CHECK(a.params[i].numeric == b.params[i].numeric);
  }
}

TEST_CASE("NaN surfaces with the coordinate") {
  ParamSet probe{{"x", Tensor({3}, {1.0, std::nan(""), 2.0})}};
  GraphBuilder build = [](ad::Graph& g, const ParamSet& p) {
    auto v = register_params(g, p);
    return ad::sum(g, ad::mul(g, v.at("x"), v.at("x")));
  };
  GradReport r = gradcheck(build, probe);
  REQUIRE(r.nan_error);
  CHECK(r.nan_error->find("'x' at coordinate") != std::string::npos);
  CHECK_FALSE(r.passed(1.0));
}

TEST_CASE("CVA block on a 4x8x8 probe") {
  auto e = run_check("cva_block", kPrimitiveTolerance, 1, cva_block_probe(), 21, kCurvedStep);
  INFO(format_suite_row(e));
  CHECK(e.passed());
}

TEST_CASE("SOA layer including theta at 1.2") {
  auto e = run_check("soa", kCompositeTolerance, 1, soa_block_probe(1.2), 22, kCurvedStep);
  INFO(format_suite_row(e));
  CHECK(e.passed());
  bool saw_theta = false;
  for (const auto& p : e.report.params) saw_theta = saw_theta || p.name.find("theta") != std::string::npos;
  CHECK(saw_theta);
}

TEST_CASE("every primitive passes on three probes") {
  std::uint64_t seed = 100;
  for (const auto& p : primitive_probes()) {
    auto e = run_check(p.name, kPrimitiveTolerance, 3, p.factory, seed++, p.step);
    INFO(format_suite_row(e));
    CHECK(e.passed());
  }
}
