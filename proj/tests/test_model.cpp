#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include "orient/model.hpp"

using namespace orient;

namespace {

ModelConfig small_config(Variant v, std::uint64_t seed = 3) {
  ModelConfig c;
  c.variant = v;
  c.input_size = 32;
  c.channels = {8, 8, 16, 16};
  c.seed = seed;
  return c;
}

Tensor random_frames(std::size_t B, std::size_t S, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform({B, 1, S, S}, rng);
}

}  // namespace

TEST_CASE("same seed builds identical state") {
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D}) {
    ModelConfig c;
    c.variant = v;
    c.seed = 17;
    ModelState a = build_model(c), b = build_model(c);
    REQUIRE(a.params.size() == b.params.size());
    for (const auto& [name, t] : a.params) CHECK(t == b.params.at(name));
    CHECK(a.frozen == b.frozen);
  }
  ModelConfig c;
  c.seed = 18;
  ModelConfig d;
  d.seed = 19;
  CHECK_FALSE(build_model(c).params.at("stem.weight") == build_model(d).params.at("stem.weight"));
}

TEST_CASE("channel list must have four entries") {
  ModelConfig c;
  c.channels = {16, 32, 64};
  CHECK_THROWS_AS(build_model(c), std::invalid_argument);
}

TEST_CASE("parameter accounting across variants") {
  auto counts = [](Variant v) {
    ModelConfig c;
    c.variant = v;
    return param_count(build_model(c));
  };
  const auto A = counts(Variant::A), B = counts(Variant::B), C = counts(Variant::C), D = counts(Variant::D);
  CHECK(A.theta.stored == 0);
  CHECK(B.theta.stored == 1);
  CHECK(C.theta.stored == 4);
  CHECK(C.total.trainable - B.total.trainable == 3);
  CHECK(C.total.stored - B.total.stored == 3);
  CHECK(D.total.stored == B.total.stored);
  CHECK(D.total.trainable == B.total.trainable - 1);
  CHECK(D.theta.trainable == 0);

  const std::size_t widths[] = {16, 32, 64, 128};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t ch = widths[i], r = std::max<std::size_t>(8, ch / 32);
    CHECK(B.bottleneck_per_block[i] == 2 * ch * (ch / r));
    CHECK(A.bottleneck_per_block[i] == 2 * ch * (ch / r));
  }
  // head input is the final width (GAP), no AU bits by default
  CHECK(B.head.stored == (128 + 1) * 4);
}

TEST_CASE("head width grows by the AU length") {
  ModelConfig c;
  c.use_au = true;
  CHECK(build_model(c).params.at("head.weight").shape() == Shape{4, 128 + 21});
}

TEST_CASE("variant D freezes theta near zero") {
  ModelConfig c;
  c.variant = Variant::D;
  ModelState m = build_model(c);
  CHECK(m.frozen.count("theta") == 1);
  CHECK(std::abs(m.thetas().at(0) - 1e-2) < 1e-12);
}

TEST_CASE("theta initialisation is pi/4 with bounded jitter") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig c = small_config(Variant::C, seed);
    for (double t : build_model(c).thetas()) CHECK(std::abs(t - std::numbers::pi / 4) <= 0.1 + 1e-12);
  }
}

TEST_CASE("forward shapes at the default scale") {
  ModelConfig c;
  ModelState m = build_model(c);
  ad::Graph g;
  VarMap vars = bind_params(g, m.params, m.frozen);
  ForwardTrace t = forward_graph(g, m, vars, random_frames(2, 64, 1), nullptr);
  CHECK(g.value(t.logits).shape() == Shape{2, 4});
  CHECK(g.value(t.features).shape() == Shape{2, 128, 4, 4});
}

TEST_CASE("zero input yields the head bias") {
  for (Variant v : {Variant::A, Variant::B, Variant::C}) {
    ModelConfig c = small_config(v);
    c.use_au = true;
    ModelState m = build_model(c);
    std::mt19937_64 rng(4);
    m.params["head.bias"] = Tensor::uniform({4}, rng);
    Tensor au({3, 21}, 0.0);
    Tensor logits = forward(m, Tensor({3, 1, 32, 32}, 0.0), &au);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) CHECK(logits.at(n, k) == m.params["head.bias"][k]);
  }
}

TEST_CASE("flipping one AU bit shifts logits by one head column") {
  ModelConfig c = small_config(Variant::B);
  c.use_au = true;
  ModelState m = build_model(c);
  std::mt19937_64 rng(5);
  m.params["head.weight"] = Tensor::uniform(m.params["head.weight"].shape(), rng);
  Tensor frames = random_frames(2, 32, 6);
  Tensor au({2, 21}, 0.0);
  au.at(0, 3) = 1.0;
  Tensor base = forward(m, frames, &au);
  const std::size_t bit = 12;
  Tensor flipped = au;
  flipped.at(0, bit) = 1.0;
  flipped.at(1, bit) = 1.0;
  Tensor moved = forward(m, frames, &flipped);
  const std::size_t col = 16 + bit;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(std::abs(moved.at(n, k) - base.at(n, k) - m.params["head.weight"].at(k, col)) < 1e-12);
}

TEST_CASE("AU protocol mismatches are rejected") {
  ModelState m = build_model(small_config(Variant::B));
  Tensor au({1, 21}, 0.0);
  CHECK_THROWS_AS(forward(m, random_frames(1, 32, 1), &au), std::invalid_argument);
  ModelConfig c = small_config(Variant::B);
  c.use_au = true;
  ModelState with = build_model(c);
  CHECK_THROWS_AS(forward(with, random_frames(1, 32, 1)), std::invalid_argument);
  Tensor bad({1, 21}, 0.5);
  CHECK_THROWS_AS(forward(with, random_frames(1, 32, 1), &bad), std::invalid_argument);
  CHECK_THROWS_AS(forward(m, random_frames(1, 64, 1)), std::invalid_argument);
}

TEST_CASE("chained attention is live") {
  for (Variant v : {Variant::A, Variant::B}) {
    ModelState m = build_model(small_config(v));
    Tensor frames = random_frames(2, 32, 7);
    ForwardOptions ablate;
    ablate.ablate_chain = true;
    Tensor a = forward(m, frames), b = forward(m, frames, nullptr, ablate);
    CHECK(max_abs_diff(a, b) > 0.0);

    ad::Graph g;
    VarMap vars = bind_params(g, m.params, m.frozen);
    ForwardTrace t = forward_graph(g, m, vars, frames, nullptr);
    auto grads = g.backward(ad::sum(g, t.logits));
    for (std::size_t i = 1; i < 4; ++i) {
      const Tensor& gc = grads.at(block_prefix(i) + "chain.weight");
      double norm = 0;
      for (double x : gc.data()) norm += std::abs(x);
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("logits stay finite over 1000 random probes") {
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D}) {
    ModelConfig c;
    c.variant = v;
    ModelState m = build_model(c);
    std::mt19937_64 rng(8);
    for (int chunk = 0; chunk < 10; ++chunk) {
      Tensor frames = Tensor::uniform({100, 1, 64, 64}, rng, -1.0, 1.0);
      CHECK(forward(m, frames).all_finite());
    }
  }
}

TEST_CASE("variant A and vertical-pinned B agree after a weight transplant") {
  ModelConfig ca = small_config(Variant::A, 11);
  ModelState a = build_model(ca);
  ModelConfig cb = ca;
  cb.variant = Variant::B;
  cb.soa_activation = Activation::hard_swish;
  cb.soa_batchnorm = true;
  cb.oap_epsilon = 0.0;
  ModelState b = build_model(cb);
  for (const auto& [name, t] : a.params) {
    REQUIRE(b.params.count(name));
    b.params[name] = t;
  }
  ForwardOptions fb;
  fb.forced_step = 0;
  for (bool training : {false, true}) {
    ForwardOptions fa;
    fa.training = training;
    fb.training = training;
    Tensor frames = random_frames(3, 32, 12);
    ModelState a2 = a, b2 = b;
    CHECK(max_abs_diff(forward(a2, frames, nullptr, fa), forward(b2, frames, nullptr, fb)) < 1e-9);
  }
}

TEST_CASE("eval mode uses running statistics") {
  ModelState m = build_model(small_config(Variant::A));
  Tensor one = random_frames(1, 32, 13);
  CHECK(forward(m, one).all_finite());
  ForwardOptions training;
  training.training = true;
  CHECK_THROWS_AS(forward(m, one, nullptr, training), std::invalid_argument);
}
