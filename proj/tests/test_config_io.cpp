#include <catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include "orient/io.hpp"

using namespace orient;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("orient_test_" + name);
  fs::remove_all(p);
  return p;
}

template <class F>
std::string config_error(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config yields the defaults") {
  const RunConfig r = parse_config(json::object(), {}, nullptr);
  CHECK(r.model.variant == Variant::B);
  CHECK(r.model.input_size == 64);
  CHECK(r.model.channels == std::vector<std::size_t>{16, 32, 64, 128});
  CHECK(r.model.num_classes == 4);
  CHECK_FALSE(r.model.use_au);
  CHECK(r.model.theta_init == std::numbers::pi / 4);
  CHECK(r.model.theta_jitter == 0.1);
  CHECK(r.model.frozen_theta == 1e-2);
  CHECK(r.model.head_input == HeadInput::gap);
  CHECK(r.model.oap_denominator == OapDenominator::count);
  CHECK(r.model.oap_epsilon == 1e-8);
  CHECK(r.model.soa_activation == Activation::gelu);
  CHECK_FALSE(r.model.soa_batchnorm);
  CHECK(r.model.bn_epsilon == 1e-5);
  CHECK(r.model.bn_momentum == 0.1);

  CHECK(r.data.num_subjects == 8);
  CHECK(r.data.samples_per_subject == 30);
  CHECK(r.data.num_classes == 4);
  CHECK(r.data.image_size == 64);
  CHECK(r.data.motion_axis == 0.0);
  CHECK(r.data.motion_amplitude == 1.5);
  CHECK(r.data.distractor_amplitude == 0.75);
  CHECK(r.data.noise_std == 0.01);
  CHECK(r.data.seed == 0);

  CHECK(r.optimizer.kind == OptimizerKind::adam);
  CHECK(r.optimizer.lr == 1e-3);
  CHECK(r.optimizer.momentum == 0.9);
  CHECK(r.optimizer.beta1 == 0.9);
  CHECK(r.optimizer.beta2 == 0.999);
  CHECK(r.optimizer.epsilon == 1e-8);
  CHECK(r.optimizer.weight_decay == 0.0);

  CHECK(r.epochs == 40);
  CHECK(r.batch_size == 16);
  CHECK(r.theta_lr_multiplier == 5.0);
  CHECK(r.theta_warmup_epochs == 0);
  CHECK(r.seed == 0);
  CHECK(r.output_dir == "runs/default");
  CHECK(r.validation);
  CHECK(r.folds.empty());
  CHECK(r.repeats == 1);
  CHECK_FALSE(r.compare_to);
  CHECK(r.jobs == 1);
}

TEST_CASE("overrides and key-path errors") {
  CHECK(parse_config(json::object(), {"model.variant=C"}, nullptr).model.variant == Variant::C);
  CHECK(parse_config(json::object(), {"optimizer.lr=0.01", "epochs=3"}, nullptr).epochs == 3);

  const std::string bad_variant = config_error([] { parse_config(json::object(), {"model.variant=E"}, nullptr); });
  CHECK(bad_variant.find("model.variant") != std::string::npos);
  CHECK(bad_variant.find("{A,B,C,D}") != std::string::npos);

  const std::string unknown = config_error([] { parse_config(json{{"model", {{"widths", 3}}}}, {}, nullptr); });
  CHECK(unknown.find("model.widths") != std::string::npos);

  const std::string type = config_error([] { parse_config(json{{"data", {{"noise_std", "loud"}}}}, {}, nullptr); });
  CHECK(type.find("data.noise_std") != std::string::npos);
  CHECK(type.find("number") != std::string::npos);

  CHECK_FALSE(config_error([] { parse_config(json::object(), {"novalue"}, nullptr); }).empty());
  CHECK_FALSE(config_error([] { parse_config(json::array(), {}, nullptr); }).empty());
  CHECK_FALSE(config_error([] { parse_config(json::object(), {"model.channels=[16,32,64]"}, nullptr); }).empty());
  CHECK_FALSE(config_error([] { parse_config(json::object(), {"data.image_size=32"}, nullptr); }).empty());
}

TEST_CASE("seed precedence: file, then environment, then override") {
  const json file{{"seed", 3}};
  CHECK(parse_config(file, {}, nullptr).seed == 3);
  CHECK(parse_config(file, {}, "11").seed == 11);
  CHECK(parse_config(file, {"seed=42"}, "11").seed == 42);
  CHECK_FALSE(config_error([&] { parse_config(file, {}, "-4"); }).empty());
  CHECK_FALSE(config_error([&] { parse_config(file, {}, "12x"); }).empty());
}

TEST_CASE("echoed config round-trips") {
  const RunConfig r = parse_config(json{{"model", {{"variant", "C"}, {"use_au", true}}}, {"repeats", 2}},
                                   {"compare_to=D", "folds=[0,2]"}, nullptr);
  const std::string once = canonical_dump(run_to_json(r));
  const RunConfig back = parse_config(json::parse(once), {}, nullptr);
  CHECK(canonical_dump(run_to_json(back)) == once);
  CHECK(back.compare_to == Variant::D);
  CHECK(back.folds == std::vector<int>{0, 2});
}

TEST_CASE("existing output directory is a collision") {
  const fs::path dir = temp_dir("collide");
  create_fresh_dir(dir);
  write_text(dir / "x", "1");
  CHECK_THROWS_WITH(create_fresh_dir(dir), Catch::Matchers::ContainsSubstring("already exists"));
  fs::remove_all(dir);
}

TEST_CASE("FSLT byte layout") {
  NamedTensors ts{{"ab", Tensor({2}, std::vector<double>{1.0, -2.5})}};
  std::ostringstream os;
  write_fslt(os, ts);
  const std::string b = os.str();
  REQUIRE(b.size() == 4 + 4 + 4 + 4 + 2 + 4 + 8 + 16);
  CHECK(b.substr(0, 4) == "FSLT");
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
    return v;
  };
  auto u64 = [&](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
    return v;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 1);
  CHECK(u32(12) == 2);
  CHECK(b.substr(16, 2) == "ab");
  CHECK(u32(18) == 1);
  CHECK(u64(22) == 2);
  CHECK(std::bit_cast<double>(u64(30)) == 1.0);
  CHECK(std::bit_cast<double>(u64(38)) == -2.5);
}

TEST_CASE("FSLT round trip and corrupt input") {
  std::mt19937_64 rng(2);
  NamedTensors ts{{"w", Tensor::normal({2, 3, 4}, rng)}, {"s", Tensor::scalar(std::nan(""))}};
  std::ostringstream os;
  write_fslt(os, ts);
  std::istringstream is(os.str());
  NamedTensors back = read_fslt(is);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "w");
  CHECK(back[0].second == ts[0].second);
  CHECK(std::isnan(back[1].second.item()));

  const std::string bytes = os.str();
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::istringstream t(bytes.substr(0, cut));
    CHECK_THROWS_AS(read_fslt(t), std::runtime_error);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream m(bad);
  CHECK_THROWS_WITH(read_fslt(m), Catch::Matchers::ContainsSubstring("magic"));
  CHECK_THROWS_AS(find_tensor(back, "nope"), std::out_of_range);
}

TEST_CASE("dataset save and load preserve every sample") {
  DatasetSpec spec;
  spec.num_subjects = 3;
  spec.samples_per_subject = 5;
  spec.image_size = 16;
  const auto data = generate_dataset(spec);
  const fs::path dir = temp_dir("dataset");
  save_dataset(dir, spec, data);
  CHECK(fs::exists(dir / subject_file(2)));
  const LoadedDataset back = load_dataset(dir);
  REQUIRE(back.samples.size() == data.size());
  CHECK(back.spec.num_subjects == 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back.samples[i].subject == data[i].subject);
    CHECK(back.samples[i].label == data[i].label);
    CHECK(back.samples[i].au_bits == data[i].au_bits);
    CHECK(back.samples[i].difference == data[i].difference);
    CHECK(back.samples[i].onset == data[i].onset);
  }
  CHECK_THROWS(save_dataset(dir, spec, data));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip reproduces logits") {
  ModelConfig c;
  c.variant = Variant::C;
  c.input_size = 32;
  c.channels = {8, 8, 16, 16};
  c.use_au = true;
  c.seed = 9;
  ModelState m = build_model(c);
  // move the running statistics off their initial values
  std::mt19937_64 rng(1);
  Tensor frames = Tensor::uniform({4, 1, 32, 32}, rng);
  Tensor au({4, 21}, 0.0);
  au.at(1, 4) = 1.0;
  ForwardOptions train;
  train.training = true;
  forward(m, frames, &au, train);

  const fs::path dir = temp_dir("ckpt");
  fs::create_directories(dir);
  save_checkpoint(dir / "fold_0", m);
  ModelState back = load_checkpoint(dir / "fold_0");
  CHECK(back.config.variant == Variant::C);
  CHECK(back.config.seed == 9);
  CHECK(forward(back, frames, &au) == forward(m, frames, &au));
  CHECK(load_checkpoint(dir / "fold_0.json").params == m.params);
  fs::remove_all(dir);
}
