#pragma once

// JSON run configuration: defaults, strict parsing with key-path errors,
// dotted overrides, the ORIENT_ATTN_SEED environment override and canonical
// serialisation for echo/round-trip.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "orient/train.hpp"

namespace orient {

using json = nlohmann::json;

// Raised for malformed or invalid configuration input.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline const char* head_input_name(HeadInput h) { return h == HeadInput::gap ? "gap" : "flatten"; }
inline const char* denominator_name(OapDenominator d) { return d == OapDenominator::count ? "count" : "height"; }
inline const char* activation_name(Activation a) { return a == Activation::gelu ? "gelu" : "hard_swish"; }

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline json model_to_json(const ModelConfig& m, bool include_seed) {
  json j{
      {"variant", std::string(1, variant_letter(m.variant))},
      {"input_size", m.input_size},
      {"channels", m.channels},
      {"num_classes", m.num_classes},
      {"use_au", m.use_au},
      {"au_length", m.au_length},
      {"theta_init", m.theta_init},
      {"theta_jitter", m.theta_jitter},
      {"frozen_theta", m.frozen_theta},
      {"head_input", head_input_name(m.head_input)},
      {"oap_denominator", denominator_name(m.oap_denominator)},
      {"oap_epsilon", m.oap_epsilon},
      {"soa_activation", activation_name(m.soa_activation)},
      {"soa_batchnorm", m.soa_batchnorm},
      {"bn_epsilon", m.bn_epsilon},
      {"bn_momentum", m.bn_momentum},
  };
  if (include_seed) j["seed"] = m.seed;
  return j;
}

inline json data_to_json(const DatasetSpec& d) {
  return json{
      {"num_subjects", d.num_subjects},
      {"samples_per_subject", d.samples_per_subject},
      {"num_classes", d.num_classes},
      {"image_size", d.image_size},
      {"motion_axis", d.motion_axis},
      {"motion_amplitude", d.motion_amplitude},
      {"distractor_amplitude", d.distractor_amplitude},
      {"noise_std", d.noise_std},
      {"seed", d.seed},
  };
}

inline json optimizer_to_json(const OptimizerConfig& o) {
  return json{
      {"kind", optimizer_name(o.kind)}, {"lr", o.lr},           {"momentum", o.momentum},
      {"beta1", o.beta1},               {"beta2", o.beta2},     {"epsilon", o.epsilon},
      {"weight_decay", o.weight_decay},
  };
}

inline json run_to_json(const RunConfig& r) {
  return json{
      {"model", model_to_json(r.model, false)},
      {"data", data_to_json(r.data)},
      {"optimizer", optimizer_to_json(r.optimizer)},
      {"epochs", r.epochs},
      {"batch_size", r.batch_size},
      {"theta_lr_multiplier", r.theta_lr_multiplier},
      {"theta_warmup_epochs", r.theta_warmup_epochs},
      {"seed", r.seed},
      {"output_dir", r.output_dir},
      {"validation", r.validation},
      {"folds", r.folds},
      {"repeats", r.repeats},
      {"compare_to", r.compare_to ? json(std::string(1, variant_letter(*r.compare_to))) : json(nullptr)},
      {"jobs", r.jobs},
  };
}

// ---------------------------------------------------------------------------
// Strict parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline std::string type_name(const json& v) { return v.type_name(); }

inline void expect(bool ok, const std::string& path, const char* expected, const json& v) {
  if (!ok) throw ConfigError("config key '" + path + "': expected " + expected + ", got " + type_name(v) + " " + v.dump());
}

inline double as_double(const json& v, const std::string& path) {
  expect(v.is_number(), path, "number", v);
  return v.get<double>();
}

inline std::size_t as_size(const json& v, const std::string& path) {
  expect(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), path, "non-negative integer",
         v);
  return v.get<std::size_t>();
}

inline std::uint64_t as_u64(const json& v, const std::string& path) {
  expect(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), path, "non-negative integer",
         v);
  return v.get<std::uint64_t>();
}

inline bool as_bool(const json& v, const std::string& path) {
  expect(v.is_boolean(), path, "boolean", v);
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& path) {
  expect(v.is_string(), path, "string", v);
  return v.get<std::string>();
}

template <class F>
auto wrap_value(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + path + "': " + e.what());
  }
}

using Handler = std::function<void(const json&, const std::string&)>;

inline void apply_object(const json& obj, const std::string& prefix, const std::map<std::string, Handler>& handlers) {
  expect(obj.is_object(), prefix.empty() ? "<root>" : prefix, "object", obj);
  for (const auto& [key, value] : obj.items()) {
    const std::string path = join_path(prefix, key);
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown config key '" + path + "'");
    it->second(value, path);
  }
}

}  // namespace detail

inline void apply_model_json(ModelConfig& m, const json& j, const std::string& prefix, bool allow_seed) {
  using namespace detail;
  std::map<std::string, Handler> h{
      {"variant", [&](const json& v, const std::string& p) { m.variant = wrap_value(p, [&] { return parse_variant(as_string(v, p)); }); }},
      {"input_size", [&](const json& v, const std::string& p) { m.input_size = as_size(v, p); }},
      {"channels",
       [&](const json& v, const std::string& p) {
         expect(v.is_array(), p, "array", v);
         m.channels.clear();
         for (std::size_t i = 0; i < v.size(); ++i) m.channels.push_back(as_size(v[i], p + "[" + std::to_string(i) + "]"));
       }},
      {"num_classes", [&](const json& v, const std::string& p) { m.num_classes = as_size(v, p); }},
      {"use_au", [&](const json& v, const std::string& p) { m.use_au = as_bool(v, p); }},
      {"au_length", [&](const json& v, const std::string& p) { m.au_length = as_size(v, p); }},
      {"theta_init", [&](const json& v, const std::string& p) { m.theta_init = as_double(v, p); }},
      {"theta_jitter", [&](const json& v, const std::string& p) { m.theta_jitter = as_double(v, p); }},
      {"frozen_theta", [&](const json& v, const std::string& p) { m.frozen_theta = as_double(v, p); }},
      {"head_input",
       [&](const json& v, const std::string& p) {
         const auto s = as_string(v, p);
         if (s == "gap") m.head_input = HeadInput::gap;
         else if (s == "flatten") m.head_input = HeadInput::flatten;
         else throw ConfigError("config key '" + p + "': '" + s + "' not in {gap,flatten}");
       }},
      {"oap_denominator",
       [&](const json& v, const std::string& p) {
         const auto s = as_string(v, p);
         if (s == "count") m.oap_denominator = OapDenominator::count;
         else if (s == "height") m.oap_denominator = OapDenominator::height;
         else throw ConfigError("config key '" + p + "': '" + s + "' not in {count,height}");
       }},
      {"oap_epsilon", [&](const json& v, const std::string& p) { m.oap_epsilon = as_double(v, p); }},
      {"soa_activation",
       [&](const json& v, const std::string& p) {
         const auto s = as_string(v, p);
         if (s == "gelu") m.soa_activation = Activation::gelu;
         else if (s == "hard_swish") m.soa_activation = Activation::hard_swish;
         else throw ConfigError("config key '" + p + "': '" + s + "' not in {gelu,hard_swish}");
       }},
      {"soa_batchnorm", [&](const json& v, const std::string& p) { m.soa_batchnorm = as_bool(v, p); }},
      {"bn_epsilon", [&](const json& v, const std::string& p) { m.bn_epsilon = as_double(v, p); }},
      {"bn_momentum", [&](const json& v, const std::string& p) { m.bn_momentum = as_double(v, p); }},
  };
  if (allow_seed) h["seed"] = [&](const json& v, const std::string& p) { m.seed = as_u64(v, p); };
  apply_object(j, prefix, h);
}

inline void apply_data_json(DatasetSpec& d, const json& j, const std::string& prefix) {
  using namespace detail;
  apply_object(j, prefix,
               {
                   {"num_subjects", [&](const json& v, const std::string& p) { d.num_subjects = as_size(v, p); }},
                   {"samples_per_subject", [&](const json& v, const std::string& p) { d.samples_per_subject = as_size(v, p); }},
                   {"num_classes", [&](const json& v, const std::string& p) { d.num_classes = as_size(v, p); }},
                   {"image_size", [&](const json& v, const std::string& p) { d.image_size = as_size(v, p); }},
                   {"motion_axis", [&](const json& v, const std::string& p) { d.motion_axis = as_double(v, p); }},
                   {"motion_amplitude", [&](const json& v, const std::string& p) { d.motion_amplitude = as_double(v, p); }},
                   {"distractor_amplitude",
                    [&](const json& v, const std::string& p) { d.distractor_amplitude = as_double(v, p); }},
                   {"noise_std", [&](const json& v, const std::string& p) { d.noise_std = as_double(v, p); }},
                   {"seed", [&](const json& v, const std::string& p) { d.seed = as_u64(v, p); }},
               });
}

inline void apply_optimizer_json(OptimizerConfig& o, const json& j, const std::string& prefix) {
  using namespace detail;
  apply_object(j, prefix,
               {
                   {"kind", [&](const json& v, const std::string& p) { o.kind = wrap_value(p, [&] { return parse_optimizer(as_string(v, p)); }); }},
                   {"lr", [&](const json& v, const std::string& p) { o.lr = as_double(v, p); }},
                   {"momentum", [&](const json& v, const std::string& p) { o.momentum = as_double(v, p); }},
                   {"beta1", [&](const json& v, const std::string& p) { o.beta1 = as_double(v, p); }},
                   {"beta2", [&](const json& v, const std::string& p) { o.beta2 = as_double(v, p); }},
                   {"epsilon", [&](const json& v, const std::string& p) { o.epsilon = as_double(v, p); }},
                   {"weight_decay", [&](const json& v, const std::string& p) { o.weight_decay = as_double(v, p); }},
               });
}

inline void apply_run_json(RunConfig& r, const json& j) {
  using namespace detail;
  apply_object(j, "",
               {
                   {"model", [&](const json& v, const std::string& p) { apply_model_json(r.model, v, p, false); }},
                   {"data", [&](const json& v, const std::string& p) { apply_data_json(r.data, v, p); }},
                   {"optimizer", [&](const json& v, const std::string& p) { apply_optimizer_json(r.optimizer, v, p); }},
                   {"epochs", [&](const json& v, const std::string& p) { r.epochs = as_size(v, p); }},
                   {"batch_size", [&](const json& v, const std::string& p) { r.batch_size = as_size(v, p); }},
                   {"theta_lr_multiplier", [&](const json& v, const std::string& p) { r.theta_lr_multiplier = as_double(v, p); }},
                   {"theta_warmup_epochs", [&](const json& v, const std::string& p) { r.theta_warmup_epochs = as_size(v, p); }},
                   {"seed", [&](const json& v, const std::string& p) { r.seed = as_u64(v, p); }},
                   {"output_dir", [&](const json& v, const std::string& p) { r.output_dir = as_string(v, p); }},
                   {"validation", [&](const json& v, const std::string& p) { r.validation = as_bool(v, p); }},
                   {"folds",
                    [&](const json& v, const std::string& p) {
                      expect(v.is_array(), p, "array", v);
                      r.folds.clear();
                      for (std::size_t i = 0; i < v.size(); ++i)
                        r.folds.push_back(static_cast<int>(as_size(v[i], p + "[" + std::to_string(i) + "]")));
                    }},
                   {"repeats", [&](const json& v, const std::string& p) { r.repeats = as_size(v, p); }},
                   {"compare_to",
                    [&](const json& v, const std::string& p) {
                      if (v.is_null()) r.compare_to.reset();
                      else r.compare_to = wrap_value(p, [&] { return parse_variant(as_string(v, p)); });
                    }},
                   {"jobs", [&](const json& v, const std::string& p) { r.jobs = as_size(v, p); }},
               });
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  apply_model_json(m, j, "model", true);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Overrides and effective configuration
// ---------------------------------------------------------------------------

inline constexpr const char* kSeedEnv = "ORIENT_ATTN_SEED";

// "a.b=value": value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + path + "': '" + key + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
  return j;
}

// file < ORIENT_ATTN_SEED < overrides
inline RunConfig parse_config(const json& file, const std::vector<std::string>& overrides,
                              const char* env_seed = std::getenv(kSeedEnv)) {
  json merged = file;
  if (!merged.is_object()) throw ConfigError("config root must be a JSON object");
  if (env_seed && *env_seed) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env_seed, &end, 10);
    if (*end != '\0' || env_seed[0] == '-') {
      throw ConfigError(std::string(kSeedEnv) + "='" + env_seed + "' is not a non-negative integer");
    }
    merged["seed"] = s;
  }
  for (const auto& o : overrides) apply_override(merged, o);
  RunConfig r;
  apply_run_json(r, merged);
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return r;
}

inline RunConfig parse_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                                   const char* env_seed = std::getenv(kSeedEnv)) {
  return parse_config(read_json_file(path), overrides, env_seed);
}

inline std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace orient
