#pragma once

// On-disk artifacts: datasets (one FSLT per subject + manifest.json) and
// checkpoints (FSLT tensors + JSON manifest holding the model config).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/config.hpp"
#include "orient/snapshot.hpp"

namespace orient {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write to '" + path.string() + "' failed");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Creates a fresh output directory; an existing non-empty one is a collision.
inline void create_fresh_dir(const fs::path& dir) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw std::runtime_error("output directory '" + dir.string() + "' already exists; refusing to overwrite");
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

inline std::string subject_file(int subject) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%02d.fslt", subject);
  return buf;
}

inline void save_dataset(const fs::path& dir, const DatasetSpec& spec, const std::vector<SyntheticSample>& data) {
  create_fresh_dir(dir);
  std::map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < data.size(); ++i) by_subject[data[i].subject].push_back(i);

  json samples = json::array();
  json files = json::object();
  for (const auto& [subject, idx] : by_subject) {
    const Shape& s = data[idx.front()].difference.shape();
    const Shape stacked{idx.size(), 1, s[1], s[2]};
    std::vector<double> onset, apex, diff;
    for (auto* dst : {&onset, &apex, &diff}) dst->reserve(idx.size() * s[1] * s[2]);
    for (std::size_t i : idx) {
      const auto& smp = data[i];
      onset.insert(onset.end(), smp.onset.data().begin(), smp.onset.data().end());
      apex.insert(apex.end(), smp.apex.data().begin(), smp.apex.data().end());
      diff.insert(diff.end(), smp.difference.data().begin(), smp.difference.data().end());
    }
    const std::string file = subject_file(subject);
    save_fslt(dir / file, {{"onset", Tensor(stacked, std::move(onset))},
                           {"apex", Tensor(stacked, std::move(apex))},
                           {"difference", Tensor(stacked, std::move(diff))}});
    files[std::to_string(subject)] = file;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& smp = data[idx[k]];
      samples.push_back({{"subject", smp.subject},
                         {"row", k},
                         {"label", smp.label},
                         {"au_bits", std::vector<int>(smp.au_bits.begin(), smp.au_bits.end())}});
    }
  }
  json manifest{{"spec", data_to_json(spec)}, {"files", files}, {"samples", samples}};
  write_text(dir / "manifest.json", canonical_dump(manifest));
}

struct LoadedDataset {
  DatasetSpec spec;
  std::vector<SyntheticSample> samples;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  LoadedDataset out;
  apply_data_json(out.spec, manifest.at("spec"), "spec");
  std::map<int, NamedTensors> loaded;
  for (const auto& [key, file] : manifest.at("files").items()) loaded[std::stoi(key)] = load_fslt(dir / file.get<std::string>());

  for (const auto& rec : manifest.at("samples")) {
    SyntheticSample smp;
    smp.subject = rec.at("subject").get<int>();
    smp.label = rec.at("label").get<int>();
    const auto bits = rec.at("au_bits").get<std::vector<int>>();
    if (bits.size() != smp.au_bits.size()) throw std::runtime_error("dataset manifest: au_bits must have 21 entries");
    std::copy(bits.begin(), bits.end(), smp.au_bits.begin());
    const std::size_t row = rec.at("row").get<std::size_t>();
    auto it = loaded.find(smp.subject);
    if (it == loaded.end()) throw std::runtime_error("dataset manifest: no file for subject " + std::to_string(smp.subject));
    auto slice = [&](const char* name) {
      const Tensor& t = find_tensor(it->second, name);
      const std::size_t H = t.dim(2), W = t.dim(3);
      if (row >= t.dim(0)) throw std::runtime_error("dataset manifest: row out of range");
      const auto d = t.data().subspan(row * H * W, H * W);
      return Tensor({1, H, W}, std::vector<double>(d.begin(), d.end()));
    };
    smp.onset = slice("onset");
    smp.apex = slice("apex");
    smp.difference = slice("difference");
    out.samples.push_back(std::move(smp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline NamedTensors checkpoint_tensors(const ModelState& m) {
  NamedTensors ts;
  for (const auto& [name, t] : m.params) ts.emplace_back("param." + name, t);
  for (const auto& [name, bn] : m.batchnorm) {
    ts.emplace_back("bn." + name + ".running_mean", Tensor({bn.channels()}, bn.running_mean));
    ts.emplace_back("bn." + name + ".running_var", Tensor({bn.channels()}, bn.running_var));
  }
  return ts;
}

// <stem>.fslt + <stem>.json
inline void save_checkpoint(const fs::path& stem, const ModelState& m) {
  save_fslt(fs::path(stem).concat(".fslt"), checkpoint_tensors(m));
  json manifest{{"format", "FSLT"},
                {"tensors", fs::path(stem).concat(".fslt").filename().string()},
                {"model", model_to_json(m.config, true)}};
  write_text(fs::path(stem).concat(".json"), canonical_dump(manifest));
}

inline ModelState load_checkpoint(const fs::path& stem) {
  fs::path manifest_path = stem;
  if (manifest_path.extension() == ".json" || manifest_path.extension() == ".fslt") manifest_path.replace_extension();
  const fs::path base = manifest_path;
  if (!fs::exists(fs::path(base).concat(".json"))) {
    throw std::runtime_error("checkpoint '" + base.string() + ".json' not found");
  }
  const json manifest = read_json_file(fs::path(base).concat(".json"));
  ModelState m = build_model(model_from_json(manifest.at("model")));
  const NamedTensors ts = load_fslt(base.parent_path() / manifest.at("tensors").get<std::string>());

  std::size_t seen = 0;
  for (const auto& [name, t] : ts) {
    if (name.starts_with("param.")) {
      auto it = m.params.find(name.substr(6));
      if (it == m.params.end()) throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
      if (it->second.shape() != t.shape()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
      it->second = t;
      ++seen;
    } else if (name.starts_with("bn.")) {
      const bool mean = name.ends_with(".running_mean");
      const bool var = name.ends_with(".running_var");
      if (!mean && !var) throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
      const std::string key = name.substr(3, name.size() - 3 - (mean ? 13 : 12));
      auto it = m.batchnorm.find(key);
      if (it == m.batchnorm.end() || t.numel() != it->second.channels()) {
        throw std::runtime_error("checkpoint: unexpected batchnorm state '" + name + "'");
      }
      auto& dst = mean ? it->second.running_mean : it->second.running_var;
      dst.assign(t.data().begin(), t.data().end());
    } else {
      throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    }
  }
  if (seen != m.params.size()) throw std::runtime_error("checkpoint: missing parameters");
  return m;
}

}  // namespace orient
