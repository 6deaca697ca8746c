#pragma once

// Run configuration: one JSON document, three presets, dotted-path overrides.
//
// Schema (every field optional except where a preset leaves it unset):
//   preset        "synthetic" | "mtat-like" | "cifar10"
//   seed          uint   model init, batch order (the dataset keeps data.seed)
//   head          { variant, d_hidden, pooling, batchnorm, ensure_row_nonempty }
//   data          { source: "max-affine" | "cifar10" | "idx" | "csv",
//                   n, d, k_pieces, tags, seed,             (max-affine)
//                   dir, train_files, test_files, grayscale (cifar10)
//                   images, labels                          (idx)
//                   path }                                  (csv)
//   train         { phases: [{ optimizer, lr, epochs }], momentum, weight_decay,
//                   decay_morph, batch_size, max_steps }
//
// d_in and d_out are taken from the dataset.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "maxplus/data.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/optim.hpp"

namespace maxplus {

/// Invalid configuration; `path` is the dotted field path at fault.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::invalid_argument(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  std::string source = "max-affine";
  MaxAffineOptions max_affine;
  std::string dir;
  std::vector<std::string> train_files, test_files;
  bool grayscale = false;
  std::string images, labels;
  std::string path;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string preset = "synthetic";
  std::uint64_t seed = 0;
  HeadSpec head;  // d_in / d_out filled from the dataset
  DataConfig data;
  TrainConfig train;
};

inline nlohmann::ordered_json preset_json(const std::string& name) {
  using J = nlohmann::ordered_json;
  if (name == "synthetic") {
    return J::parse(R"({
      "preset": "synthetic", "seed": 0,
      "head": {"variant": "sparse-morph", "d_hidden": 64, "pooling": 2, "batchnorm": true, "ensure_row_nonempty": false},
      "data": {"source": "max-affine", "n": 20000, "d": 64, "k_pieces": 4, "tags": 50, "seed": 0},
      "train": {"phases": [{"optimizer": "adam", "lr": 0.001, "epochs": 25}],
                "momentum": 0.9, "weight_decay": 0.0001, "decay_morph": false, "batch_size": 128, "max_steps": 0}
    })");
  }
  if (name == "mtat-like") {
    return J::parse(R"({
      "preset": "mtat-like", "seed": 0,
      "head": {"variant": "sparse-morph", "d_hidden": 512, "pooling": 2, "batchnorm": true, "ensure_row_nonempty": false},
      "data": {"source": "max-affine", "n": 20000, "d": 512, "k_pieces": 4, "tags": 50, "seed": 0},
      "train": {"phases": [{"optimizer": "adam", "lr": 0.0001, "epochs": 80},
                           {"optimizer": "sgd_nesterov", "lr": 0.001, "epochs": 20}],
                "momentum": 0.9, "weight_decay": 0.0001, "decay_morph": false, "batch_size": 128, "max_steps": 0}
    })");
  }
  if (name == "cifar10") {
    return J::parse(R"({
      "preset": "cifar10", "seed": 0,
      "head": {"variant": "sparse-morph", "d_hidden": 512, "pooling": 2, "batchnorm": true, "ensure_row_nonempty": false},
      "data": {"source": "cifar10", "dir": "data/cifar-10-batches-bin",
               "train_files": ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"],
               "test_files": ["test_batch.bin"], "grayscale": false, "seed": 0},
      "train": {"phases": [{"optimizer": "adam", "lr": 0.001, "epochs": 10}],
                "momentum": 0.9, "weight_decay": 0.0001, "decay_morph": false, "batch_size": 128, "max_steps": 0}
    })");
  }
  throw ConfigError("preset", "unknown preset '" + name + "' (expected synthetic, mtat-like or cifar10)");
}

namespace detail {

using CJson = nlohmann::ordered_json;

inline const CJson* field(const CJson& obj, const std::string& path, const char* key) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <class T>
void read(const CJson& obj, const std::string& path, const char* key, T& out) {
  const CJson* v = field(obj, path, key);
  if (!v) return;
  const std::string p = path.empty() ? key : path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v->is_boolean()) throw ConfigError(p, "expected true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v->is_number_integer() || (std::is_unsigned_v<T> && v->get<std::int64_t>() < 0 && !v->is_number_unsigned()))
      throw ConfigError(p, "expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v->is_number()) throw ConfigError(p, "expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v->is_string()) throw ConfigError(p, "expected a string");
  } else {
    if (!v->is_array()) throw ConfigError(p, "expected an array");
    for (const auto& e : *v)
      if (!e.is_string()) throw ConfigError(p, "expected an array of strings");
  }
  out = v->get<T>();
}

inline void reject_unknown(const CJson& obj, const std::string& path, std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
  }
}

}  // namespace detail

/// Resolves a JSON document into a RunConfig. Fields missing from `j` keep
/// the values of the preset named by j["preset"] (default "synthetic").
inline RunConfig parse_config(const nlohmann::ordered_json& input) {
  using detail::read;
  if (!input.is_object()) throw ConfigError("(root)", "expected a JSON object");
  std::string preset = "synthetic";
  read(input, "", "preset", preset);
  nlohmann::ordered_json j = preset_json(preset);
  j.merge_patch(input);

  detail::reject_unknown(j, "", {"preset", "seed", "head", "data", "train"});
  RunConfig c;
  c.preset = preset;
  read(j, "", "seed", c.seed);

  const auto& h = j.at("head");
  detail::reject_unknown(h, "head", {"variant", "d_hidden", "pooling", "batchnorm", "ensure_row_nonempty"});
  std::string variant = "sparse-morph";
  read(h, "head", "variant", variant);
  try {
    c.head.variant = parse_variant(variant);
  } catch (const std::exception& e) {
    throw ConfigError("head.variant", e.what());
  }
  read(h, "head", "d_hidden", c.head.d_hidden);
  read(h, "head", "pooling", c.head.pooling);
  read(h, "head", "batchnorm", c.head.batchnorm);
  read(h, "head", "ensure_row_nonempty", c.head.ensure_row_nonempty);
  if (c.head.d_hidden == 0) throw ConfigError("head.d_hidden", "must be positive");
  if (c.head.pooling == 0) throw ConfigError("head.pooling", "must be positive");
  // Dense-morph trains without batchnorm under the mtat-like protocol.
  if (preset == "mtat-like" && c.head.variant == Variant::kDenseMorph && !(input.contains("head") && input["head"].contains("batchnorm")))
    c.head.batchnorm = false;
  c.head.seed = c.seed;

  const auto& d = j.at("data");
  detail::reject_unknown(d, "data", {"source", "n", "d", "k_pieces", "tags", "seed", "dir", "train_files", "test_files",
                                     "grayscale", "images", "labels", "path"});
  read(d, "data", "source", c.data.source);
  read(d, "data", "n", c.data.max_affine.n);
  read(d, "data", "d", c.data.max_affine.d);
  read(d, "data", "k_pieces", c.data.max_affine.k_pieces);
  read(d, "data", "tags", c.data.max_affine.tags);
  read(d, "data", "seed", c.data.seed);
  c.data.max_affine.seed = c.data.seed;
  read(d, "data", "dir", c.data.dir);
  read(d, "data", "train_files", c.data.train_files);
  read(d, "data", "test_files", c.data.test_files);
  read(d, "data", "grayscale", c.data.grayscale);
  read(d, "data", "images", c.data.images);
  read(d, "data", "labels", c.data.labels);
  read(d, "data", "path", c.data.path);
  if (c.data.source != "max-affine" && c.data.source != "cifar10" && c.data.source != "idx" && c.data.source != "csv")
    throw ConfigError("data.source", "expected max-affine, cifar10, idx or csv");
  if (c.data.source == "max-affine") {
    const auto& m = c.data.max_affine;
    if (m.n < 2) throw ConfigError("data.n", "must be at least 2");
    if (m.d == 0) throw ConfigError("data.d", "must be positive");
    if (m.k_pieces == 0) throw ConfigError("data.k_pieces", "must be positive");
    if (m.tags == 0) throw ConfigError("data.tags", "must be positive");
  }
  if (c.data.source == "idx" && (c.data.images.empty() || c.data.labels.empty()))
    throw ConfigError("data.images", "idx source needs data.images and data.labels");
  if (c.data.source == "csv" && c.data.path.empty()) throw ConfigError("data.path", "csv source needs a path");
  if (c.data.source == "cifar10" && c.data.train_files.empty())
    throw ConfigError("data.train_files", "cifar10 source needs at least one batch file");

  const auto& t = j.at("train");
  detail::reject_unknown(t, "train", {"phases", "momentum", "weight_decay", "decay_morph", "batch_size", "max_steps"});
  if (const auto* ph = detail::field(t, "train", "phases")) {
    if (!ph->is_array() || ph->empty()) throw ConfigError("train.phases", "expected a non-empty array");
    c.train.phases.clear();
    for (std::size_t k = 0; k < ph->size(); ++k) {
      const std::string p = "train.phases[" + std::to_string(k) + "]";
      const auto& e = (*ph)[k];
      detail::reject_unknown(e, p, {"optimizer", "lr", "epochs"});
      Phase phase;
      std::string opt = "adam";
      read(e, p, "optimizer", opt);
      try {
        phase.optimizer = parse_optimizer(opt);
      } catch (const std::exception& ex) {
        throw ConfigError(p + ".optimizer", ex.what());
      }
      read(e, p, "lr", phase.lr);
      read(e, p, "epochs", phase.epochs);
      if (!(phase.lr >= 0.0)) throw ConfigError(p + ".lr", "must be >= 0");
      if (phase.epochs == 0) throw ConfigError(p + ".epochs", "must be positive");
      c.train.phases.push_back(phase);
    }
  }
  read(t, "train", "momentum", c.train.momentum);
  read(t, "train", "weight_decay", c.train.weight_decay);
  read(t, "train", "decay_morph", c.train.decay.morph);
  read(t, "train", "batch_size", c.train.batch_size);
  read(t, "train", "max_steps", c.train.max_steps);
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (c.train.momentum < 0.0 || c.train.momentum >= 1.0) throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (c.train.weight_decay < 0.0) throw ConfigError("train.weight_decay", "must be >= 0");
  c.train.seed = c.seed ^ 0x7A11ULL;
  return c;
}

/// Canonical JSON of a resolved config (what gets snapshotted into a run dir).
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["head"] = {{"variant", to_string(c.head.variant)},
               {"d_hidden", c.head.d_hidden},
               {"pooling", c.head.pooling},
               {"batchnorm", c.head.batchnorm},
               {"ensure_row_nonempty", c.head.ensure_row_nonempty}};
  auto& d = j["data"];
  d["source"] = c.data.source;
  d["seed"] = c.data.seed;
  if (c.data.source == "max-affine") {
    d["n"] = c.data.max_affine.n;
    d["d"] = c.data.max_affine.d;
    d["k_pieces"] = c.data.max_affine.k_pieces;
    d["tags"] = c.data.max_affine.tags;
  } else if (c.data.source == "cifar10") {
    d["dir"] = c.data.dir;
    d["train_files"] = c.data.train_files;
    d["test_files"] = c.data.test_files;
    d["grayscale"] = c.data.grayscale;
  } else if (c.data.source == "idx") {
    d["images"] = c.data.images;
    d["labels"] = c.data.labels;
  } else {
    d["path"] = c.data.path;
  }
  auto& t = j["train"];
  t["phases"] = nlohmann::ordered_json::array();
  for (const auto& p : c.train.phases)
    t["phases"].push_back({{"optimizer", to_string(p.optimizer)}, {"lr", p.lr}, {"epochs", p.epochs}});
  t["momentum"] = c.train.momentum;
  t["weight_decay"] = c.train.weight_decay;
  t["decay_morph"] = c.train.decay.morph;
  t["batch_size"] = c.train.batch_size;
  t["max_steps"] = c.train.max_steps;
  return j;
}

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible
/// and taken as a plain string otherwise.
inline void apply_override(nlohmann::ordered_json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like path.to.field=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::ordered_json value = nlohmann::ordered_json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::ordered_json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty path component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError(path, "cannot descend into a non-object");
      *node = nlohmann::ordered_json::object();
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

/// Loads the dataset a config refers to. Relative cifar10 file names are
/// resolved against data.dir.
inline Dataset load_dataset(const DataConfig& d) {
  if (d.source == "max-affine") return gen_max_affine(d.max_affine);
  if (d.source == "idx") return load_idx(d.images, d.labels, d.seed);
  if (d.source == "csv") return load_features_csv(d.path, d.seed);
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<std::filesystem::path> out;
    for (const auto& n : names) {
      std::filesystem::path p(n);
      out.push_back(p.is_absolute() || d.dir.empty() ? p : std::filesystem::path(d.dir) / p);
    }
    return out;
  };
  return load_cifar10_binary(resolve(d.train_files), resolve(d.test_files), d.seed, d.grayscale);
}

/// Head spec with d_in / d_out taken from the dataset.
inline HeadSpec resolve_head(const RunConfig& c, const Dataset& ds) {
  HeadSpec s = c.head;
  s.d_in = ds.dim();
  s.d_out = ds.outputs();
  return s;
}

}  // namespace maxplus
