#pragma once

// Flat run configuration. One file fully determines a run; unknown or
// ill-typed keys are all reported together.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oslt/common.hpp"
#include "oslt/losses.hpp"
#include "oslt/regularizers.hpp"

namespace oslt {

struct RunConfig {
  // data
  std::string dataset = "synth";  // synth | npz
  std::string data_path;          // archive path when dataset=npz
  std::optional<std::uint32_t> data_checksum_crc32;
  std::vector<int> seen_classes;
  double label_fraction = 0.25;
  std::string split_manifest;  // optional precomputed manifest path

  // synthetic long-tail bed
  int synth_classes = 7;
  long synth_max_count = 2000;
  double synth_imbalance_ratio = 50.0;
  int synth_dim = 16;
  double synth_center_scale = 3.0;
  int synth_val_per_class = 25;
  int synth_test_per_class = 100;

  // model
  std::string backbone = "mlp";
  int feature_dim = 64;
  int hidden_dim = 64;
  int embed_dim = 128;

  // optimization
  int epochs = 100;
  int batch_size = 16;
  double lr = 0.03;
  double momentum = 0.9;
  std::string lr_schedule = "cosine";  // cosine | constant

  // loss weights and thresholds
  LossWeights weights;

  // classifier constraints
  MaxNormPolicy max_norm;
  WeightDecayPolicy decay{0.0005, -1.0};

  std::uint64_t seed = 1;

  void validate() const {
    require(dataset == "synth" || dataset == "npz", "config: dataset must be 'synth' or 'npz'");
    require(dataset != "npz" || !data_path.empty(), "config: data_path required for dataset=npz");
    require(label_fraction > 0.0 && label_fraction <= 1.0, "config: label_fraction must lie in (0,1]");
    require(epochs >= 1, "config: epochs must be >= 1");
    require(batch_size >= 1, "config: batch_size must be >= 1");
    require(lr > 0.0, "config: lr must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "config: momentum must lie in [0,1)");
    require(lr_schedule == "cosine" || lr_schedule == "constant", "config: unknown lr_schedule");
    weights.validate();
    max_norm.validate();
    decay.validate();
  }
};

namespace cfgdetail {

struct Reader {
  const nlohmann::json& j;
  std::vector<std::string> errors;
  std::set<std::string> consumed;

  template <typename T>
  void get(const char* key, T& out) {
    if (!j.contains(key)) return;
    consumed.insert(key);
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      errors.push_back(std::string(key) + ": wrong type");
    }
  }
};

}  // namespace cfgdetail

// Documented key set; parse rejects anything outside it and reports every
// offending key in one error.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  cfgdetail::Reader r{j, {}, {}};

  r.get("dataset", c.dataset);
  r.get("data_path", c.data_path);
  if (j.contains("data_checksum_crc32")) {
    r.consumed.insert("data_checksum_crc32");
    try {
      c.data_checksum_crc32 = j.at("data_checksum_crc32").get<std::uint32_t>();
    } catch (const nlohmann::json::exception&) {
      r.errors.push_back("data_checksum_crc32: wrong type");
    }
  }
  r.get("seen_classes", c.seen_classes);
  r.get("label_fraction", c.label_fraction);
  r.get("split_manifest", c.split_manifest);

  r.get("synth_classes", c.synth_classes);
  r.get("synth_max_count", c.synth_max_count);
  r.get("synth_imbalance_ratio", c.synth_imbalance_ratio);
  r.get("synth_dim", c.synth_dim);
  r.get("synth_center_scale", c.synth_center_scale);
  r.get("synth_val_per_class", c.synth_val_per_class);
  r.get("synth_test_per_class", c.synth_test_per_class);

  r.get("backbone", c.backbone);
  r.get("feature_dim", c.feature_dim);
  r.get("hidden_dim", c.hidden_dim);
  r.get("embed_dim", c.embed_dim);

  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("momentum", c.momentum);
  r.get("lr_schedule", c.lr_schedule);

  r.get("lambda_sup", c.weights.lambda_sup);
  r.get("lambda_reg", c.weights.lambda_reg);
  r.get("lambda_mb", c.weights.lambda_mb);
  r.get("lambda_o", c.weights.lambda_o);
  r.get("lambda_ui", c.weights.lambda_ui);
  r.get("tau_r", c.weights.tau_r);
  r.get("tau_p", c.weights.tau_p);
  r.get("mu", c.weights.mu);

  r.get("max_norm_radius", c.max_norm.radius);
  r.get("max_norm_enabled", c.max_norm.enabled);
  r.get("weight_decay", c.decay.coefficient);
  r.get("classifier_weight_decay", c.decay.classifier_coefficient);

  r.get("seed", c.seed);

  std::string unknown;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!r.consumed.count(it.key())) unknown += unknown.empty() ? it.key() : ", " + it.key();
  if (!unknown.empty()) r.errors.push_back("unknown keys: " + unknown);
  if (!r.errors.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& e : r.errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j{{"dataset", c.dataset},
                   {"data_path", c.data_path},
                   {"seen_classes", c.seen_classes},
                   {"label_fraction", c.label_fraction},
                   {"split_manifest", c.split_manifest},
                   {"synth_classes", c.synth_classes},
                   {"synth_max_count", c.synth_max_count},
                   {"synth_imbalance_ratio", c.synth_imbalance_ratio},
                   {"synth_dim", c.synth_dim},
                   {"synth_center_scale", c.synth_center_scale},
                   {"synth_val_per_class", c.synth_val_per_class},
                   {"synth_test_per_class", c.synth_test_per_class},
                   {"backbone", c.backbone},
                   {"feature_dim", c.feature_dim},
                   {"hidden_dim", c.hidden_dim},
                   {"embed_dim", c.embed_dim},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"lr", c.lr},
                   {"momentum", c.momentum},
                   {"lr_schedule", c.lr_schedule},
                   {"lambda_sup", c.weights.lambda_sup},
                   {"lambda_reg", c.weights.lambda_reg},
                   {"lambda_mb", c.weights.lambda_mb},
                   {"lambda_o", c.weights.lambda_o},
                   {"lambda_ui", c.weights.lambda_ui},
                   {"tau_r", c.weights.tau_r},
                   {"tau_p", c.weights.tau_p},
                   {"mu", c.weights.mu},
                   {"max_norm_radius", c.max_norm.radius},
                   {"max_norm_enabled", c.max_norm.enabled},
                   {"weight_decay", c.decay.coefficient},
                   {"classifier_weight_decay", c.decay.classifier_coefficient},
                   {"seed", c.seed}};
  if (c.data_checksum_crc32) j["data_checksum_crc32"] = *c.data_checksum_crc32;
  return j;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace oslt
