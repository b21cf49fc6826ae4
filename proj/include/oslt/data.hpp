#pragma once

// Dataset ingestion and split generation: synthetic long-tail Gaussian blobs,
// npz archives in the published named-array layout, and deterministic
// seen/unseen split manifests with stratified label sampling.

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oslt/common.hpp"
#include "oslt/npz.hpp"

namespace oslt {

struct SplitArrays {
  Matrix x;            // one sample per row, images flattened C,H,W in [0,1]
  std::vector<int> y;  // class indices

  Eigen::Index size() const { return x.rows(); }
};

struct Dataset {
  std::string id;
  int num_classes = 0;
  DataShape shape;
  SplitArrays train, val, test;
  bool has_val = false;
};

// Power-law class sizes: n_k = round(n_max * rho^(-k/(K-1))).
struct LongTailSpec {
  int num_classes = 0;
  long max_count = 0;
  double imbalance_ratio = 1.0;  // n_max / n_min
  int feature_dim = 0;
  std::uint64_t seed = 0;
  double center_scale = 3.0;  // blob center radius; unit within-class noise
  int val_per_class = 25;
  int test_per_class = 100;

  void validate() const {
    require(num_classes >= 2, "LongTailSpec: need at least 2 classes");
    require(max_count >= 1, "LongTailSpec: max_count must be positive");
    require(imbalance_ratio >= 1.0, "LongTailSpec: imbalance ratio must be >= 1");
    require(feature_dim >= 1, "LongTailSpec: feature_dim must be positive");
  }
};

inline std::vector<long> longtail_counts(const LongTailSpec& spec) {
  spec.validate();
  std::vector<long> counts(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    const double expo = spec.num_classes > 1 ? -static_cast<double>(k) / (spec.num_classes - 1) : 0.0;
    counts[static_cast<std::size_t>(k)] = std::llround(spec.max_count * std::pow(spec.imbalance_ratio, expo));
  }
  return counts;
}

// Gaussian class blobs: unit-variance clusters at well-separated centers,
// long-tail counts for train, balanced val/test draws.
inline Dataset synth_longtail(const LongTailSpec& spec) {
  spec.validate();
  const std::vector<long> counts = longtail_counts(spec);

  // class centers: random directions scaled onto a sphere
  Rng crng(derive_seed(spec.seed, 11));
  Matrix centers(spec.num_classes, spec.feature_dim);
  for (int k = 0; k < spec.num_classes; ++k) {
    Vector dir(spec.feature_dim);
    for (int j = 0; j < spec.feature_dim; ++j) dir(j) = crng.normal();
    centers.row(k) = spec.center_scale * dir.transpose() / dir.norm();
  }

  auto draw = [&](const std::vector<long>& per_class, std::uint64_t tag) {
    long total = 0;
    for (long c : per_class) total += c;
    SplitArrays block;
    block.x.resize(total, spec.feature_dim);
    block.y.resize(static_cast<std::size_t>(total));
    Eigen::Index row = 0;
    for (int k = 0; k < spec.num_classes; ++k) {
      Rng rng(derive_seed(spec.seed, tag, static_cast<std::uint64_t>(k)));
      for (long i = 0; i < per_class[static_cast<std::size_t>(k)]; ++i) {
        for (int j = 0; j < spec.feature_dim; ++j) block.x(row, j) = centers(k, j) + rng.normal();
        block.y[static_cast<std::size_t>(row)] = k;
        ++row;
      }
    }
    return block;
  };

  Dataset ds;
  ds.id = "synth-lt-k" + std::to_string(spec.num_classes) + "-r" +
          std::to_string(static_cast<long>(spec.imbalance_ratio)) + "-s" + std::to_string(spec.seed);
  ds.num_classes = spec.num_classes;
  ds.shape.vec_dim = spec.feature_dim;
  ds.train = draw(counts, 21);
  ds.val = draw(std::vector<long>(static_cast<std::size_t>(spec.num_classes), spec.val_per_class), 22);
  ds.test = draw(std::vector<long>(static_cast<std::size_t>(spec.num_classes), spec.test_per_class), 23);
  ds.has_val = true;
  return ds;
}

namespace detail {

inline SplitArrays block_from_arrays(const npz::Array& images, const npz::Array& labels, DataShape& shape) {
  SplitArrays block;
  const std::size_t n = images.shape.empty() ? 0 : images.shape[0];
  require(n > 0, "dataset: empty split array");
  require(labels.shape.size() >= 1 && labels.shape[0] == n, "dataset: image/label count mismatch");

  if (images.shape.size() == 2) {
    shape.vec_dim = static_cast<int>(images.shape[1]);
    shape.channels = shape.height = shape.width = 0;
  } else if (images.shape.size() == 3) {
    shape.channels = 1;
    shape.height = static_cast<int>(images.shape[1]);
    shape.width = static_cast<int>(images.shape[2]);
  } else if (images.shape.size() == 4) {
    // stored H,W,C; converted to C,H,W below
    shape.channels = static_cast<int>(images.shape[3]);
    shape.height = static_cast<int>(images.shape[1]);
    shape.width = static_cast<int>(images.shape[2]);
  } else {
    throw std::runtime_error("dataset: unsupported image array rank");
  }

  const bool is_u8 = !images.bytes.empty();
  const double scale = is_u8 ? 1.0 / 255.0 : 1.0;
  const int flat = shape.flat();
  block.x.resize(static_cast<Eigen::Index>(n), flat);
  if (images.shape.size() == 4) {
    const int h = shape.height, w = shape.width, c = shape.channels;
    for (std::size_t i = 0; i < n; ++i)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
          for (int cc = 0; cc < c; ++cc)
            block.x(static_cast<Eigen::Index>(i), (static_cast<Eigen::Index>(cc) * h + yy) * w + xx) =
                scale * images.data[((i * h + yy) * w + xx) * c + cc];
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < flat; ++j)
        block.x(static_cast<Eigen::Index>(i), j) = scale * images.data[i * static_cast<std::size_t>(flat) + j];
  }

  block.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) block.y[i] = static_cast<int>(labels.data[i]);
  return block;
}

}  // namespace detail

// Published named-array container: train/val/test images + labels. Image
// archives hold uint8 (N,H,W[,C]) arrays; rank-2 float arrays load as vector
// datasets (the synthetic export round-trips through this).
inline Dataset load_medmnist(const std::string& path, std::optional<std::uint32_t> expected_crc = std::nullopt) {
  if (expected_crc) {
    const std::uint32_t got = npz::file_crc32(path);
    if (got != *expected_crc)
      throw std::runtime_error("dataset: checksum mismatch for " + path + " (crc32 " + std::to_string(got) +
                               ", expected " + std::to_string(*expected_crc) + ")");
  }
  auto arrays = npz::load_npz(path);
  const char* needed[] = {"train_images", "train_labels", "val_images", "val_labels", "test_images", "test_labels"};
  std::string missing;
  for (const char* key : needed)
    if (!arrays.count(key)) missing += missing.empty() ? key : std::string(", ") + key;
  if (!missing.empty()) throw std::runtime_error("dataset: archive missing arrays: " + missing);

  Dataset ds;
  const auto slash = path.find_last_of('/');
  ds.id = slash == std::string::npos ? path : path.substr(slash + 1);
  DataShape s1, s2, s3;
  ds.train = detail::block_from_arrays(arrays.at("train_images"), arrays.at("train_labels"), s1);
  ds.val = detail::block_from_arrays(arrays.at("val_images"), arrays.at("val_labels"), s2);
  ds.test = detail::block_from_arrays(arrays.at("test_images"), arrays.at("test_labels"), s3);
  require(s1 == s2 && s2 == s3, "dataset: split sample shapes disagree");
  ds.shape = s1;
  ds.has_val = true;
  int max_label = 0;
  for (const auto* blk : {&ds.train, &ds.val, &ds.test})
    for (int y : blk->y) max_label = std::max(max_label, y);
  ds.num_classes = max_label + 1;
  return ds;
}

// Synthetic export into the same container layout.
inline void export_dataset_npz(const Dataset& ds, const std::string& path) {
  auto to_entry = [](const SplitArrays& block, int flat) {
    npz::OutArray arr;
    arr.shape = {static_cast<std::size_t>(block.size()), static_cast<std::size_t>(flat)};
    arr.f8.resize(static_cast<std::size_t>(block.size()) * static_cast<std::size_t>(flat));
    for (Eigen::Index i = 0; i < block.size(); ++i)
      for (int j = 0; j < flat; ++j) arr.f8[static_cast<std::size_t>(i) * flat + j] = block.x(i, j);
    return arr;
  };
  auto labels_entry = [](const SplitArrays& block) {
    npz::OutArray arr;
    arr.shape = {static_cast<std::size_t>(block.size())};
    arr.f8.assign(block.y.begin(), block.y.end());
    return arr;
  };
  const int flat = ds.shape.flat();
  npz::save_npz(path, {{"train_images", to_entry(ds.train, flat)},
                       {"train_labels", labels_entry(ds.train)},
                       {"val_images", to_entry(ds.val, flat)},
                       {"val_labels", labels_entry(ds.val)},
                       {"test_images", to_entry(ds.test, flat)},
                       {"test_labels", labels_entry(ds.test)}});
}

// Deterministic description of one experiment's data view. Identifiers index
// into the dataset's split arrays; unlabelled ids cover the whole training
// set (seen and unseen classes) with labels stripped.
struct SplitManifest {
  std::string dataset_id;
  std::vector<int> seen_classes;  // original class indices; position = model class index
  std::vector<int> unseen_classes;
  double label_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> labelled_ids;    // into train
  std::vector<int> unlabelled_ids;  // into train
  std::vector<int> val_ids;         // into val split, or into train when carved
  std::string val_source;           // "official" | "carved"
  std::vector<int> test_ids;        // into test

  int num_seen() const { return static_cast<int>(seen_classes.size()); }

  // original class index -> model index in [0,K), or -1 for unseen
  int model_index(int original_class) const {
    for (std::size_t i = 0; i < seen_classes.size(); ++i)
      if (seen_classes[i] == original_class) return static_cast<int>(i);
    return -1;
  }
};

inline SplitManifest make_split(const Dataset& ds, std::vector<int> seen_classes, double label_fraction,
                                std::uint64_t seed) {
  require(!seen_classes.empty(), "make_split: seen class list empty");
  require(label_fraction > 0.0 && label_fraction <= 1.0, "make_split: label fraction must lie in (0,1]");
  std::set<int> seen_set(seen_classes.begin(), seen_classes.end());
  require(seen_set.size() == seen_classes.size(), "make_split: duplicate seen class");
  for (int c : seen_classes) require(c >= 0 && c < ds.num_classes, "make_split: seen class out of range");
  require(static_cast<int>(seen_set.size()) < ds.num_classes, "make_split: seen classes must be a strict subset");

  SplitManifest m;
  m.dataset_id = ds.id;
  m.seen_classes = std::move(seen_classes);
  for (int c = 0; c < ds.num_classes; ++c)
    if (!seen_set.count(c)) m.unseen_classes.push_back(c);
  m.label_fraction = label_fraction;
  m.seed = seed;

  // stratified labelled subset, preserving the per-class frequency shape
  for (int c : m.seen_classes) {
    std::vector<int> ids;
    for (Eigen::Index i = 0; i < ds.train.size(); ++i)
      if (ds.train.y[static_cast<std::size_t>(i)] == c) ids.push_back(static_cast<int>(i));
    const long take = std::llround(label_fraction * static_cast<double>(ids.size()));
    if (take < 1)
      throw std::invalid_argument("make_split: label fraction " + std::to_string(label_fraction) +
                                  " leaves class " + std::to_string(c) + " with no labelled samples");
    Rng rng(derive_seed(seed, 31, static_cast<std::uint64_t>(c)));
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(std::min<long>(take, static_cast<long>(ids.size()))));
    m.labelled_ids.insert(m.labelled_ids.end(), ids.begin(), ids.end());
  }
  std::sort(m.labelled_ids.begin(), m.labelled_ids.end());

  m.unlabelled_ids.resize(static_cast<std::size_t>(ds.train.size()));
  for (std::size_t i = 0; i < m.unlabelled_ids.size(); ++i) m.unlabelled_ids[i] = static_cast<int>(i);

  if (ds.has_val) {
    m.val_source = "official";
    for (Eigen::Index i = 0; i < ds.val.size(); ++i)
      if (seen_set.count(ds.val.y[static_cast<std::size_t>(i)])) m.val_ids.push_back(static_cast<int>(i));
  } else {
    // carve ~10% of the labelled set, stratified, never emptying a class
    m.val_source = "carved";
    std::set<int> carved;
    for (int c : m.seen_classes) {
      std::vector<int> ids;
      for (int id : m.labelled_ids)
        if (ds.train.y[static_cast<std::size_t>(id)] == c) ids.push_back(id);
      long carve = std::llround(0.1 * static_cast<double>(ids.size()));
      carve = std::min<long>(carve, static_cast<long>(ids.size()) - 1);
      if (carve < 1) continue;
      Rng rng(derive_seed(seed, 32, static_cast<std::uint64_t>(c)));
      rng.shuffle(ids);
      for (long i = 0; i < carve; ++i) carved.insert(ids[static_cast<std::size_t>(i)]);
    }
    std::vector<int> kept;
    for (int id : m.labelled_ids)
      (carved.count(id) ? m.val_ids : kept).push_back(id);
    m.labelled_ids = std::move(kept);
    std::sort(m.val_ids.begin(), m.val_ids.end());
  }

  m.test_ids.resize(static_cast<std::size_t>(ds.test.size()));
  for (std::size_t i = 0; i < m.test_ids.size(); ++i) m.test_ids[i] = static_cast<int>(i);
  return m;
}

inline nlohmann::json manifest_to_json(const SplitManifest& m) {
  return nlohmann::json{{"dataset_id", m.dataset_id},
                        {"seen_classes", m.seen_classes},
                        {"unseen_classes", m.unseen_classes},
                        {"label_fraction", m.label_fraction},
                        {"seed", m.seed},
                        {"labelled_ids", m.labelled_ids},
                        {"unlabelled_ids", m.unlabelled_ids},
                        {"val_ids", m.val_ids},
                        {"val_source", m.val_source},
                        {"test_ids", m.test_ids}};
}

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
  SplitManifest m;
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.seen_classes = j.at("seen_classes").get<std::vector<int>>();
  m.unseen_classes = j.at("unseen_classes").get<std::vector<int>>();
  m.label_fraction = j.at("label_fraction").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.labelled_ids = j.at("labelled_ids").get<std::vector<int>>();
  m.unlabelled_ids = j.at("unlabelled_ids").get<std::vector<int>>();
  m.val_ids = j.at("val_ids").get<std::vector<int>>();
  m.val_source = j.at("val_source").get<std::string>();
  m.test_ids = j.at("test_ids").get<std::vector<int>>();
  return m;
}

inline void save_manifest(const SplitManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  f << manifest_to_json(m).dump(2) << "\n";
}

inline SplitManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  return manifest_from_json(nlohmann::json::parse(f));
}

}  // namespace oslt
