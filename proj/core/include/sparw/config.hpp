// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value experiment configuration with section-style prefixes
// ("train.lr0 = 0.1"), command-line overrides, and strict unknown-key
// detection.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sparw/train.hpp"

namespace sparw {

// Parsed key=value text. Keys are consumed by the typed getters; anything
// left unconsumed is reported so misspelled keys fail loudly instead of
// silently using defaults.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  // Inserts or overwrites (used by --set key=value overrides).
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  std::int64_t get_int64(const std::string& key, std::int64_t def) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;  // on/off/true/false/1/0
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& def) const;

  // Keys present but never read by any getter.
  std::vector<std::string> unconsumed() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

// Experiment-level configuration -------------------------------------------

enum class Method {
  dense_at,
  small_dense,
  random_prune,
  omp,
  snip,
  igq_static,
  robust_bird,
  flying_bird,
  flying_bird_plus,
};

Method method_from_string(const std::string& s);
std::string to_string(Method m);
// True for the methods that train with a sparsity mask installed.
bool is_sparse_method(Method m);

struct DataConfig {
  std::string name = "cifar10";   // cifar10 | cifar100 | idx | blobs
  std::string path;               // dataset directory (cifar) or file prefix (idx)
  std::int64_t train_subset = 0;  // 0 = use everything left after the split
  std::int64_t val_count = 0;     // 0 = one tenth of the training set
  std::int64_t test_subset = 0;   // 0 = full test set
  std::int64_t train_ra_subset = 1000;  // fixed subset for per-epoch train RA
  // blobs-only knobs (fast synthetic runs / tests)
  int blob_classes = 10;
  std::int64_t blob_per_class = 64;
  std::vector<int> blob_dims = {3, 8, 8};
};

struct ExperimentConfig {
  DataConfig data;
  std::string model_preset = "mini-vgg";  // mlp | mini-vgg | resnet8 | resnet14
  std::vector<int> model_widths;  // empty = preset defaults
  double width_scale = 1.0;       // uniform channel scaling factor
  Method method = Method::dense_at;
  double sparsity = 0.8;          // target sparsity for the sparse methods
  std::string allocator = "igq";  // static methods: uniform | erk | igq | snip | magnitude
  TrainConfig train;
  RBConfig rb;
  FBConfig fb;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  bool wall_time = false;         // record real wall time in metrics.csv
  bool resume = false;            // continue from <out>/last.ckpt if present
  int stop_after_epochs = 0;      // > 0: exit once this many total epochs done
                                  // (schedules still span train.epochs)
  int loss_surface_n = 0;         // emit loss_surface.tsv over an n*n grid
  double loss_surface_radius = 1.0;
  std::int64_t loss_surface_samples = 128;
};

// Reads every recognized key, applies derived defaults (small-dense width,
// method-implied sparsity settings), validates, and errors on unknown keys.
ExperimentConfig experiment_config_from(const KeyValueConfig& kv);

// The full key=value rendering of a config (documents defaults; stable order).
std::string render_config(const ExperimentConfig& cfg);

}  // namespace sparw
