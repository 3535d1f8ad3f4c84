// Shared fixtures for the test suites: tiny models, tiny datasets, and a
// scratch-directory helper. Everything here is deterministic.

#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparw/autodiff.hpp"
#include "sparw/data.hpp"
#include "sparw/model.hpp"

namespace testutil {

// Fresh per-test scratch directory under the system temp root; removed on
// destruction so reruns start clean.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    dir_ = std::filesystem::temp_directory_path() /
           ("sparw_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }
  std::string root() const { return dir_.string(); }

 private:
  std::filesystem::path dir_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Single linear layer mapping `in` features to `classes` logits.
inline sparw::ModelSpec linear_spec(std::int64_t in, std::int64_t classes,
                                    bool bias = true) {
  sparw::ModelSpec spec;
  spec.name = "linear";
  spec.input_shape = {in};
  spec.classes = classes;
  sparw::LayerDesc l;
  l.kind = sparw::LayerKind::linear;
  l.out_ch = classes;
  l.bias = bias;
  spec.layers.push_back(l);
  sparw::validate_spec(spec);
  return spec;
}

// linear -> relu -> linear head on flat features.
inline sparw::ModelSpec mlp_spec(std::int64_t in, std::int64_t hidden,
                                 std::int64_t classes) {
  return sparw::make_mlp(in, {hidden}, classes);
}

// Tiny, well-separated two-class set on flat features.
inline sparw::Dataset easy_blobs(std::int64_t per_class = 32,
                                 std::uint64_t seed = 3) {
  return sparw::synthetic_blobs(2, per_class, {8}, seed, 0.05);
}

// A deterministic batch from any dataset.
template <typename T>
void first_batch(const sparw::Dataset& ds, std::int64_t n, sparw::TensorT<T>& x,
                 std::vector<std::int32_t>& labels) {
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < n; ++i) idx.push_back(i % ds.count());
  const sparw::Dataset sub = sparw::take(ds, idx);
  sparw::to_tensor(sub, x, labels);
}

}  // namespace testutil
