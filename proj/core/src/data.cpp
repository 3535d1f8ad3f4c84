// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace sparw {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(size);
  if (size > 0 &&
      !in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(size)))
    throw std::runtime_error("cannot read " + path);
  return bytes;
}

void write_file_bytes(const std::string& path,
                      const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

Dataset load_cifar_layout(const std::vector<std::string>& files,
                          int label_bytes, int label_offset,
                          std::int32_t classes) {
  const std::size_t record = static_cast<std::size_t>(label_bytes) + 3072;
  Dataset ds;
  ds.sample_shape = {3, 32, 32};
  ds.classes = classes;
  for (const auto& path : files) {
    const auto bytes = read_file_bytes(path);
    if (bytes.empty() || bytes.size() % record != 0)
      throw std::runtime_error(path + ": truncated record file (size " +
                               std::to_string(bytes.size()) + " not a multiple of " +
                               std::to_string(record) + ")");
    const std::size_t n = bytes.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* rec = bytes.data() + i * record;
      const std::int32_t label = rec[label_offset];
      if (label >= classes)
        throw std::runtime_error(path + ": label " + std::to_string(label) +
                                 " out of range [0," + std::to_string(classes) +
                                 ")");
      ds.labels.push_back(label);
      const unsigned char* px = rec + label_bytes;
      for (std::size_t p = 0; p < 3072; ++p)
        ds.pixels.push_back(static_cast<float>(px[p]) / 255.0f);
    }
  }
  validate(ds);
  return ds;
}

std::uint32_t read_be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

unsigned char to_byte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<unsigned char>(std::clamp<long>(q, 0, 255));
}

}  // namespace

void validate(const Dataset& ds) {
  if (ds.sample_shape.empty())
    throw std::runtime_error("dataset: empty sample shape");
  if (ds.classes < 2) throw std::runtime_error("dataset: needs >= 2 classes");
  if (ds.labels.empty()) throw std::runtime_error("dataset: no samples");
  if (ds.pixels.size() !=
      ds.labels.size() * static_cast<std::size_t>(ds.sample_numel()))
    throw std::runtime_error("dataset: pixel/label size mismatch");
  for (auto l : ds.labels)
    if (l < 0 || l >= ds.classes)
      throw std::runtime_error("dataset: label out of range");
}

Dataset load_cifar10_files(const std::vector<std::string>& files) {
  return load_cifar_layout(files, 1, 0, 10);
}

Dataset load_cifar100_files(const std::vector<std::string>& files) {
  // Two label bytes per record: coarse then fine; the fine label is used.
  return load_cifar_layout(files, 2, 1, 100);
}

std::pair<Dataset, Dataset> load_cifar10_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (fs::exists(root / "data_batch_1.bin")) {
    std::vector<std::string> train_files;
    for (int b = 1; b <= 5; ++b)
      train_files.push_back((root / ("data_batch_" + std::to_string(b) +
                                     ".bin")).string());
    return {load_cifar10_files(train_files),
            load_cifar10_files({(root / "test_batch.bin").string()})};
  }
  if (fs::exists(root / "train.bin"))
    return {load_cifar10_files({(root / "train.bin").string()}),
            load_cifar10_files({(root / "test.bin").string()})};
  throw std::runtime_error(dir +
                           ": no data_batch_1.bin or train.bin found");
}

void write_cifar10_file(const Dataset& ds, const std::string& path) {
  validate(ds);
  if (ds.sample_shape != Shape{3, 32, 32})
    throw std::runtime_error("write_cifar10: sample shape must be {3,32,32}");
  if (ds.classes > 10)
    throw std::runtime_error("write_cifar10: more than 10 classes");
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(ds.count()) * 3073);
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    bytes.push_back(static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]));
    const float* px = ds.pixels.data() + i * 3072;
    for (std::size_t p = 0; p < 3072; ++p) bytes.push_back(to_byte(px[p]));
  }
  write_file_bytes(path, bytes);
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const auto img = read_file_bytes(images_path);
  if (img.size() < 16) throw std::runtime_error(images_path + ": truncated");
  if (read_be32(img.data()) != 0x00000803u)
    throw std::runtime_error(images_path + ": bad IDX image magic");
  const std::int64_t count = read_be32(img.data() + 4);
  const std::int64_t rows = read_be32(img.data() + 8);
  const std::int64_t cols = read_be32(img.data() + 12);
  if (static_cast<std::int64_t>(img.size()) != 16 + count * rows * cols)
    throw std::runtime_error(images_path + ": truncated image payload");

  const auto lab = read_file_bytes(labels_path);
  if (lab.size() < 8) throw std::runtime_error(labels_path + ": truncated");
  if (read_be32(lab.data()) != 0x00000801u)
    throw std::runtime_error(labels_path + ": bad IDX label magic");
  const std::int64_t lcount = read_be32(lab.data() + 4);
  if (static_cast<std::int64_t>(lab.size()) != 8 + lcount)
    throw std::runtime_error(labels_path + ": truncated label payload");
  if (lcount != count)
    throw std::runtime_error("IDX image/label count mismatch: " +
                             std::to_string(count) + " vs " +
                             std::to_string(lcount));

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  std::int32_t max_label = 0;
  for (std::int64_t i = 0; i < count; ++i)
    max_label = std::max(max_label,
                         static_cast<std::int32_t>(lab[8 + static_cast<std::size_t>(i)]));
  ds.classes = max_label + 1 < 2 ? 2 : max_label + 1;
  ds.pixels.reserve(static_cast<std::size_t>(count * rows * cols));
  for (std::size_t p = 16; p < img.size(); ++p)
    ds.pixels.push_back(static_cast<float>(img[p]) / 255.0f);
  for (std::int64_t i = 0; i < count; ++i)
    ds.labels.push_back(static_cast<std::int32_t>(lab[8 + static_cast<std::size_t>(i)]));
  validate(ds);
  return ds;
}

void write_idx_files(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  validate(ds);
  if (ds.sample_shape.size() != 3 || ds.sample_shape[0] != 1)
    throw std::runtime_error("write_idx: sample shape must be {1,rows,cols}");
  std::vector<unsigned char> img;
  push_be32(img, 0x00000803u);
  push_be32(img, static_cast<std::uint32_t>(ds.count()));
  push_be32(img, static_cast<std::uint32_t>(ds.sample_shape[1]));
  push_be32(img, static_cast<std::uint32_t>(ds.sample_shape[2]));
  for (float v : ds.pixels) img.push_back(to_byte(v));
  write_file_bytes(images_path, img);

  std::vector<unsigned char> lab;
  push_be32(lab, 0x00000801u);
  push_be32(lab, static_cast<std::uint32_t>(ds.count()));
  for (auto l : ds.labels) lab.push_back(static_cast<unsigned char>(l));
  write_file_bytes(labels_path, lab);
}

Dataset synthetic_blobs(std::int32_t classes, std::int64_t per_class,
                        const Shape& dims, std::uint64_t seed,
                        double noise_std) {
  if (classes < 2 || per_class < 1)
    throw std::invalid_argument("synthetic_blobs: counts must be positive");
  const std::int64_t numel = shape_numel(dims);
  Dataset ds;
  ds.sample_shape = dims;
  ds.classes = classes;
  ds.pixels.reserve(static_cast<std::size_t>(classes * per_class * numel));
  for (std::int32_t c = 0; c < classes; ++c) {
    RandomStream mean_rng(derive_seed(seed, "blob-mean", c));
    std::vector<double> mean(static_cast<std::size_t>(numel));
    for (auto& m : mean) m = mean_rng.uniform(0.15, 0.85);
    RandomStream rng(derive_seed(seed, "blob", c));
    for (std::int64_t i = 0; i < per_class; ++i) {
      for (std::int64_t d = 0; d < numel; ++d) {
        const double v =
            mean[static_cast<std::size_t>(d)] + noise_std * rng.normal();
        ds.pixels.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
      ds.labels.push_back(c);
    }
  }
  validate(ds);
  return ds;
}

namespace {

// One low-frequency plane wave; adds amp*sin(2*pi*(fx*x+fy*y)/32 + phase)
// to each pixel of the given channel image.
void add_wave(float* chan, double amp, int fx, int fy, double phase) {
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      chan[y * 32 + x] += static_cast<float>(
          amp * std::sin(2.0 * kPi * (fx * x + fy * y) / 32.0 + phase));
}

}  // namespace

Dataset synthetic_images(std::int32_t classes, std::int64_t per_class,
                         std::uint64_t seed, double label_noise,
                         double pixel_noise, double class_sep) {
  if (classes < 2 || per_class < 1)
    throw std::invalid_argument("synthetic_images: counts must be positive");
  if (label_noise < 0.0 || label_noise > 1.0)
    throw std::invalid_argument("synthetic_images: label_noise outside [0,1]");
  if (pixel_noise < 0.0)
    throw std::invalid_argument("synthetic_images: pixel_noise negative");
  if (class_sep < 0.0 || class_sep > 1.0)
    throw std::invalid_argument("synthetic_images: class_sep outside [0,1]");
  constexpr std::int64_t kPixels = 3 * 32 * 32;

  // Class prototypes: a base color plus a few low-frequency waves.
  std::vector<std::vector<float>> proto(static_cast<std::size_t>(classes));
  for (std::int32_t c = 0; c < classes; ++c) {
    RandomStream rng(derive_seed(seed, "proto", c));
    auto& p = proto[static_cast<std::size_t>(c)];
    p.assign(kPixels, 0.0f);
    for (int ch = 0; ch < 3; ++ch) {
      const float base = static_cast<float>(
          0.5 + class_sep * (rng.uniform(0.30, 0.70) - 0.5));
      float* chan = p.data() + ch * 1024;
      for (int i = 0; i < 1024; ++i) chan[i] = base;
    }
    for (int k = 0; k < 4; ++k) {
      const int fx = 1 + static_cast<int>(rng.uniform_int(4));
      const int fy = 1 + static_cast<int>(rng.uniform_int(4));
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      for (int ch = 0; ch < 3; ++ch) {
        const double amp = rng.uniform(0.04, 0.14);
        add_wave(p.data() + ch * 1024, amp, fx, fy, phase);
      }
    }
  }

  Dataset ds;
  ds.sample_shape = {3, 32, 32};
  ds.classes = classes;
  ds.pixels.resize(static_cast<std::size_t>(classes * per_class * kPixels));
  std::vector<float> instance(kPixels);
  for (std::int32_t c = 0; c < classes; ++c) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      RandomStream rng(derive_seed(seed, "image",
                                   static_cast<std::uint64_t>(c), i));
      const int dy = static_cast<int>(rng.uniform_int(7)) - 3;
      const int dx = static_cast<int>(rng.uniform_int(7)) - 3;
      std::fill(instance.begin(), instance.end(), 0.0f);
      const int ifx = 1 + static_cast<int>(rng.uniform_int(6));
      const int ify = 1 + static_cast<int>(rng.uniform_int(6));
      const double iphase = rng.uniform(0.0, 2.0 * kPi);
      for (int ch = 0; ch < 3; ++ch) {
        const double amp = rng.uniform(0.0, 0.12);
        add_wave(instance.data() + ch * 1024, amp, ifx, ify, iphase);
      }
      float* out =
          ds.pixels.data() + (c * per_class + i) * kPixels;
      const float* p = proto[static_cast<std::size_t>(c)].data();
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) {
            const int sy = (y + dy + 32) % 32;  // toroidal translation
            const int sx = (x + dx + 32) % 32;
            const double v = p[ch * 1024 + sy * 32 + sx] +
                             instance[ch * 1024 + y * 32 + x] +
                             pixel_noise * rng.normal();
            out[ch * 1024 + y * 32 + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
      ds.labels.push_back(c);
    }
  }
  if (label_noise > 0.0) {
    RandomStream rng(derive_seed(seed, "label-noise"));
    for (auto& l : ds.labels)
      if (rng.uniform() < label_noise)
        l = static_cast<std::int32_t>(rng.uniform_int(
            static_cast<std::uint64_t>(classes)));
  }
  validate(ds);
  return ds;
}

Dataset take(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  const std::int64_t numel = ds.sample_numel();
  Dataset out;
  out.sample_shape = ds.sample_shape;
  out.classes = ds.classes;
  out.pixels.reserve(indices.size() * static_cast<std::size_t>(numel));
  out.labels.reserve(indices.size());
  for (auto idx : indices) {
    if (idx < 0 || idx >= ds.count())
      throw std::out_of_range("take: index " + std::to_string(idx));
    const float* src = ds.pixels.data() + idx * numel;
    out.pixels.insert(out.pixels.end(), src, src + numel);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(idx)]);
  }
  validate(out);
  return out;
}

namespace {

std::vector<std::int64_t> shuffled_indices(std::int64_t n,
                                           std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  RandomStream rng(seed);
  rng.shuffle(idx);
  return idx;
}

}  // namespace

Dataset shuffled_subset(const Dataset& ds, std::int64_t count,
                        std::uint64_t seed) {
  if (count < 1 || count > ds.count())
    throw std::invalid_argument("shuffled_subset: count " +
                                std::to_string(count) + " outside [1," +
                                std::to_string(ds.count()) + "]");
  auto idx = shuffled_indices(ds.count(), seed);
  idx.resize(static_cast<std::size_t>(count));
  return take(ds, idx);
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            std::int64_t val_count,
                                            std::uint64_t seed) {
  if (val_count < 1 || val_count >= ds.count())
    throw std::invalid_argument("split_train_val: bad val_count");
  const auto idx = shuffled_indices(ds.count(), seed);
  const std::vector<std::int64_t> val_idx(idx.begin(),
                                          idx.begin() + val_count);
  const std::vector<std::int64_t> train_idx(idx.begin() + val_count,
                                            idx.end());
  return {take(ds, train_idx), take(ds, val_idx)};
}

template <typename T>
void fill_batch(const Dataset& ds, const std::vector<std::int64_t>& order,
                std::size_t begin, std::size_t end, const AugmentConfig& aug,
                RandomStream& rng, TensorT<T>& x,
                std::vector<std::int32_t>& labels) {
  if (begin >= end || end > order.size())
    throw std::invalid_argument("fill_batch: bad range");
  const std::int64_t n = static_cast<std::int64_t>(end - begin);
  const std::int64_t numel = ds.sample_numel();
  Shape batch_shape;
  batch_shape.push_back(n);
  for (auto d : ds.sample_shape) batch_shape.push_back(d);
  if (x.shape() != batch_shape) x = TensorT<T>(batch_shape);
  labels.resize(static_cast<std::size_t>(n));

  const bool spatial = ds.sample_shape.size() == 3;
  const bool do_aug = aug.enabled && spatial;
  const std::int64_t C = spatial ? ds.sample_shape[0] : 0;
  const std::int64_t H = spatial ? ds.sample_shape[1] : 0;
  const std::int64_t W = spatial ? ds.sample_shape[2] : 0;

  for (std::int64_t b = 0; b < n; ++b) {
    const std::int64_t idx = order[begin + static_cast<std::size_t>(b)];
    if (idx < 0 || idx >= ds.count())
      throw std::out_of_range("fill_batch: index " + std::to_string(idx));
    labels[static_cast<std::size_t>(b)] =
        ds.labels[static_cast<std::size_t>(idx)];
    const float* src = ds.pixels.data() + idx * numel;
    T* dst = x.data() + b * numel;
    if (!do_aug) {
      for (std::int64_t p = 0; p < numel; ++p)
        dst[p] = static_cast<T>(src[p]);
      continue;
    }
    // Fixed draw count per sample keeps downstream streams aligned.
    const int dy = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(2 * aug.pad + 1)));
    const int dx = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(2 * aug.pad + 1)));
    const bool flip = rng.uniform_int(2) == 1 && aug.flip;
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t yy = 0; yy < H; ++yy)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          const std::int64_t sy = yy + dy - aug.pad;
          const std::int64_t sxx = (flip ? W - 1 - xx : xx) + dx - aug.pad;
          T v = T{0};
          if (sy >= 0 && sy < H && sxx >= 0 && sxx < W)
            v = static_cast<T>(src[(c * H + sy) * W + sxx]);
          dst[(c * H + yy) * W + xx] = v;
        }
  }
}

template <typename T>
void to_tensor(const Dataset& ds, TensorT<T>& x,
               std::vector<std::int32_t>& labels) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.count()));
  for (std::int64_t i = 0; i < ds.count(); ++i)
    order[static_cast<std::size_t>(i)] = i;
  AugmentConfig no_aug;
  RandomStream rng(0);
  fill_batch(ds, order, 0, order.size(), no_aug, rng, x, labels);
}

#define SPARW_INSTANTIATE(T)                                               \
  template void fill_batch<T>(const Dataset&,                              \
                              const std::vector<std::int64_t>&,            \
                              std::size_t, std::size_t,                    \
                              const AugmentConfig&, RandomStream&,         \
                              TensorT<T>&, std::vector<std::int32_t>&);    \
  template void to_tensor<T>(const Dataset&, TensorT<T>&,                  \
                             std::vector<std::int32_t>&);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
