// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset containers, binary loaders (CIFAR layout, IDX layout), synthetic
// data generation, deterministic splits, and batch assembly with optional
// crop/flip augmentation.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sparw/rng.hpp"
#include "sparw/tensor.hpp"

namespace sparw {

// A labeled image/vector set. Pixels are stored as float32 in [0,1],
// sample-major: sample i occupies pixels[i*numel .. (i+1)*numel).
struct Dataset {
  Shape sample_shape;                // e.g. {3,32,32}; empty = invalid
  std::int32_t classes = 0;
  std::vector<float> pixels;
  std::vector<std::int32_t> labels;

  std::int64_t sample_numel() const { return shape_numel(sample_shape); }
  std::int64_t count() const {
    return static_cast<std::int64_t>(labels.size());
  }
};

// Throws std::runtime_error if sizes are inconsistent or labels are out of
// range.
void validate(const Dataset& ds);

// CIFAR binary layout ------------------------------------------------------
//
// CIFAR-10: records of 3073 bytes = 1 label byte (0-9) + 3072 pixel bytes
// (channel-major R,G,B; each channel 32x32 row-major). CIFAR-100: records of
// 3074 bytes = coarse label byte + fine label byte (0-99, used) + pixels.

// Loads and concatenates the given record files. Errors on truncated files
// or out-of-range labels.
Dataset load_cifar10_files(const std::vector<std::string>& files);
Dataset load_cifar100_files(const std::vector<std::string>& files);

// Loads a CIFAR-10-layout directory: uses data_batch_1..5.bin + test_batch.bin
// when present (standard distribution), else train.bin + test.bin (generated
// data). Returns {train, test}.
std::pair<Dataset, Dataset> load_cifar10_dir(const std::string& dir);

// Writes records in the CIFAR-10 binary layout (values quantized to
// round(p*255)). The dataset must have sample shape {3,32,32} and <= 10
// classes.
void write_cifar10_file(const Dataset& ds, const std::string& path);

// IDX layout -----------------------------------------------------------------

// Loads big-endian IDX image (magic 0x00000803, dims count x rows x cols) and
// label (magic 0x00000801) files; returns grayscale samples of shape
// {1,rows,cols}. Errors on bad magic or image/label count mismatch.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

void write_idx_files(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path);

// Synthetic data -------------------------------------------------------------

// Gaussian class blobs with well-separated per-class means, clamped to [0,1].
// Deterministic given seed; exactly per_class samples per class, grouped by
// class in order.
Dataset synthetic_blobs(std::int32_t classes, std::int64_t per_class,
                        const Shape& dims, std::uint64_t seed,
                        double noise_std = 0.08);

// Procedurally generated 32x32x3 image classes: low-frequency class
// prototypes plus per-sample texture, translation, and pixel noise, with an
// optional fraction of uniformly relabeled samples (label_noise). Produces
// data with CIFAR-like spatial statistics for desk-scale experiments.
// pixel_noise is the per-pixel Gaussian sigma; class_sep in [0,1] scales how
// far class base colors spread from mid-gray (1 = fully distinct, 0 = shared),
// so lowering it makes classes overlap and the task harder.
Dataset synthetic_images(std::int32_t classes, std::int64_t per_class,
                         std::uint64_t seed, double label_noise = 0.0,
                         double pixel_noise = 0.05, double class_sep = 1.0);

// Splits / subsets -----------------------------------------------------------

// Returns the samples at the given indices, in order.
Dataset take(const Dataset& ds, const std::vector<std::int64_t>& indices);

// Deterministic seeded shuffle, then {first count, rest} split offsets:
// returns the first `count` shuffled samples. count > ds.count() errors.
Dataset shuffled_subset(const Dataset& ds, std::int64_t count,
                        std::uint64_t seed);

// Deterministic validation split: shuffles by seed, then moves val_count
// samples to the validation set and leaves the rest as train. Returns
// {train, val}.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            std::int64_t val_count,
                                            std::uint64_t seed);

// Batch assembly -------------------------------------------------------------

struct AugmentConfig {
  bool enabled = false;  // pad-4 zero-pad random crop + horizontal flip
  int pad = 4;
  bool flip = true;
};

// Copies samples order[begin..end) into x (shape [end-begin, sample...]) and
// labels. When augmentation is enabled (rank-3 samples only) each sample
// consumes exactly three draws from rng (dy, dx, flip) regardless of content.
template <typename T>
void fill_batch(const Dataset& ds, const std::vector<std::int64_t>& order,
                std::size_t begin, std::size_t end, const AugmentConfig& aug,
                RandomStream& rng, TensorT<T>& x,
                std::vector<std::int32_t>& labels);

// Converts the whole dataset (no augmentation) into one tensor batch.
template <typename T>
void to_tensor(const Dataset& ds, TensorT<T>& x,
               std::vector<std::int32_t>& labels);

}  // namespace sparw
