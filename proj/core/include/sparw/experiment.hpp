// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment driver: loads data, builds the model, dispatches to
// the configured training method, and writes the run artifacts (metrics.csv,
// config.txt, summary.txt, checkpoints, optional loss-surface grid) under
// the output directory.

#pragma once

#include <cstdint>
#include <string>

#include "sparw/config.hpp"
#include "sparw/data.hpp"
#include "sparw/model.hpp"

namespace sparw {

// Data splits for one run. `train` is what the epoch loop sees (after the
// validation split and any subsetting); `train_probe` is the fixed subset
// used for the per-epoch train robust accuracy.
struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  Dataset train_probe;
};

// Loads the configured dataset and applies the split/subset rules. For
// cifar10 with an empty data.path the SPARW_CIFAR10_DIR environment variable
// supplies the directory.
DataSplits load_splits(const ExperimentConfig& cfg);

// Builds the configured model spec for the given input shape and class
// count: preset + optional widths, uniform width scaling, and the
// parameter-matched width search for the small-dense baseline.
ModelSpec build_model_spec(const ExperimentConfig& cfg,
                           const Shape& input_shape, std::int64_t classes);

// Runs the configured experiment end to end. Writes one metrics.csv row per
// epoch, last/best/final checkpoints, config.txt, summary.txt, and (when
// surface.n > 0) loss_surface.tsv under cfg.out_dir. Resumes from
// <out_dir>/last.ckpt when cfg.resume is set and the file exists; the
// resumed run's metrics.csv is byte-identical to an uninterrupted one.
// Returns the summary text (also written to summary.txt).
std::string run_experiment(const ExperimentConfig& cfg);

}  // namespace sparw
