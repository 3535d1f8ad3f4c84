// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary checkpoints: magic "SPRW", version word, then
// length-prefixed named sections. Little-endian throughout. Round-trips are
// bit-exact, so training resumed from a checkpoint reproduces an
// uninterrupted run.

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "sparw/autodiff.hpp"
#include "sparw/train.hpp"

namespace sparw {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// FNV-1a over the canonical model description; stored in the checkpoint and
// checked against the configured model on load.
std::uint64_t spec_hash(const ModelSpec& spec);

// Everything needed to restart training at an epoch boundary. Param, mask,
// velocity, and batch-norm entries are aligned with Network::params /
// Network::bn order.
template <typename T>
struct TrainingSnapshot {
  std::string spec_canonical;
  int epoch = 0;                  // epochs completed
  std::int64_t global_iter = 0;
  double cum_flops = 0.0;
  int best_epoch = -1;
  double best_val_ra = -1.0;
  double wall_base_s = 0.0;       // accumulated wall time of previous runs
  std::string metrics_csv;        // metrics rows written so far (full text)

  std::vector<std::string> param_names;
  std::vector<TensorT<T>> param_values;
  std::vector<std::vector<std::uint8_t>> masks;  // per param; empty = dense
  std::vector<TensorT<T>> velocity;
  std::int64_t opt_step = 0;
  double opt_lr = 0.0;
  std::vector<BatchNormBuffers<T>> bn;

  // Dynamic prune/grow controller state (present for those methods only).
  bool has_fb = false;
  std::int64_t fb_total_iters = 0;
  std::int64_t fb_updates = 0;
  bool fb_boost_p = false;
  bool fb_boost_g = false;
  std::deque<double> fb_q_p, fb_q_g;
};

// Copies the live training state into a snapshot (training-progress fields
// are left for the caller to fill).
template <typename T>
TrainingSnapshot<T> capture_snapshot(const Network<T>& net,
                                     const OptimizerStateT<T>& opt);

// Restores parameters, masks, velocity, and batch-norm buffers into an
// existing network built from the SAME spec. Throws on any mismatch.
template <typename T>
void apply_snapshot(const TrainingSnapshot<T>& snap, Network<T>& net,
                    OptimizerStateT<T>& opt);

// Serialization. save writes atomically (temp file + rename). load throws
// std::runtime_error on bad magic, unsupported version, truncation, or a
// precision mismatch with T.
template <typename T>
void save_checkpoint(const std::string& path, const TrainingSnapshot<T>& s);

template <typename T>
TrainingSnapshot<T> load_checkpoint(const std::string& path);

// Reads only the stored precision tag ("f32"/"f64") so callers can pick the
// right template instantiation before a full load.
std::string checkpoint_precision(const std::string& path);

}  // namespace sparw
