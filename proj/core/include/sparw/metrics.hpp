// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Accuracy/robustness evaluation, checkpoint selection, FLOPs accounting
// helpers, transfer-attack evaluation, and loss-surface grids.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/data.hpp"

namespace sparw {

// One row of the per-epoch metrics stream. Accuracies are fractions in
// [0,1]; cum_train_flops is non-decreasing across rows.
struct MetricsRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_ra = 0.0;        // robust accuracy on a fixed train subset
  double val_ra = 0.0;
  double test_ra = 0.0;
  double test_sa = 0.0;
  double val_robust_loss = 0.0;
  double sparsity = 0.0;
  std::int64_t active_params = 0;
  double cum_train_flops = 0.0;
  double wall_time_s = 0.0;
};

// Fixed CSV schema (stable across versions).
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
// Parses a metrics.csv payload (header + rows). Throws on schema mismatch.
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);

// Evaluation -----------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy per sample (on perturbed inputs
                      // when an attack is given)
};

// Accuracy (and mean loss) of the frozen model over the dataset, in eval
// mode. With a non-null attack, inputs are perturbed per evaluation chunk by
// pgd_attack using seeds derived from `seed`; results are independent of the
// training batch size. Errors on an empty dataset.
template <typename T>
EvalResult evaluate_accuracy(Network<T>& net, const Dataset& ds,
                             const AttackConfig* attack, std::uint64_t seed);

// train RA minus test RA (signed; negative early in training).
double robust_generalization_gap(double train_ra, double test_ra);

// Best = argmax validation RA (earliest on ties); final = last row.
// diff = best test RA - final test RA (robust-overfitting degradation).
struct CheckpointSelection {
  int best_index = 0;
  int final_index = 0;
  double diff = 0.0;
};
CheckpointSelection select_checkpoints(const std::vector<MetricsRecord>& h);

// FLOPs accounting -------------------------------------------------------------
//
// forward_flops is a per-sample forward cost F (see model.hpp); the backward
// pass is costed at 2F uniformly, so a standard training iteration costs 3F
// and an adversarial one 3F per attack step plus 3F for the training step.

double standard_iteration_flops(double forward_flops);
double adversarial_iteration_flops(double forward_flops, int attack_steps);

// Transfer attacks -------------------------------------------------------------

// Crafts perturbations against `source` and measures `target`'s accuracy on
// them. Requires identical input shapes and class counts. With source ==
// target this equals whitebox robust accuracy bit-exactly (same seed).
template <typename T>
EvalResult transfer_eval(Network<T>& source, Network<T>& target,
                         const Dataset& ds, const AttackConfig& attack,
                         std::uint64_t seed);

// Loss surface -----------------------------------------------------------------

struct LossSurface {
  int n = 0;                   // grid side length
  double radius = 1.0;
  std::vector<double> coords;  // n offsets in [-radius, radius]
  std::vector<double> loss;    // n*n, row-major in (a, b)
};

// Evaluates the (optionally adversarial) loss on the given batch at
// parameters theta + a*d1 + b*d2 over an n-by-n grid, a and b in
// [-radius, radius] (single point 0 for n=1). The directions are seeded
// Gaussian draws over the weight tensors, zeroed at masked positions,
// normalized per output unit to match the unit's weight norm, and
// orthogonalized. Parameters are restored exactly afterwards.
template <typename T>
LossSurface loss_surface_grid(Network<T>& net, const TensorT<T>& x,
                              const std::vector<std::int32_t>& labels, int n,
                              double radius, const AttackConfig* attack,
                              std::uint64_t seed);

// TSV serialization of the grid: one "a<TAB>b<TAB>loss" row per point.
std::string loss_surface_tsv(const LossSurface& s);

}  // namespace sparw
