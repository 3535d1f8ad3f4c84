// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum, learning-rate schedules, standard and adversarial
// training epochs, the early-ticket mask search (mask-distance convergence
// plus rewind), and the dynamic prune/grow training loop with its adaptive
// sparsity controller.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/data.hpp"
#include "sparw/sparsity.hpp"

namespace sparw {

// Configs ---------------------------------------------------------------

enum class LrScheduleKind { multistep, cyclic };

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double lr0 = 0.1;
  std::vector<int> milestones = {100, 150};  // epochs where lr decays
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrScheduleKind schedule = LrScheduleKind::multistep;
  double cyclic_max_lr = 0.2;
  bool adversarial = true;
  AttackConfig train_attack;                   // 10 steps by default
  AttackConfig eval_attack = {8.0 / 255.0, 2.0 / 255.0, 20, true};
  AugmentConfig augment = {true, 4, true};     // pad-4 crop + flip, on
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

enum class RBRegime { standard_sgd, pgd_at, fast_at };

RBRegime rb_regime_from_string(const std::string& s);
std::string to_string(RBRegime r);

// Early-ticket search configuration.
struct RBConfig {
  double sparsity = 0.8;       // target sparsity of the drawn mask
  double tau = 0.1;            // mask-distance convergence threshold
  int queue_len = 5;           // sliding window length
  int max_epochs = 200;        // search budget
  RBRegime regime = RBRegime::pgd_at;
};

void validate(const RBConfig& cfg);

// Dynamic prune/grow configuration.
struct FBConfig {
  double sparsity = 0.8;       // initial (and, without adaptation, constant)
  std::int64_t delta_t = 2000; // iterations between topology updates
  double k0 = 0.5;             // initial update ratio, cosine-annealed
  bool adaptive = false;       // enables the queue-driven ratio boosts
  int queue_len = 5;
  double freq_threshold = 0.6; // rising-trend frequency that triggers a boost
  double prune_boost = 0.004;  // p = (1 + prune_boost) * k when triggered
  double grow_boost = 0.0005;  // g = (1 + grow_boost) * k when triggered
  int t_start = 50;            // epochs before adaptation may trigger
  std::string allocator = "igq";  // uniform | erk | igq | snip
};

void validate(const FBConfig& cfg);

// Optimizer ----------------------------------------------------------------

template <typename T>
struct OptimizerStateT {
  std::vector<TensorT<T>> velocity;  // aligned with Network::params
  std::int64_t step = 0;
  double lr = 0.0;
};

template <typename T>
OptimizerStateT<T> make_optimizer_state(const Network<T>& net);

// One SGD-with-momentum step from the gradients currently in net.params:
//   g' = g + wd*w;  v <- momentum*v + g';  w <- w - lr*v.
// Masked positions are skipped entirely: their weights stay exactly 0 and
// their velocity is forced to 0.
template <typename T>
void sgd_step(Network<T>& net, OptimizerStateT<T>& state, double lr,
              double momentum, double weight_decay);

// Schedules ------------------------------------------------------------------

// lr0 * decay^(number of milestones <= epoch); epochs are 0-based.
double lr_multistep(double lr0, const std::vector<int>& milestones,
                    double decay, int epoch);

// Triangular ramp: 0 -> max_lr over the first half of total_iters, back to 0
// over the second half.
double lr_cyclic(double max_lr, std::int64_t iter, std::int64_t total_iters);

// Epochs -------------------------------------------------------------------

struct EpochStats {
  double loss = 0.0;       // mean loss per sample (on perturbed batches if adversarial)
  double accuracy = 0.0;   // train accuracy on the (perturbed) batches
  double flops = 0.0;      // training FLOPs consumed
  std::int64_t iterations = 0;
};

// Optional per-iteration callbacks, keyed by the global iteration counter
// (0-based, incremented after every optimizer step).
struct IterationHooks {
  // Return true to make this iteration's training backward pass compute
  // dense gradients (all positions) instead of masked ones. The optimizer
  // step is unaffected (masked positions are skipped either way).
  std::function<bool(std::int64_t)> wants_dense_grads;
  // Runs after the optimizer step of the given iteration.
  std::function<void(std::int64_t)> after_step;
};

// Runs one epoch over a seeded shuffle of `train` in batches of
// cfg.batch_size. When adversarial, each batch is perturbed by
// cfg.train_attack before the (train-mode) step. lr_of_iter supplies the
// learning rate per global iteration. Deterministic given (net, cfg.seed,
// epoch, global_iter).
template <typename T>
EpochStats train_epoch(Network<T>& net, OptimizerStateT<T>& opt,
                       const Dataset& train, const TrainConfig& cfg,
                       bool adversarial, const AttackConfig& attack,
                       int epoch,
                       const std::function<double(std::int64_t)>& lr_of_iter,
                       std::int64_t& global_iter,
                       const IterationHooks& hooks = {});

// Early-ticket search ---------------------------------------------------------

struct RBResult {
  MaskSet mask;
  int epochs_trained = 0;          // epochs completed when the mask was drawn
  bool converged = false;          // false: search budget exhausted
  std::vector<double> distances;   // mask distance recorded after each epoch
  double search_flops = 0.0;
};

// Pure decision rule: 1-based epoch index at which the sliding window of the
// last queue_len distances is full with max < tau, or -1 if never.
int rb_draw_epoch(const std::vector<double>& distances, int queue_len,
                  double tau);

// Trains `net` from its current (fresh) initialization under the configured
// regime, computing a global magnitude mask at target sparsity after every
// epoch and its distance to the previous epoch's mask (the first distance
// compares against the mask of the untrained initialization). Stops at the
// first epoch where the last queue_len distances all fall below tau, then
// rewinds every parameter and batch-norm buffer to the initial snapshot and
// installs the drawn mask. If max_epochs is exhausted the final mask is
// returned with converged=false (still rewound and installed).
template <typename T>
RBResult find_robust_bird(Network<T>& net, const Dataset& train,
                          const RBConfig& rb, const TrainConfig& cfg);

// Dynamic prune/grow -----------------------------------------------------------

// k(t) = (k0/2) * (1 + cos(pi * t / total)), t in [0, total].
double cosine_update_ratio(double k0, std::int64_t t, std::int64_t total);

// Fraction of strictly-increasing consecutive pairs in the window.
double increasing_frequency(const std::deque<double>& window);

// Multiplicative boost factors for the prune/grow ratios. Both default to 1;
// a factor becomes (1 + boost) when its queue is full, epochs_completed is
// past cfg.t_start, and the queue's rising-trend frequency reaches
// cfg.freq_threshold. q_p holds per-epoch robust generalization gaps, q_g
// per-epoch robust validation losses.
struct FBBoost {
  double p_factor = 1.0;
  double g_factor = 1.0;
};

FBBoost fb_plus_adapt(const std::deque<double>& q_p,
                      const std::deque<double>& q_g, int epochs_completed,
                      const FBConfig& cfg);

// One topology update: per prunable layer, prune round(p*active) smallest-
// magnitude active weights, then grow round(g*active_before) inactive
// positions with the largest dense |gradient| (candidates never include
// positions pruned in this same update). When a layer cannot host the full
// grow count, both its prune and grow counts are reduced by the same excess,
// preserving the intended active-count change. Grown weights are set to
// exactly 0 and their momentum cleared; after the update the momentum of
// every masked position is 0. Requires dense gradients in net.params[].grad.
template <typename T>
void fb_topology_update(Network<T>& net, OptimizerStateT<T>& opt,
                        MaskSet& masks, double p, double g);

// Per-run state for the dynamic prune/grow method. The owner drives it from
// the epoch loop: is_update_iter/apply_update from the iteration hooks, and
// end_epoch once per epoch with the recorded statistics.
template <typename T>
struct FlyingBird {
  FBConfig cfg;
  std::int64_t total_iters = 0;  // cosine-annealing horizon
  MaskSet masks;                 // current topology (installed in the net)
  bool boost_p = false;          // adaptive flags for the current epoch
  bool boost_g = false;
  std::deque<double> q_p, q_g;   // trend queues (adaptive mode)
  std::int64_t updates = 0;

  bool is_update_iter(std::int64_t iter) const {
    return (iter + 1) % cfg.delta_t == 0;
  }
  // Cosine-annealed ratio at the END of iteration `iter`.
  double ratio_at(std::int64_t iter) const;
  // Prune/grow with the current ratios and boost flags; refreshes masks.
  void apply_update(Network<T>& net, OptimizerStateT<T>& opt,
                    std::int64_t iter);
  // Records this epoch's robust generalization gap and robust validation
  // loss, then refreshes the boost flags (no-op unless cfg.adaptive).
  void end_epoch(double robust_gap, double val_robust_loss,
                 int epochs_completed);
};

}  // namespace sparw
