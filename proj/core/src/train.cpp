// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sparw/rng.hpp"

namespace sparw {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// Config validation -----------------------------------------------------------

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs < 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
  if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("train: lr0 <= 0");
  if (!(cfg.lr_decay > 0.0)) throw std::invalid_argument("train: lr_decay <= 0");
  if (!(cfg.momentum >= 0.0) || cfg.momentum >= 1.0)
    throw std::invalid_argument("train: momentum outside [0,1)");
  if (!(cfg.weight_decay >= 0.0))
    throw std::invalid_argument("train: weight_decay < 0");
  if (!(cfg.cyclic_max_lr > 0.0))
    throw std::invalid_argument("train: cyclic_max_lr <= 0");
  for (std::size_t i = 0; i < cfg.milestones.size(); ++i) {
    if (cfg.milestones[i] < 0 || cfg.milestones[i] > cfg.epochs)
      throw std::invalid_argument("train: milestone outside [0, epochs]");
    if (i > 0 && cfg.milestones[i] <= cfg.milestones[i - 1])
      throw std::invalid_argument("train: milestones must be ascending");
  }
  validate(cfg.train_attack);
  validate(cfg.eval_attack);
}

RBRegime rb_regime_from_string(const std::string& s) {
  if (s == "standard") return RBRegime::standard_sgd;
  if (s == "pgd-at") return RBRegime::pgd_at;
  if (s == "fast-at") return RBRegime::fast_at;
  throw std::invalid_argument("unknown ticket-search regime: " + s);
}

std::string to_string(RBRegime r) {
  switch (r) {
    case RBRegime::standard_sgd: return "standard";
    case RBRegime::pgd_at: return "pgd-at";
    case RBRegime::fast_at: return "fast-at";
  }
  return "?";
}

void validate(const RBConfig& cfg) {
  if (!(cfg.sparsity >= 0.0) || cfg.sparsity >= 1.0)
    throw std::invalid_argument("rb: sparsity outside [0,1)");
  if (!(cfg.tau > 0.0) || cfg.tau >= 1.0)
    throw std::invalid_argument("rb: tau outside (0,1)");
  if (cfg.queue_len < 2) throw std::invalid_argument("rb: queue_len < 2");
  if (cfg.max_epochs < 1) throw std::invalid_argument("rb: max_epochs < 1");
}

void validate(const FBConfig& cfg) {
  if (!(cfg.sparsity >= 0.0) || cfg.sparsity >= 1.0)
    throw std::invalid_argument("fb: sparsity outside [0,1)");
  if (cfg.delta_t < 1) throw std::invalid_argument("fb: delta_t < 1");
  if (!(cfg.k0 >= 0.0) || cfg.k0 > 1.0)
    throw std::invalid_argument("fb: k0 outside [0,1]");
  if (cfg.queue_len < 2) throw std::invalid_argument("fb: queue_len < 2");
  if (!(cfg.freq_threshold >= 0.0) || cfg.freq_threshold > 1.0)
    throw std::invalid_argument("fb: freq_threshold outside [0,1]");
  if (!(cfg.prune_boost >= 0.0) || !(cfg.grow_boost >= 0.0))
    throw std::invalid_argument("fb: boosts must be >= 0");
  if (cfg.t_start < 0) throw std::invalid_argument("fb: t_start < 0");
  if (cfg.allocator != "uniform" && cfg.allocator != "erk" &&
      cfg.allocator != "igq" && cfg.allocator != "snip")
    throw std::invalid_argument("fb: unknown allocator " + cfg.allocator);
}

// Optimizer ------------------------------------------------------------------

template <typename T>
OptimizerStateT<T> make_optimizer_state(const Network<T>& net) {
  OptimizerStateT<T> st;
  st.velocity.reserve(net.params.size());
  for (const auto& p : net.params)
    st.velocity.emplace_back(p.value.shape());
  return st;
}

template <typename T>
void sgd_step(Network<T>& net, OptimizerStateT<T>& state, double lr,
              double momentum, double weight_decay) {
  if (state.velocity.size() != net.params.size())
    throw std::invalid_argument("sgd_step: state/param count mismatch");
  const T lr_t = static_cast<T>(lr);
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
    auto& p = net.params[pi];
    auto& v = state.velocity[pi];
    if (v.shape() != p.value.shape())
      throw std::invalid_argument("sgd_step: velocity shape mismatch on " +
                                  p.name);
    const bool masked = !p.mask.empty();
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      if (masked && !p.mask[static_cast<std::size_t>(i)]) {
        v[i] = T{0};
        p.value[i] = T{0};
        continue;
      }
      const T g = p.grad[i] + wd * p.value[i];
      v[i] = mu * v[i] + g;
      p.value[i] -= lr_t * v[i];
    }
  }
  state.step += 1;
  state.lr = lr;
}

// Schedules ------------------------------------------------------------------

double lr_multistep(double lr0, const std::vector<int>& milestones,
                    double decay, int epoch) {
  double lr = lr0;
  for (int m : milestones)
    if (epoch >= m) lr *= decay;
  return lr;
}

double lr_cyclic(double max_lr, std::int64_t iter, std::int64_t total_iters) {
  if (total_iters < 1) throw std::invalid_argument("lr_cyclic: empty schedule");
  const double half = static_cast<double>(total_iters) / 2.0;
  const double i = static_cast<double>(std::clamp<std::int64_t>(iter, 0,
                                                                total_iters));
  return i <= half ? max_lr * (i / half)
                   : max_lr * ((static_cast<double>(total_iters) - i) / half);
}

// Epoch loop -----------------------------------------------------------------

namespace {

// Per-prunable-layer densities of the masks currently installed in the net.
template <typename T>
std::vector<double> installed_densities(const Network<T>& net) {
  std::vector<double> d;
  for (const auto& p : net.params) {
    if (!p.prunable) continue;
    d.push_back(static_cast<double>(p.active_count()) /
                static_cast<double>(p.value.numel()));
  }
  return d;
}

std::int64_t count_correct(const std::vector<std::int32_t>& pred,
                           const std::vector<std::int32_t>& labels) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++n;
  return n;
}

}  // namespace

template <typename T>
EpochStats train_epoch(Network<T>& net, OptimizerStateT<T>& opt,
                       const Dataset& train, const TrainConfig& cfg,
                       bool adversarial, const AttackConfig& attack,
                       int epoch,
                       const std::function<double(std::int64_t)>& lr_of_iter,
                       std::int64_t& global_iter,
                       const IterationHooks& hooks) {
  validate(cfg);
  validate(train);
  const std::int64_t n = train.count();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  RandomStream order_rng(derive_seed(cfg.seed, "batch-order",
                                     static_cast<std::uint64_t>(epoch)));
  order_rng.shuffle(order);
  RandomStream aug_rng(derive_seed(cfg.seed, "augment",
                                   static_cast<std::uint64_t>(epoch)));

  const double dense_flops = forward_flops_dense(net.spec);
  EpochStats stats;
  TensorT<T> x;
  std::vector<std::int32_t> labels;
  Tape<T> tape;
  std::int64_t seen = 0, correct = 0;
  double loss_sum = 0.0;

  for (std::int64_t begin = 0, batch_index = 0; begin < n;
       begin += cfg.batch_size, ++batch_index) {
    const std::int64_t end = std::min<std::int64_t>(begin + cfg.batch_size, n);
    const std::int64_t rows = end - begin;
    fill_batch(train, order, static_cast<std::size_t>(begin),
               static_cast<std::size_t>(end), cfg.augment, aug_rng, x, labels);

    const auto densities = installed_densities(net);
    const double sparse_flops = forward_flops_sparse(net.spec, densities);
    const double f_sparse = sparse_flops * static_cast<double>(rows);
    const double f_dense = dense_flops * static_cast<double>(rows);

    if (adversarial) {
      const auto delta =
          pgd_attack(net, x, labels, attack,
                     derive_seed(cfg.seed, "attack-train",
                                 static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(batch_index)));
      for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += delta[i];
      stats.flops += 3.0 * f_sparse * attack.steps;
    }

    const bool dense_grads =
        hooks.wants_dense_grads && hooks.wants_dense_grads(global_iter);
    forward_pass(net, x, Mode::train, tape);
    correct += count_correct(argmax_rows(tape.logits()), labels);
    seen += rows;
    TensorT<T> dlogits;
    loss_sum +=
        loss_softmax_ce(tape.logits(), labels, &dlogits) *
        static_cast<double>(rows);
    zero_grads(net);
    backward_pass(net, tape, dlogits,
                  dense_grads ? GradMode::dense : GradMode::masked);
    stats.flops += f_sparse + 2.0 * (dense_grads ? f_dense : f_sparse);

    sgd_step(net, opt, lr_of_iter(global_iter), cfg.momentum,
             cfg.weight_decay);
    if (hooks.after_step) hooks.after_step(global_iter);
    ++global_iter;
    ++stats.iterations;
  }
  stats.loss = loss_sum / static_cast<double>(seen);
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return stats;
}

// Early-ticket search ----------------------------------------------------------

int rb_draw_epoch(const std::vector<double>& distances, int queue_len,
                  double tau) {
  if (queue_len < 2) throw std::invalid_argument("rb_draw_epoch: queue_len < 2");
  for (std::size_t e = static_cast<std::size_t>(queue_len);
       e <= distances.size(); ++e) {
    double window_max = 0.0;
    for (std::size_t i = e - static_cast<std::size_t>(queue_len); i < e; ++i)
      window_max = std::max(window_max, distances[i]);
    if (window_max < tau) return static_cast<int>(e);
  }
  return -1;
}

template <typename T>
RBResult find_robust_bird(Network<T>& net, const Dataset& train,
                          const RBConfig& rb, const TrainConfig& cfg) {
  validate(rb);
  validate(cfg);
  // Snapshot the untrained state for the rewind.
  std::vector<TensorT<T>> theta0;
  theta0.reserve(net.params.size());
  for (const auto& p : net.params) theta0.push_back(p.value);
  const auto bn0 = net.bn;

  auto opt = make_optimizer_state(net);
  const std::int64_t iters_per_epoch =
      (train.count() + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_iters =
      iters_per_epoch * static_cast<std::int64_t>(rb.max_epochs);

  bool adversarial = true;
  AttackConfig attack = cfg.train_attack;
  std::function<double(std::int64_t)> lr_of_iter;
  switch (rb.regime) {
    case RBRegime::standard_sgd:
      adversarial = false;
      lr_of_iter = [&cfg, iters_per_epoch](std::int64_t it) {
        return lr_multistep(cfg.lr0, cfg.milestones, cfg.lr_decay,
                            static_cast<int>(it / iters_per_epoch));
      };
      break;
    case RBRegime::pgd_at:
      lr_of_iter = [&cfg, iters_per_epoch](std::int64_t it) {
        return lr_multistep(cfg.lr0, cfg.milestones, cfg.lr_decay,
                            static_cast<int>(it / iters_per_epoch));
      };
      break;
    case RBRegime::fast_at:
      attack.alpha = 1.25 * attack.epsilon;
      attack.steps = 1;
      attack.random_start = true;
      lr_of_iter = [&cfg, total_iters](std::int64_t it) {
        return lr_cyclic(cfg.cyclic_max_lr, it, total_iters);
      };
      break;
  }
  // A zero-budget attack cannot drive signed steps; degrade to standard
  // training rather than failing the alpha>0 invariant.
  if (adversarial && attack.epsilon == 0.0) adversarial = false;

  RBResult result;
  MaskSet prev = global_magnitude_mask(net, rb.sparsity);
  std::int64_t global_iter = 0;
  for (int e = 0; e < rb.max_epochs; ++e) {
    const auto stats = train_epoch(net, opt, train, cfg, adversarial, attack,
                                   e, lr_of_iter, global_iter);
    result.search_flops += stats.flops;
    MaskSet m = global_magnitude_mask(net, rb.sparsity);
    result.distances.push_back(mask_distance(m, prev));
    prev = std::move(m);
    const int drawn =
        rb_draw_epoch(result.distances, rb.queue_len, rb.tau);
    if (drawn == e + 1) {
      result.converged = true;
      result.epochs_trained = e + 1;
      break;
    }
  }
  if (!result.converged) result.epochs_trained = rb.max_epochs;
  result.mask = std::move(prev);

  // Rewind to the untrained snapshot and install the drawn mask.
  for (std::size_t i = 0; i < net.params.size(); ++i)
    net.params[i].value = theta0[i];
  net.bn = bn0;
  install_masks(net, result.mask);
  return result;
}

// Dynamic prune/grow -----------------------------------------------------------

double cosine_update_ratio(double k0, std::int64_t t, std::int64_t total) {
  if (total < 1) throw std::invalid_argument("cosine_update_ratio: total < 1");
  if (t < 0 || t > total)
    throw std::invalid_argument("cosine_update_ratio: t outside [0, total]");
  return (k0 / 2.0) *
         (1.0 + std::cos(kPi * static_cast<double>(t) /
                         static_cast<double>(total)));
}

double increasing_frequency(const std::deque<double>& window) {
  if (window.size() < 2) return 0.0;
  std::size_t rising = 0;
  for (std::size_t i = 1; i < window.size(); ++i)
    if (window[i] > window[i - 1]) ++rising;
  return static_cast<double>(rising) / static_cast<double>(window.size() - 1);
}

FBBoost fb_plus_adapt(const std::deque<double>& q_p,
                      const std::deque<double>& q_g, int epochs_completed,
                      const FBConfig& cfg) {
  FBBoost boost;
  if (epochs_completed <= cfg.t_start) return boost;
  if (q_p.size() >= static_cast<std::size_t>(cfg.queue_len) &&
      increasing_frequency(q_p) >= cfg.freq_threshold)
    boost.p_factor = 1.0 + cfg.prune_boost;
  if (q_g.size() >= static_cast<std::size_t>(cfg.queue_len) &&
      increasing_frequency(q_g) >= cfg.freq_threshold)
    boost.g_factor = 1.0 + cfg.grow_boost;
  return boost;
}

template <typename T>
void fb_topology_update(Network<T>& net, OptimizerStateT<T>& opt,
                        MaskSet& masks, double p, double g) {
  if (!(p >= 0.0) || p > 1.0 || !(g >= 0.0) || g > 1.0)
    throw std::invalid_argument("fb_topology_update: ratios outside [0,1]");
  const std::size_t n_layers = masks.layers.size();
  std::vector<std::int64_t> prune_counts(n_layers), grow_counts(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::int64_t active = masks.layers[l].active();
    const std::int64_t inactive = masks.layers[l].size() - active;
    std::int64_t prune_n = std::llround(p * static_cast<double>(active));
    std::int64_t grow_n = std::llround(g * static_cast<double>(active));
    if (grow_n > inactive) {
      // The layer cannot host this many new positions (grown candidates are
      // disjoint from this update's prunes). Shrink both counts by the same
      // excess so the intended active-count change is preserved.
      const std::int64_t excess = grow_n - inactive;
      grow_n = inactive;
      prune_n = std::max<std::int64_t>(0, prune_n - excess);
    }
    prune_counts[l] = prune_n;
    grow_counts[l] = grow_n;
  }

  const MaskSet before = masks;  // grow candidates exclude this step's prunes
  prune_lowest_magnitude(masks, net, prune_counts);
  const auto grown = select_grow_positions(before, net, grow_counts);

  std::vector<std::size_t> prunable_index;
  for (std::size_t pi = 0; pi < net.params.size(); ++pi)
    if (net.params[pi].prunable) prunable_index.push_back(pi);
  if (prunable_index.size() != n_layers)
    throw std::invalid_argument("fb_topology_update: mask/layer mismatch");

  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& param = net.params[prunable_index[l]];
    auto& vel = opt.velocity[prunable_index[l]];
    for (std::int64_t idx : grown[l]) {
      masks.layers[l].on[static_cast<std::size_t>(idx)] = 1;
      param.value[idx] = T{0};  // grown weights start from exactly zero
      vel[idx] = T{0};
    }
  }
  install_masks(net, masks);
  // Pruned (now-masked) positions must not carry stale momentum.
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& vel = opt.velocity[prunable_index[l]];
    const auto& bits = masks.layers[l].on;
    for (std::int64_t i = 0; i < vel.numel(); ++i)
      if (!bits[static_cast<std::size_t>(i)]) vel[i] = T{0};
  }
}

template <typename T>
double FlyingBird<T>::ratio_at(std::int64_t iter) const {
  const std::int64_t t = std::min(iter + 1, total_iters);
  return cosine_update_ratio(cfg.k0, t, total_iters);
}

template <typename T>
void FlyingBird<T>::apply_update(Network<T>& net, OptimizerStateT<T>& opt,
                                 std::int64_t iter) {
  const double k = ratio_at(iter);
  const double p = (boost_p ? 1.0 + cfg.prune_boost : 1.0) * k;
  const double g = (boost_g ? 1.0 + cfg.grow_boost : 1.0) * k;
  fb_topology_update(net, opt, masks, p, g);
  ++updates;
}

template <typename T>
void FlyingBird<T>::end_epoch(double robust_gap, double val_robust_loss,
                              int epochs_completed) {
  if (!cfg.adaptive) return;
  q_p.push_back(robust_gap);
  q_g.push_back(val_robust_loss);
  while (q_p.size() > static_cast<std::size_t>(cfg.queue_len)) q_p.pop_front();
  while (q_g.size() > static_cast<std::size_t>(cfg.queue_len)) q_g.pop_front();
  const FBBoost boost = fb_plus_adapt(q_p, q_g, epochs_completed, cfg);
  boost_p = boost.p_factor > 1.0;
  boost_g = boost.g_factor > 1.0;
}

// Explicit instantiations -----------------------------------------------------

#define SPARW_INSTANTIATE(T)                                                   \
  template OptimizerStateT<T> make_optimizer_state<T>(const Network<T>&);      \
  template void sgd_step<T>(Network<T>&, OptimizerStateT<T>&, double, double,  \
                            double);                                           \
  template EpochStats train_epoch<T>(                                          \
      Network<T>&, OptimizerStateT<T>&, const Dataset&, const TrainConfig&,    \
      bool, const AttackConfig&, int,                                          \
      const std::function<double(std::int64_t)>&, std::int64_t&,               \
      const IterationHooks&);                                                  \
  template RBResult find_robust_bird<T>(Network<T>&, const Dataset&,           \
                                        const RBConfig&, const TrainConfig&);  \
  template void fb_topology_update<T>(Network<T>&, OptimizerStateT<T>&,        \
                                      MaskSet&, double, double);               \
  template struct FlyingBird<T>;

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
