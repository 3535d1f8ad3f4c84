// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sparw/rng.hpp"

namespace sparw {

std::int64_t MaskSet::total() const {
  std::int64_t n = 0;
  for (const auto& m : layers) n += m.size();
  return n;
}

std::int64_t MaskSet::active() const {
  std::int64_t n = 0;
  for (const auto& m : layers) n += m.active();
  return n;
}

double sparsity_of(const MaskSet& masks) {
  const std::int64_t total = masks.total();
  if (total == 0)
    throw std::invalid_argument("sparsity_of: empty mask set");
  return 1.0 - static_cast<double>(masks.active()) / static_cast<double>(total);
}

std::vector<double> layer_densities(const MaskSet& masks) {
  std::vector<double> d;
  d.reserve(masks.layers.size());
  for (const auto& m : masks.layers) {
    if (m.size() == 0)
      throw std::invalid_argument("layer_densities: empty layer mask");
    d.push_back(static_cast<double>(m.active()) /
                static_cast<double>(m.size()));
  }
  return d;
}

double mask_distance(const MaskSet& a, const MaskSet& b) {
  if (a.layers.size() != b.layers.size())
    throw std::invalid_argument("mask_distance: layer count mismatch");
  std::int64_t total = 0, diff = 0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& ma = a.layers[l].on;
    const auto& mb = b.layers[l].on;
    if (ma.size() != mb.size())
      throw std::invalid_argument("mask_distance: layer size mismatch");
    total += static_cast<std::int64_t>(ma.size());
    for (std::size_t i = 0; i < ma.size(); ++i)
      diff += (ma[i] ? 1 : 0) != (mb[i] ? 1 : 0) ? 1 : 0;
  }
  if (total == 0) throw std::invalid_argument("mask_distance: empty mask set");
  return static_cast<double>(diff) / static_cast<double>(total);
}

std::vector<PrunableLayerInfo> prunable_layers(const ModelSpec& spec) {
  std::vector<PrunableLayerInfo> out;
  for (const auto& p : enumerate_params(spec)) {
    if (!p.prunable) continue;
    PrunableLayerInfo info;
    info.name = p.name;
    info.shape = p.shape;
    info.numel = shape_numel(p.shape);
    info.is_conv = p.shape.size() == 4;
    out.push_back(std::move(info));
  }
  return out;
}

// Allocation ---------------------------------------------------------------

namespace {

void check_sparsity_arg(double sparsity) {
  if (!(sparsity >= 0.0) || !(sparsity < 1.0))
    throw std::invalid_argument("allocator: sparsity must be in [0, 1)");
}

std::int64_t total_numel(const std::vector<PrunableLayerInfo>& layers) {
  if (layers.empty())
    throw std::invalid_argument("allocator: no prunable layers");
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.numel;
  return n;
}

}  // namespace

AllocationPlan allocate_uniform(const std::vector<PrunableLayerInfo>& layers,
                                double sparsity) {
  check_sparsity_arg(sparsity);
  AllocationPlan plan;
  plan.budget = (1.0 - sparsity) * static_cast<double>(total_numel(layers));
  plan.density.assign(layers.size(), 1.0 - sparsity);
  return plan;
}

AllocationPlan allocate_erk(const std::vector<PrunableLayerInfo>& layers,
                            double sparsity) {
  check_sparsity_arg(sparsity);
  const double budget =
      (1.0 - sparsity) * static_cast<double>(total_numel(layers));

  std::vector<double> score(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    double num = 0.0, den = 1.0;
    for (std::int64_t dim : layers[l].shape) {
      num += static_cast<double>(dim);
      den *= static_cast<double>(dim);
    }
    score[l] = num / den;
  }

  AllocationPlan plan;
  plan.budget = budget;
  plan.density.assign(layers.size(), 0.0);
  std::vector<bool> frozen(layers.size(), false);
  for (;;) {
    double remaining = budget;
    double mass = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (frozen[l])
        remaining -= static_cast<double>(layers[l].numel);
      else
        mass += score[l] * static_cast<double>(layers[l].numel);
    }
    if (remaining <= 0.0) {
      // Budget exhausted by frozen layers; everything else gets zero. Can
      // only happen at extreme sparsity; keep densities tiny but nonzero so
      // sampling still rounds sensibly.
      for (std::size_t l = 0; l < layers.size(); ++l)
        if (!frozen[l]) plan.density[l] = 0.0;
      break;
    }
    const double c = remaining / mass;
    bool newly_frozen = false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (frozen[l]) continue;
      if (c * score[l] >= 1.0) {
        frozen[l] = true;
        plan.density[l] = 1.0;
        newly_frozen = true;
      }
    }
    if (newly_frozen) continue;
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (!frozen[l]) plan.density[l] = c * score[l];
    break;
  }
  return plan;
}

AllocationPlan allocate_igq(const std::vector<PrunableLayerInfo>& layers,
                            double sparsity) {
  check_sparsity_arg(sparsity);
  const double total = static_cast<double>(total_numel(layers));
  const double budget = (1.0 - sparsity) * total;

  AllocationPlan plan;
  plan.budget = budget;
  if (sparsity == 0.0) {
    plan.density.assign(layers.size(), 1.0);
    return plan;
  }
  auto kept_at = [&](double lambda) {
    double kept = 0.0;
    for (const auto& l : layers) {
      const double n = static_cast<double>(l.numel);
      kept += lambda / (lambda + n) * n;
    }
    return kept;
  };
  double lo = 0.0, hi = 1.0;
  while (kept_at(hi) < budget) {
    hi *= 2.0;
    if (hi > 1e18)
      throw std::runtime_error("allocate_igq: bisection failed to bracket");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (kept_at(mid) < budget)
      lo = mid;
    else
      hi = mid;
  }
  const double lambda = 0.5 * (lo + hi);
  plan.density.reserve(layers.size());
  for (const auto& l : layers)
    plan.density.push_back(lambda /
                           (lambda + static_cast<double>(l.numel)));
  return plan;
}

// Selection helpers -----------------------------------------------------------

namespace {

struct ScoredPos {
  double score;
  std::int32_t layer;
  std::int64_t index;
};

// Descending score; ties by (layer, index) ascending.
bool better_desc(const ScoredPos& a, const ScoredPos& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

// Ascending score; ties by (layer, index) ascending.
bool better_asc(const ScoredPos& a, const ScoredPos& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

template <typename T>
std::vector<const Parameter<T>*> prunable_params(const Network<T>& net) {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : net.params)
    if (p.prunable) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> prunable_params(Network<T>& net) {
  std::vector<Parameter<T>*> out;
  for (auto& p : net.params)
    if (p.prunable) out.push_back(&p);
  return out;
}

void check_mask_alignment(const MaskSet& masks, std::size_t n_layers) {
  if (masks.layers.size() != n_layers)
    throw std::invalid_argument(
        "mask set has " + std::to_string(masks.layers.size()) +
        " layers, network has " + std::to_string(n_layers) + " prunable");
}

}  // namespace

template <typename T>
MaskSet allocate_snip(Network<T>& net, const TensorT<T>& x,
                      const std::vector<std::int32_t>& labels,
                      double sparsity) {
  check_sparsity_arg(sparsity);
  // Scoring pass only: keep running batch-norm statistics untouched.
  const auto bn_snapshot = net.bn;
  forward_backward(net, x, labels, Mode::train, GradMode::dense);
  net.bn = bn_snapshot;

  const auto params = prunable_params(net);
  std::vector<ScoredPos> scored;
  std::int64_t total = 0;
  for (std::size_t l = 0; l < params.size(); ++l) total += params[l]->value.numel();
  scored.reserve(static_cast<std::size_t>(total));
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto& p = *params[l];
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      scored.push_back({std::abs(static_cast<double>(p.grad[i]) *
                                 static_cast<double>(p.value[i])),
                        static_cast<std::int32_t>(l), i});
  }
  const std::int64_t keep =
      std::llround((1.0 - sparsity) * static_cast<double>(total));
  std::sort(scored.begin(), scored.end(), better_desc);

  MaskSet masks;
  masks.layers.resize(params.size());
  for (std::size_t l = 0; l < params.size(); ++l)
    masks.layers[l].on.assign(
        static_cast<std::size_t>(params[l]->value.numel()), 0);
  for (std::int64_t i = 0; i < keep; ++i)
    masks.layers[static_cast<std::size_t>(scored[i].layer)]
        .on[static_cast<std::size_t>(scored[i].index)] = 1;
  return masks;
}

MaskSet sample_random_mask(const AllocationPlan& plan,
                           const std::vector<PrunableLayerInfo>& layers,
                           std::uint64_t seed) {
  if (plan.density.size() != layers.size())
    throw std::invalid_argument("sample_random_mask: plan/layer count mismatch");
  MaskSet masks;
  masks.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::int64_t n = layers[l].numel;
    const double density = plan.density[l];
    if (!(density >= 0.0) || density > 1.0)
      throw std::invalid_argument("sample_random_mask: density outside [0,1]");
    std::int64_t keep = std::llround(density * static_cast<double>(n));
    keep = std::clamp<std::int64_t>(keep, 0, n);
    auto& bits = masks.layers[l].on;
    bits.assign(static_cast<std::size_t>(n), 0);
    RandomStream rng(derive_seed(seed, "mask-sample", l));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < keep; ++i) {
      const std::int64_t j =
          i + static_cast<std::int64_t>(
                  rng.uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
      bits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    }
  }
  return masks;
}

template <typename T>
MaskSet global_magnitude_mask(const Network<T>& net, double sparsity) {
  check_sparsity_arg(sparsity);
  const auto params = prunable_params(net);
  if (params.empty())
    throw std::invalid_argument("global_magnitude_mask: no prunable params");
  std::int64_t total = 0;
  for (const auto* p : params) total += p->value.numel();
  std::vector<ScoredPos> scored;
  scored.reserve(static_cast<std::size_t>(total));
  for (std::size_t l = 0; l < params.size(); ++l)
    for (std::int64_t i = 0; i < params[l]->value.numel(); ++i)
      scored.push_back({std::abs(static_cast<double>(params[l]->value[i])),
                        static_cast<std::int32_t>(l), i});
  const std::int64_t keep =
      std::llround((1.0 - sparsity) * static_cast<double>(total));
  std::sort(scored.begin(), scored.end(), better_desc);

  MaskSet masks;
  masks.layers.resize(params.size());
  for (std::size_t l = 0; l < params.size(); ++l)
    masks.layers[l].on.assign(
        static_cast<std::size_t>(params[l]->value.numel()), 0);
  for (std::int64_t i = 0; i < keep; ++i)
    masks.layers[static_cast<std::size_t>(scored[i].layer)]
        .on[static_cast<std::size_t>(scored[i].index)] = 1;
  return masks;
}

template <typename T>
void prune_lowest_magnitude(MaskSet& masks, const Network<T>& net,
                            const std::vector<std::int64_t>& counts) {
  const auto params = prunable_params(net);
  check_mask_alignment(masks, params.size());
  if (counts.size() != params.size())
    throw std::invalid_argument("prune: counts/layer mismatch");
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto& bits = masks.layers[l].on;
    std::vector<ScoredPos> active;
    for (std::int64_t i = 0; i < params[l]->value.numel(); ++i)
      if (bits[static_cast<std::size_t>(i)])
        active.push_back({std::abs(static_cast<double>(params[l]->value[i])),
                          static_cast<std::int32_t>(l), i});
    if (counts[l] < 0 ||
        counts[l] > static_cast<std::int64_t>(active.size()))
      throw std::invalid_argument(
          "prune: count " + std::to_string(counts[l]) + " exceeds " +
          std::to_string(active.size()) + " active in " +
          params[l]->name);
    std::sort(active.begin(), active.end(), better_asc);
    for (std::int64_t i = 0; i < counts[l]; ++i)
      bits[static_cast<std::size_t>(active[static_cast<std::size_t>(i)].index)] =
          0;
  }
}

template <typename T>
std::vector<std::vector<std::int64_t>> select_grow_positions(
    const MaskSet& candidates, const Network<T>& net,
    const std::vector<std::int64_t>& counts) {
  const auto params = prunable_params(net);
  check_mask_alignment(candidates, params.size());
  if (counts.size() != params.size())
    throw std::invalid_argument("grow: counts/layer mismatch");
  std::vector<std::vector<std::int64_t>> grown(params.size());
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto& bits = candidates.layers[l].on;
    std::vector<ScoredPos> inactive;
    for (std::int64_t i = 0; i < params[l]->grad.numel(); ++i)
      if (!bits[static_cast<std::size_t>(i)])
        inactive.push_back({std::abs(static_cast<double>(params[l]->grad[i])),
                            static_cast<std::int32_t>(l), i});
    if (counts[l] < 0 ||
        counts[l] > static_cast<std::int64_t>(inactive.size()))
      throw std::invalid_argument(
          "grow: count " + std::to_string(counts[l]) + " exceeds " +
          std::to_string(inactive.size()) + " inactive in " +
          params[l]->name);
    std::sort(inactive.begin(), inactive.end(), better_desc);
    grown[l].reserve(static_cast<std::size_t>(counts[l]));
    for (std::int64_t i = 0; i < counts[l]; ++i)
      grown[l].push_back(inactive[static_cast<std::size_t>(i)].index);
  }
  return grown;
}

template <typename T>
void grow_largest_gradient(MaskSet& masks, Network<T>& net,
                           const std::vector<std::int64_t>& counts) {
  const auto positions = select_grow_positions(masks, net, counts);
  auto params = prunable_params(net);
  for (std::size_t l = 0; l < positions.size(); ++l) {
    for (std::int64_t idx : positions[l]) {
      masks.layers[l].on[static_cast<std::size_t>(idx)] = 1;
      params[l]->value[idx] = T{0};  // grown weights start at exactly zero
    }
  }
}

template <typename T>
void install_masks(Network<T>& net, const MaskSet& masks) {
  auto params = prunable_params(net);
  check_mask_alignment(masks, params.size());
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (masks.layers[l].size() != params[l]->value.numel())
      throw std::invalid_argument("install_masks: size mismatch on " +
                                  params[l]->name);
    params[l]->mask = masks.layers[l].on;
  }
  apply_masks(net);
}

template <typename T>
MaskSet extract_masks(const Network<T>& net) {
  MaskSet masks;
  for (const auto& p : net.params) {
    if (!p.prunable) continue;
    Mask m;
    if (p.mask.empty())
      m.on.assign(static_cast<std::size_t>(p.value.numel()), 1);
    else
      m.on = p.mask;
    masks.layers.push_back(std::move(m));
  }
  return masks;
}

// Explicit instantiations -----------------------------------------------------

#define SPARW_INSTANTIATE(T)                                                    \
  template MaskSet allocate_snip<T>(Network<T>&, const TensorT<T>&,             \
                                    const std::vector<std::int32_t>&, double);  \
  template MaskSet global_magnitude_mask<T>(const Network<T>&, double);         \
  template void prune_lowest_magnitude<T>(MaskSet&, const Network<T>&,          \
                                          const std::vector<std::int64_t>&);    \
  template std::vector<std::vector<std::int64_t>> select_grow_positions<T>(     \
      const MaskSet&, const Network<T>&, const std::vector<std::int64_t>&);     \
  template void grow_largest_gradient<T>(MaskSet&, Network<T>&,                 \
                                         const std::vector<std::int64_t>&);     \
  template void install_masks<T>(Network<T>&, const MaskSet&);                  \
  template MaskSet extract_masks<T>(const Network<T>&);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
