// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse-mask machinery: per-layer density allocation, mask sampling,
// magnitude pruning, gradient-based growth and mask bookkeeping. All
// selection kernels share one tie-break rule so results are reproducible:
// candidates of equal score are ordered by (layer index, element index)
// ascending. "Layer" here always means one prunable weight tensor; the
// order is the network's prunable-parameter enumeration order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparw/autodiff.hpp"
#include "sparw/model.hpp"

namespace sparw {

// One mask per prunable weight tensor, in enumeration order.
struct Mask {
  std::vector<std::uint8_t> on;
  std::int64_t active() const {
    std::int64_t n = 0;
    for (auto b : on) n += b ? 1 : 0;
    return n;
  }
  std::int64_t size() const { return static_cast<std::int64_t>(on.size()); }
};

struct MaskSet {
  std::vector<Mask> layers;
  std::int64_t total() const;
  std::int64_t active() const;
};

// Global sparsity of a mask set: 1 - active / total. Errors on empty sets.
double sparsity_of(const MaskSet& masks);

// Per-layer densities (active / size) of a mask set.
std::vector<double> layer_densities(const MaskSet& masks);

// Normalized Hamming distance between two mask sets of identical shape:
// (# positions whose bit differs) / total positions. Throws on shape
// mismatch. Symmetric; zero iff identical; obeys the triangle inequality.
double mask_distance(const MaskSet& a, const MaskSet& b);

// Sizes of the prunable weight tensors of a spec, enumeration order.
struct PrunableLayerInfo {
  std::string name;
  Shape shape;         // weight tensor shape
  std::int64_t numel = 0;
  bool is_conv = false;
};
std::vector<PrunableLayerInfo> prunable_layers(const ModelSpec& spec);

// Density allocation --------------------------------------------------------

// Per-layer densities in (0, 1]; continuous (rounding happens at sampling).
struct AllocationPlan {
  std::vector<double> density;
  // Kept parameter budget the plan was solved for.
  double budget = 0.0;
};

// Same density 1 - sparsity everywhere.
AllocationPlan allocate_uniform(const std::vector<PrunableLayerInfo>& layers,
                                double sparsity);

// Erdos-Renyi-kernel scaling: density_l proportional to
//   (n_in + n_out) / (n_in * n_out)                      for linear layers,
//   (c_in + c_out + k_h + k_w) / (c_in * c_out * k_h * k_w) for conv layers,
// scaled by a common factor solved (bisection) so the global kept-parameter
// budget matches 1 - sparsity; layers that saturate at density 1 are frozen
// and the remainder re-solved.
AllocationPlan allocate_erk(const std::vector<PrunableLayerInfo>& layers,
                            double sparsity);

// Inverse-size quota: density_l = lambda / (lambda + n_l) with lambda solved
// by bisection to meet the global budget. Larger layers get strictly
// smaller densities.
AllocationPlan allocate_igq(const std::vector<PrunableLayerInfo>& layers,
                            double sparsity);

// Connection-saliency allocation: one dense forward/backward on a
// calibration batch, saliency |g * w|, keep the global top (1 - sparsity)
// fraction. Returns the mask directly (the plan is implied by the mask).
template <typename T>
MaskSet allocate_snip(Network<T>& net, const TensorT<T>& x,
                      const std::vector<std::int32_t>& labels, double sparsity);

// Mask construction ---------------------------------------------------------

// Samples a mask with exactly round(density_l * n_l) active elements per
// layer, uniformly without replacement. Deterministic in the seed.
MaskSet sample_random_mask(const AllocationPlan& plan,
                           const std::vector<PrunableLayerInfo>& layers,
                           std::uint64_t seed);

// Global magnitude mask: keeps the round((1 - sparsity) * N) largest
// weights by |w| across all prunable tensors; ties resolved by
// (layer, element) ascending.
template <typename T>
MaskSet global_magnitude_mask(const Network<T>& net, double sparsity);

// Prune / grow ---------------------------------------------------------------

// Deactivates count_l active positions of smallest |w| per layer (ties by
// element index ascending). Throws if a count exceeds the active count.
template <typename T>
void prune_lowest_magnitude(MaskSet& masks, const Network<T>& net,
                            const std::vector<std::int64_t>& counts);

// Positions (per layer) of the count_l inactive elements with largest
// |gradient| (ties by element index ascending), judged against `candidates`
// (the mask whose inactive set is eligible). Throws if a count exceeds the
// inactive count.
template <typename T>
std::vector<std::vector<std::int64_t>> select_grow_positions(
    const MaskSet& candidates, const Network<T>& net,
    const std::vector<std::int64_t>& counts);

// Activates the count_l currently-inactive positions of largest dense
// |gradient| per layer, in place. Grown weights are set to exactly zero.
template <typename T>
void grow_largest_gradient(MaskSet& masks, Network<T>& net,
                           const std::vector<std::int64_t>& counts);

// Mask/network plumbing ------------------------------------------------------

// Copies the mask set onto the network's prunable parameters and zeroes
// masked-out weights. Throws on shape mismatch.
template <typename T>
void install_masks(Network<T>& net, const MaskSet& masks);

// Extracts the current masks (dense parameters yield all-ones masks).
template <typename T>
MaskSet extract_masks(const Network<T>& net);

}  // namespace sparw
