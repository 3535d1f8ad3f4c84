// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// L-infinity adversarial example generation: iterated projected signed
// gradient ascent (PGD) and its single-step random-start variant (FGSM-RS).

#pragma once

#include <cstdint>
#include <vector>

#include "sparw/autodiff.hpp"
#include "sparw/tensor.hpp"

namespace sparw {

// Attack hyper-parameters, all in un-normalized [0,1] input units. Any input
// normalization must be folded into the model so the budget stays meaningful.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // L-inf budget (>= 0)
  double alpha = 2.0 / 255.0;    // step size (> 0)
  int steps = 10;                // iteration count (>= 1)
  bool random_start = true;      // delta0 ~ Uniform(-eps, eps) per element
};

// Throws std::invalid_argument on out-of-range fields.
void validate(const AttackConfig& cfg);

// Runs cfg.steps iterations of
//   delta <- project[ delta + alpha * sign(grad_x loss(f(x+delta), y)) ]
// where project clamps into [-eps, eps] and then into [-x, 1-x] so that
// x + delta always lies in [0,1]. sign(0) is 0. Forward passes run in eval
// mode (batch-norm frozen); parameter gradients are not touched. Returns the
// perturbation delta. Deterministic given (parameters, x, labels, cfg, seed);
// the random start consumes one uniform draw per element in row-major order.
// Throws std::runtime_error on a non-finite input gradient.
template <typename T>
TensorT<T> pgd_attack(Network<T>& net, const TensorT<T>& x,
                      const std::vector<std::int32_t>& labels,
                      const AttackConfig& cfg, std::uint64_t seed);

// Single signed-gradient step of size alpha from a mandatory random start,
// projected exactly as in pgd_attack. alpha = 1.25 * epsilon is the
// conventional choice for fast adversarial training.
template <typename T>
TensorT<T> fgsm_rs_attack(Network<T>& net, const TensorT<T>& x,
                          const std::vector<std::int32_t>& labels,
                          double epsilon, double alpha, std::uint64_t seed);

}  // namespace sparw
