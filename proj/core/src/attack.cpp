// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/attack.hpp"

#include <stdexcept>

#include "sparw/rng.hpp"

namespace sparw {

void validate(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0))
    throw std::invalid_argument("attack: epsilon must be >= 0");
  if (!(cfg.alpha > 0.0))
    throw std::invalid_argument("attack: alpha must be > 0");
  if (cfg.steps < 1)
    throw std::invalid_argument("attack: steps must be >= 1");
}

namespace {

// Clamp delta into the eps-box intersected with the valid-range box, so that
// |delta| <= eps exactly and x + delta is in [0,1] elementwise.
template <typename T>
void project(TensorT<T>& delta, const TensorT<T>& x, double epsilon) {
  const T eps = static_cast<T>(epsilon);
  const T one = T{1};
  for (std::int64_t i = 0; i < delta.numel(); ++i) {
    T d = delta[i];
    if (d > eps) d = eps;
    if (d < -eps) d = -eps;
    const T lo = -x[i];
    const T hi = one - x[i];
    if (d < lo) d = lo;
    if (d > hi) d = hi;
    delta[i] = d;
  }
}

}  // namespace

template <typename T>
TensorT<T> pgd_attack(Network<T>& net, const TensorT<T>& x,
                      const std::vector<std::int32_t>& labels,
                      const AttackConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  TensorT<T> delta(x.shape());
  if (cfg.random_start && cfg.epsilon > 0.0) {
    RandomStream rng(seed);
    for (std::int64_t i = 0; i < delta.numel(); ++i)
      delta[i] = static_cast<T>(rng.uniform(-cfg.epsilon, cfg.epsilon));
    project(delta, x, cfg.epsilon);
  }

  TensorT<T> x_adv(x.shape());
  TensorT<T> input_grad;
  Tape<T> tape;
  const T alpha = static_cast<T>(cfg.alpha);
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::int64_t i = 0; i < x.numel(); ++i) x_adv[i] = x[i] + delta[i];
    forward_pass(net, x_adv, Mode::eval, tape);
    TensorT<T> dlogits;
    loss_softmax_ce(tape.logits(), labels, &dlogits);
    backward_pass(net, tape, dlogits, GradMode::masked, &input_grad,
                  /*with_param_grads=*/false);
    if (!all_finite(input_grad))
      throw std::runtime_error("pgd_attack: non-finite input gradient");
    for (std::int64_t i = 0; i < delta.numel(); ++i) {
      const T g = input_grad[i];
      if (g > T{0})
        delta[i] += alpha;
      else if (g < T{0})
        delta[i] -= alpha;
      // sign(0) = 0: no movement
    }
    project(delta, x, cfg.epsilon);
  }
  return delta;
}

template <typename T>
TensorT<T> fgsm_rs_attack(Network<T>& net, const TensorT<T>& x,
                          const std::vector<std::int32_t>& labels,
                          double epsilon, double alpha, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = alpha;
  cfg.steps = 1;
  cfg.random_start = true;
  return pgd_attack(net, x, labels, cfg, seed);
}

#define SPARW_INSTANTIATE(T)                                              \
  template TensorT<T> pgd_attack<T>(Network<T>&, const TensorT<T>&,       \
                                    const std::vector<std::int32_t>&,     \
                                    const AttackConfig&, std::uint64_t);  \
  template TensorT<T> fgsm_rs_attack<T>(Network<T>&, const TensorT<T>&,  \
                                        const std::vector<std::int32_t>&, \
                                        double, double, std::uint64_t);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
