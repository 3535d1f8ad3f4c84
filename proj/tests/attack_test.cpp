// PGD / single-step attack behavior: update rule, projection, clamping,
// degenerate budgets, and determinism.

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/metrics.hpp"
#include "sparw/model.hpp"
#include "test_util.hpp"

using namespace sparw;
using testutil::linear_spec;

namespace {

// Identity-weight two-class model: logits = x, so with label 1 the loss
// gradient w.r.t. x is [softmax_0, softmax_1 - 1] -> signs [+, -] always.
Network<double> identity_model() {
  ModelSpec spec = linear_spec(2, 2, /*bias=*/false);
  Network<double> net = build_network<double>(spec);
  net.param("layer0.linear.weight").value.vec() = {1.0, 0.0, 0.0, 1.0};
  return net;
}

Network<double> zero_model() {
  ModelSpec spec = linear_spec(2, 2, /*bias=*/false);
  return build_network<double>(spec);  // all-zero weights: zero gradient
}

}  // namespace

TEST_SUITE_BEGIN("attack");

TEST_CASE("config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
}

TEST_CASE("one step moves alpha along the gradient signs") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;
  cfg.alpha = 2.0 / 255.0;
  cfg.steps = 1;
  cfg.random_start = false;  // delta starts at 0
  TensorT<double> d = pgd_attack(net, x, {1}, cfg, 1);
  CHECK(d[0] == 2.0 / 255.0);
  CHECK(d[1] == -(2.0 / 255.0));
}

TEST_CASE("constant gradient signs saturate at min(steps*alpha, eps)") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;
  cfg.alpha = 2.0 / 255.0;
  cfg.steps = 20;
  cfg.random_start = false;
  TensorT<double> d = pgd_attack(net, x, {1}, cfg, 1);
  CHECK(d[0] == 8.0 / 255.0);
  CHECK(d[1] == -(8.0 / 255.0));

  cfg.steps = 3;  // under the budget: exactly steps*alpha
  d = pgd_attack(net, x, {1}, cfg, 1);
  CHECK(d[0] == 3 * (2.0 / 255.0));
  CHECK(d[1] == -(3 * (2.0 / 255.0)));
}

TEST_CASE("perturbed inputs are clamped into [0,1]") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.99, 0.01});
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;  // would exceed the pixel range
  cfg.alpha = 8.0 / 255.0;
  cfg.steps = 4;
  cfg.random_start = false;
  TensorT<double> d = pgd_attack(net, x, {1}, cfg, 1);
  CHECK(d[0] == 1.0 - 0.99);   // clipped to the pixel headroom
  CHECK(d[1] == -0.01);        // clipped at the floor
  CHECK(x[0] + d[0] <= 1.0);
  CHECK(x[1] + d[1] >= 0.0);
}

TEST_CASE("zero budget returns exactly zero perturbation") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.3, 0.6});
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.alpha = 2.0 / 255.0;
  cfg.steps = 5;
  cfg.random_start = true;
  TensorT<double> d = pgd_attack(net, x, {1}, cfg, 7);
  CHECK(d[0] == 0.0);
  CHECK(d[1] == 0.0);
}

TEST_CASE("zero gradient leaves the random start untouched") {
  Network<double> net = zero_model();
  TensorT<double> x({1, 2}, {0.5, 0.5});
  AttackConfig one;
  one.epsilon = 0.05;
  one.alpha = 1.25 * 0.05;
  one.steps = 1;
  one.random_start = true;
  AttackConfig many = one;
  many.steps = 6;
  // sign(0) = 0: more steps add nothing, so delta stays at the start draw.
  TensorT<double> d1 = pgd_attack(net, x, {1}, one, 42);
  TensorT<double> d6 = pgd_attack(net, x, {1}, many, 42);
  CHECK(d1.vec() == d6.vec());
  CHECK(std::abs(d1[0]) <= 0.05);
  CHECK(std::abs(d1[1]) <= 0.05);
  CHECK((d1[0] != 0.0 || d1[1] != 0.0));  // the start itself is random
}

TEST_CASE("single-step variant equals PGD with one step and 1.25x step size") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.4, 0.7});
  const double eps = 8.0 / 255.0;
  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.alpha = 1.25 * eps;
  cfg.steps = 1;
  cfg.random_start = true;
  TensorT<double> a = fgsm_rs_attack(net, x, {0}, eps, 1.25 * eps, 9);
  TensorT<double> b = pgd_attack(net, x, {0}, cfg, 9);
  CHECK(a.vec() == b.vec());
}

TEST_CASE("attacks are deterministic in the seed") {
  Network<double> net = identity_model();
  TensorT<double> x({1, 2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.steps = 3;
  TensorT<double> a = pgd_attack(net, x, {0}, cfg, 5);
  TensorT<double> b = pgd_attack(net, x, {0}, cfg, 5);
  TensorT<double> c = pgd_attack(net, x, {0}, cfg, 6);
  CHECK(a.vec() == b.vec());
  CHECK(a.vec() != c.vec());
}

TEST_CASE("attack runs in eval mode and leaves parameters untouched") {
  ModelSpec spec;
  spec.name = "bn-probe";
  spec.input_shape = {2};
  spec.classes = 2;
  LayerDesc lin;
  lin.kind = LayerKind::linear;
  lin.out_ch = 2;
  spec.layers.push_back(lin);
  LayerDesc bn;
  bn.kind = LayerKind::batch_norm;
  spec.layers.push_back(bn);
  validate_spec(spec);
  Network<double> net = build_network<double>(spec);
  init_params(net, 4);

  const auto before_mean = net.bn[0].running_mean.vec();
  const auto before_w = net.param("layer0.linear.weight").value.vec();
  zero_grads(net);
  TensorT<double> x({2, 2}, {0.2, 0.8, 0.6, 0.4});
  AttackConfig cfg;
  cfg.steps = 2;
  (void)pgd_attack(net, x, {0, 1}, cfg, 3);
  // Frozen batch-norm statistics and parameters, and no gradient residue.
  CHECK(net.bn[0].running_mean.vec() == before_mean);
  CHECK(net.param("layer0.linear.weight").value.vec() == before_w);
  for (const auto& p : net.params)
    for (auto g : p.grad.vec()) CHECK(g == 0.0);
}

TEST_CASE("non-finite input gradient is an error") {
  // Logits stay finite (9e307 and -9e307) but the input gradient
  // 1e308 * (g0 - g1) overflows to infinity during the backward pass.
  Network<double> net = identity_model();
  auto& w = net.param("layer0.linear.weight").value;
  w.vec() = {1e308, 0.0, -1e308, 0.0};
  TensorT<double> x({1, 2}, {0.9, 0.9});
  AttackConfig cfg;
  cfg.steps = 1;
  cfg.random_start = false;
  CHECK_THROWS_AS((void)pgd_attack(net, x, {1}, cfg, 1), std::runtime_error);
}

TEST_SUITE_END();
