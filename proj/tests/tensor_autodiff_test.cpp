// Tensors, initialization, forward/backward kernels, the loss, and the
// gradient checker.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "sparw/autodiff.hpp"
#include "sparw/model.hpp"
#include "sparw/tensor.hpp"
#include "test_util.hpp"

using namespace sparw;
using testutil::linear_spec;

TEST_SUITE_BEGIN("tensor-autodiff");

TEST_CASE("tensor shape/product invariants") {
  TensorF64 t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == 24);
  CHECK_THROWS_AS(t.reshape({5, 5}), std::invalid_argument);
  t.reshape({4, 6});
  CHECK(t.numel() == 24);
  CHECK_THROWS_AS(TensorF64({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  t.fill(1.5);
  CHECK(all_finite(t));
  t[0] = std::numeric_limits<double>::infinity();
  CHECK(!all_finite(t));
}

TEST_CASE("init: zero biases, seed determinism, He variance") {
  ModelSpec spec = linear_spec(256, 128);
  Network<double> a = build_network<double>(spec);
  Network<double> b = build_network<double>(spec);
  init_params(a, 17);
  init_params(b, 17);
  for (std::size_t i = 0; i < a.params.size(); ++i)
    CHECK(a.params[i].value.vec() == b.params[i].value.vec());

  const auto& bias = a.param("layer0.linear.bias");
  for (auto v : bias.value.vec()) CHECK(v == 0.0);

  // He initialization: Var(w) = 2 / fan_in = 2/256, checked as the sample
  // variance over the 256*128 drawn weights (20% relative tolerance).
  const auto& w = a.param("layer0.linear.weight").value;
  double sum = 0.0, sum2 = 0.0;
  for (auto v : w.vec()) {
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(w.numel());
  const double var = sum2 / n - (sum / n) * (sum / n);
  CHECK(var == doctest::Approx(2.0 / 256.0).epsilon(0.20));

  init_params(b, 18);
  CHECK(a.param("layer0.linear.weight").value.vec() !=
        b.param("layer0.linear.weight").value.vec());
}

TEST_CASE("forward: identity linear maps input through") {
  ModelSpec spec = linear_spec(2, 2);
  Network<double> net = build_network<double>(spec);
  auto& w = net.param("layer0.linear.weight");
  w.value[0] = 1.0;  // [out,in] row-major identity
  w.value[3] = 1.0;
  TensorT<double> x({1, 2}, {1.0, 2.0});
  Tape<double> tape;
  const auto& y = forward_pass(net, x, Mode::eval, tape);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward: 1x1 single-channel conv with unit kernel is identity") {
  ModelSpec spec;
  spec.name = "conv-id";
  spec.input_shape = {1, 2, 2};
  spec.classes = 4;
  LayerDesc conv;
  conv.kind = LayerKind::conv2d;
  conv.out_ch = 1;
  conv.kernel = 1;
  conv.bias = false;
  spec.layers.push_back(conv);
  LayerDesc flat;
  flat.kind = LayerKind::flatten;
  spec.layers.push_back(flat);
  validate_spec(spec);

  Network<double> net = build_network<double>(spec);
  net.param("layer0.conv2d.weight").value[0] = 1.0;
  TensorT<double> x({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  Tape<double> tape;
  const auto& y = forward_pass(net, x, Mode::eval, tape);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("forward: masked weight equals forward with that weight zeroed") {
  ModelSpec spec = linear_spec(4, 3);
  Network<double> masked = build_network<double>(spec);
  Network<double> zeroed = build_network<double>(spec);
  init_params(masked, 5);
  init_params(zeroed, 5);

  auto& wm = masked.param("layer0.linear.weight");
  wm.mask.assign(static_cast<std::size_t>(wm.value.numel()), 1);
  wm.mask[2] = 0;
  wm.mask[7] = 0;
  apply_masks(masked);
  zeroed.param("layer0.linear.weight").value[2] = 0.0;
  zeroed.param("layer0.linear.weight").value[7] = 0.0;

  TensorT<double> x({2, 4}, {0.1, 0.9, 0.4, 0.2, 0.8, 0.3, 0.6, 0.5});
  Tape<double> tm, tz;
  const auto& ym = forward_pass(masked, x, Mode::eval, tm);
  const auto& yz = forward_pass(zeroed, x, Mode::eval, tz);
  CHECK(ym.vec() == yz.vec());
  CHECK(wm.active_count() == 10);
}

TEST_CASE("forward: non-finite intermediates are an error") {
  ModelSpec spec = linear_spec(2, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 1);
  TensorT<double> x({1, 2},
                    {std::numeric_limits<double>::infinity(), 0.0});
  Tape<double> tape;
  CHECK_THROWS_AS((void)forward_pass(net, x, Mode::eval, tape),
                  std::runtime_error);
}

TEST_CASE("loss: uniform softmax, saturated logits, batch mean") {
  TensorT<double> logits({1, 2}, {0.0, 0.0});
  CHECK(loss_softmax_ce(logits, {0}) == doctest::Approx(std::log(2.0)));

  // Large logit gap must not overflow (log-sum-exp stabilization).
  TensorT<double> big({1, 2}, {1000.0, 0.0});
  const double l = loss_softmax_ce(big, {0});
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(0.0).epsilon(1e-12));

  // Two identical rows average to the single-row loss.
  TensorT<double> one({1, 3}, {0.3, -0.2, 1.0});
  TensorT<double> two({2, 3}, {0.3, -0.2, 1.0, 0.3, -0.2, 1.0});
  CHECK(loss_softmax_ce(two, {1, 1}) ==
        doctest::Approx(loss_softmax_ce(one, {1})).epsilon(1e-15));
}

TEST_CASE("loss gradient: logits [0,0], label 0 -> [-0.5, +0.5]") {
  TensorT<double> logits({1, 2}, {0.0, 0.0});
  TensorT<double> d;
  (void)loss_softmax_ce(logits, {0}, &d);
  CHECK(d[0] == doctest::Approx(-0.5));
  CHECK(d[1] == doctest::Approx(0.5));

  // Finite-difference cross-check of both coordinates.
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    TensorT<double> p = logits, m = logits;
    p[j] += h;
    m[j] -= h;
    const double fd =
        (loss_softmax_ce(p, {0}) - loss_softmax_ce(m, {0})) / (2 * h);
    CHECK(d[j] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("backward: quadratic composite d(z^2)/dw = 2wx^2") {
  // z = w * x with x=1, and the caller-supplied upstream gradient encodes
  // L = z^2 (dL/dz = 2z). At w=3 this gives dL/dw = 6.
  ModelSpec spec = linear_spec(1, 1, /*bias=*/false);
  Network<double> net = build_network<double>(spec);
  net.param("layer0.linear.weight").value[0] = 3.0;
  TensorT<double> x({1, 1}, {1.0});
  Tape<double> tape;
  const auto& z = forward_pass(net, x, Mode::eval, tape);
  CHECK(z[0] == 3.0);
  TensorT<double> dz({1, 1}, {2.0 * z[0]});
  zero_grads(net);
  backward_pass(net, tape, dz, GradMode::masked);
  CHECK(net.param("layer0.linear.weight").grad[0] == 6.0);
}

TEST_CASE("backward: masked grads are zero, dense grads match differences") {
  ModelSpec spec = linear_spec(3, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 9);
  auto& w = net.param("layer0.linear.weight");
  w.mask.assign(static_cast<std::size_t>(w.value.numel()), 1);
  const std::int64_t dead = 4;
  w.mask[dead] = 0;
  apply_masks(net);

  TensorT<double> x({2, 3}, {0.2, 0.7, 0.1, 0.9, 0.4, 0.6});
  const std::vector<std::int32_t> labels{0, 1};

  zero_grads(net);
  (void)forward_backward(net, x, labels, Mode::eval, GradMode::masked);
  CHECK(net.param("layer0.linear.weight").grad[dead] == 0.0);

  zero_grads(net);
  (void)forward_backward(net, x, labels, Mode::eval, GradMode::dense);
  const double analytic = net.param("layer0.linear.weight").grad[dead];

  // Central difference through the raw (unmasked) storage.
  const double h = 1e-6;
  auto loss_at = [&](double v) {
    net.param("layer0.linear.weight").value[dead] = v;
    Tape<double> t;
    const auto& logits = forward_pass(net, x, Mode::eval, t);
    return loss_softmax_ce(logits, labels);
  };
  const double fd = (loss_at(h) - loss_at(-h)) / (2 * h);
  net.param("layer0.linear.weight").value[dead] = 0.0;
  CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
  CHECK(analytic != 0.0);
}

TEST_CASE("backward: a tape can only be consumed once") {
  ModelSpec spec = linear_spec(2, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 3);
  TensorT<double> x({1, 2}, {0.5, 0.5});
  Tape<double> tape;
  const auto& logits = forward_pass(net, x, Mode::eval, tape);
  TensorT<double> d;
  (void)loss_softmax_ce(logits, {0}, &d);
  backward_pass(net, tape, d, GradMode::masked);
  CHECK_THROWS_AS(backward_pass(net, tape, d, GradMode::masked),
                  std::runtime_error);
}

TEST_CASE("grad check: linear+relu toy net under 1e-4") {
  ModelSpec spec = make_mlp(6, {5}, 3);
  Network<double> net = build_network<double>(spec);
  init_params(net, 21);
  Dataset ds = synthetic_blobs(3, 4, {6}, 2, 0.3);
  TensorT<double> x;
  std::vector<std::int32_t> labels;
  to_tensor(ds, x, labels);
  GradCheckOptions opts;
  opts.seed = 5;
  const GradCheckReport rep = grad_check(net, x, labels, opts);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad check: conv+batchnorm net (train mode) under 1e-4") {
  ModelSpec spec;
  spec.name = "conv-bn";
  spec.input_shape = {2, 4, 4};
  spec.classes = 3;
  LayerDesc conv;
  conv.kind = LayerKind::conv2d;
  conv.out_ch = 3;
  conv.kernel = 3;
  conv.pad = 1;
  spec.layers.push_back(conv);
  LayerDesc bn;
  bn.kind = LayerKind::batch_norm;
  spec.layers.push_back(bn);
  LayerDesc relu;
  relu.kind = LayerKind::relu;
  spec.layers.push_back(relu);
  LayerDesc flat;
  flat.kind = LayerKind::flatten;
  spec.layers.push_back(flat);
  LayerDesc head;
  head.kind = LayerKind::linear;
  head.out_ch = 3;
  spec.layers.push_back(head);
  validate_spec(spec);

  Network<double> net = build_network<double>(spec);
  init_params(net, 8);
  Dataset ds = synthetic_blobs(3, 4, {2, 4, 4}, 6, 0.3);
  TensorT<double> x;
  std::vector<std::int32_t> labels;
  to_tensor(ds, x, labels);
  GradCheckOptions opts;
  opts.mode = Mode::train;
  opts.seed = 11;
  const GradCheckReport rep = grad_check(net, x, labels, opts);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad check: corrupted analytic gradients are caught") {
  ModelSpec spec = make_mlp(6, {5}, 3);
  Network<double> net = build_network<double>(spec);
  init_params(net, 21);
  Dataset ds = synthetic_blobs(3, 4, {6}, 2, 0.3);
  TensorT<double> x;
  std::vector<std::int32_t> labels;
  to_tensor(ds, x, labels);
  GradCheckOptions opts;
  opts.seed = 5;
  opts.gradient_scale = 1.1;  // fault injection: 10% off must fail
  const GradCheckReport rep = grad_check(net, x, labels, opts);
  CHECK(!rep.pass);
  CHECK(rep.max_rel_error > opts.tolerance);
}

TEST_CASE("argmax_rows picks the max per row") {
  TensorT<double> logits({2, 3}, {0.1, 0.9, 0.3, 2.0, -1.0, 1.5});
  CHECK(argmax_rows(logits) == std::vector<std::int32_t>{1, 0});
}

TEST_SUITE_END();
