// Model specs, parameter enumeration, FLOPs accounting, width scaling.

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "sparw/autodiff.hpp"
#include "sparw/model.hpp"
#include "sparw/sparsity.hpp"
#include "test_util.hpp"

using namespace sparw;
using testutil::linear_spec;

namespace {

ModelSpec conv_stack_spec(std::int64_t width) {
  // input {4,8,8} -> conv3x3(width) -> conv3x3(width) -> flatten -> head
  ModelSpec spec;
  spec.name = "conv-stack";
  spec.input_shape = {4, 8, 8};
  spec.classes = 10;
  for (int i = 0; i < 2; ++i) {
    LayerDesc c;
    c.kind = LayerKind::conv2d;
    c.out_ch = width;
    c.kernel = 3;
    c.pad = 1;
    c.bias = false;
    spec.layers.push_back(c);
  }
  LayerDesc flat;
  flat.kind = LayerKind::flatten;
  spec.layers.push_back(flat);
  LayerDesc head;
  head.kind = LayerKind::linear;
  head.out_ch = 10;
  head.scale_out = false;  // classifier width is pinned
  spec.layers.push_back(head);
  validate_spec(spec);
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("parameter count: linear 4->3 with bias is 15") {
  ModelSpec spec = linear_spec(4, 3);
  CHECK(total_param_count(spec) == 15);  // 4*3 + 3
  CHECK(prunable_param_count(spec) == 12);
  Network<double> net = build_network<double>(spec);
  CHECK(net.total_params() == 15);
  CHECK(net.active_params() == 15);
}

TEST_CASE("dense model reports zero sparsity") {
  ModelSpec spec = make_mlp(8, {6}, 3);
  Network<double> net = build_network<double>(spec);
  init_params(net, 2);
  CHECK(sparsity_of(extract_masks(net)) == 0.0);
}

TEST_CASE("spec validation catches inconsistent wiring") {
  ModelSpec spec = linear_spec(4, 3);
  spec.layers[0].out_ch = 5;  // no longer matches classes
  CHECK_THROWS_AS((void)validate_spec(spec), std::invalid_argument);

  ModelSpec bad = linear_spec(4, 3);
  bad.layers[0].input = 7;  // dangling producer
  CHECK_THROWS_AS((void)validate_spec(bad), std::invalid_argument);
}

TEST_CASE("canonical string is stable and spec-sensitive") {
  ModelSpec a = make_mlp(8, {6}, 3);
  ModelSpec b = make_mlp(8, {6}, 3);
  CHECK(a.canonical_string() == b.canonical_string());
  ModelSpec c = make_mlp(8, {7}, 3);
  CHECK(a.canonical_string() != c.canonical_string());
}

TEST_CASE("layer FLOPs: linear 24, tiny conv 8, relu 0") {
  ModelSpec lin = linear_spec(4, 3);
  CHECK(layer_flops(lin.layers[0], {3}) == 24.0);  // 2*4*3

  LayerDesc conv;
  conv.kind = LayerKind::conv2d;
  conv.in_ch = 1;
  conv.out_ch = 1;
  conv.kernel = 1;
  CHECK(layer_flops(conv, {1, 2, 2}) == 8.0);  // 2*1*1*1*2*2

  LayerDesc relu;
  relu.kind = LayerKind::relu;
  CHECK(layer_flops(relu, {16}) == 0.0);
}

TEST_CASE("sparse FLOPs scale per-layer densities") {
  ModelSpec spec = conv_stack_spec(6);
  const double dense = forward_flops_dense(spec);
  CHECK(dense > 0.0);
  const auto layers = prunable_layers(spec);
  std::vector<double> densities(layers.size(), 0.1);
  CHECK(forward_flops_sparse(spec, densities) ==
        doctest::Approx(0.1 * dense).epsilon(1e-12));
  std::vector<double> ones(layers.size(), 1.0);
  CHECK(forward_flops_sparse(spec, ones) == doctest::Approx(dense));
}

TEST_CASE("width scaling: fraction 1 is the identity") {
  ModelSpec spec = conv_stack_spec(6);
  ModelSpec same = scale_width_to_params(spec, 1.0);
  CHECK(prunable_param_count(same) == prunable_param_count(spec));
  CHECK(same.canonical_string() == spec.canonical_string());
}

TEST_CASE("width scaling: single 10->10 linear at fraction 0.25 -> width 5") {
  // Raw spec: nothing pinned, so both sides of the layer scale together and
  // the parameter count is quadratic in the factor.
  ModelSpec spec = linear_spec(10, 10, /*bias=*/false);
  CHECK(prunable_param_count(spec) == 100);
  ModelSpec quarter = scale_width_to_params(spec, 0.25);
  CHECK(quarter.input_shape[0] == 5);
  CHECK(quarter.layers[0].out_ch == 5);
  CHECK(prunable_param_count(quarter) == 25);
}

TEST_CASE("width scaling: stacked convs shrink by roughly sqrt(fraction)") {
  // input {4,8,8} -> conv3x3(40) -> conv3x3(40) -> avg-pool 8 -> head.
  // Prunable params 36w + 9w^2 + 10w: conv2's quadratic term dominates, so
  // the fitted factor lands near sqrt(0.2). (A flattened head would add a
  // 640w term and drag the factor toward 0.2 instead.)
  ModelSpec spec;
  spec.name = "pooled-stack";
  spec.input_shape = {4, 8, 8};
  spec.classes = 10;
  for (int i = 0; i < 2; ++i) {
    LayerDesc c;
    c.kind = LayerKind::conv2d;
    c.out_ch = 40;
    c.kernel = 3;
    c.pad = 1;
    c.bias = false;
    if (i == 0) c.scale_in = false;  // input channels are data, not width
    spec.layers.push_back(c);
  }
  LayerDesc pool;
  pool.kind = LayerKind::avg_pool;
  pool.kernel = 8;
  pool.stride = 8;
  spec.layers.push_back(pool);
  LayerDesc flat;
  flat.kind = LayerKind::flatten;
  spec.layers.push_back(flat);
  LayerDesc head;
  head.kind = LayerKind::linear;
  head.out_ch = 10;
  head.scale_out = false;
  spec.layers.push_back(head);
  validate_spec(spec);

  const std::int64_t original = prunable_param_count(spec);
  ModelSpec scaled = scale_width_to_params(spec, 0.2, 0.05);
  const double achieved =
      static_cast<double>(prunable_param_count(scaled)) /
      static_cast<double>(original);
  CHECK(achieved == doctest::Approx(0.2).epsilon(0.05));
  const double factor = static_cast<double>(scaled.layers[1].out_ch) / 40.0;
  CHECK(factor == doctest::Approx(std::sqrt(0.2)).epsilon(0.08));
}

TEST_CASE("width scaling: factor must stay positive") {
  ModelSpec spec = conv_stack_spec(6);
  CHECK_THROWS((void)rescale_widths(spec, 0.0));
  CHECK_THROWS((void)rescale_widths(spec, -1.0));
}

TEST_CASE("presets build and validate") {
  for (const char* name : {"mini-vgg", "resnet8", "resnet14"}) {
    ModelSpec spec = make_preset(name, {3, 16, 16}, 10, {});
    CHECK(spec.classes == 10);
    CHECK(total_param_count(spec) > 0);
    Network<float> net = build_network<float>(spec);
    init_params(net, 1);
    TensorT<float> x({2, 3, 16, 16});
    x.fill(0.5f);
    Tape<float> tape;
    const auto& y = forward_pass(net, x, Mode::eval, tape);
    CHECK(y.shape() == Shape{2, 10});
  }
  ModelSpec mlp = make_preset("mlp", {64}, 4, {12, 6});
  CHECK(mlp.classes == 4);
  CHECK_THROWS((void)make_preset("no-such-model", {3, 8, 8}, 4, {}));
}

TEST_SUITE_END();
