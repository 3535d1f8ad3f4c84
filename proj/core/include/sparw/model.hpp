// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Model descriptions. A ModelSpec is a validated, ordered list of layer
// descriptors (a DAG: each layer names its producer(s), default = previous
// layer). Builders produce the small conv families used by the experiments;
// width scaling supports "small dense" baselines that match a sparse
// parameter budget with a thinner dense network.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparw/tensor.hpp"

namespace sparw {

enum class LayerKind : std::uint8_t {
  linear,      // weight [out, in] (+ bias [out])
  conv2d,      // weight [out, in, k, k] (+ bias [out]), stride/pad
  relu,
  avg_pool,    // kernel/stride, no padding
  batch_norm,  // per-channel (4-d input) or per-feature (2-d input)
  add,         // residual join of two producers
  flatten,
};

std::string layer_kind_name(LayerKind kind);

struct LayerDesc {
  LayerKind kind{};
  std::int64_t in_ch = 0;    // input channels/features (inferred on validate)
  std::int64_t out_ch = 0;   // output channels/features
  std::int64_t kernel = 0;   // conv2d / avg_pool window
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  bool bias = true;          // linear/conv2d
  int input = -1;            // producer layer index; -1 = previous (or model input)
  int input2 = -1;           // second producer (add only)
  // Width-scaling boundary pins: builders clear scale_in on layers fed by the
  // model input and scale_out on the classifier head.
  bool scale_in = true;
  bool scale_out = true;

  bool has_weights() const {
    return kind == LayerKind::linear || kind == LayerKind::conv2d ||
           kind == LayerKind::batch_norm;
  }
  // Conv/linear weights participate in sparsity; batch-norm never does.
  bool prunable() const {
    return kind == LayerKind::linear || kind == LayerKind::conv2d;
  }
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // {C,H,W} for images, {F} for flat features
  std::int64_t classes = 0;
  std::vector<LayerDesc> layers;

  // Canonical text form; feeds the checkpoint spec hash.
  std::string canonical_string() const;
};

// Shape inference + structural validation. Fills in in_ch for every layer,
// returns the per-layer output shapes (excluding the batch dimension).
// Throws std::invalid_argument on inconsistent wiring/shapes.
std::vector<Shape> validate_spec(ModelSpec& spec);

// Parameter bookkeeping -------------------------------------------------

struct ParamShapeInfo {
  std::string name;        // e.g. "layer3.conv2d.weight"
  int layer = 0;           // owning layer index
  Shape shape;
  bool prunable = false;   // participates in masks/sparsity
};

// Deterministic parameter enumeration: layer order; weight before bias;
// batch-norm contributes scale then shift.
std::vector<ParamShapeInfo> enumerate_params(const ModelSpec& spec);

// Total / prunable parameter counts.
std::int64_t total_param_count(const ModelSpec& spec);
std::int64_t prunable_param_count(const ModelSpec& spec);

// FLOPs ------------------------------------------------------------------

// Dense forward FLOPs of one layer for a single sample (multiply+add = 2):
//   linear: 2 * n_in * n_out;  conv2d: 2 * k * k * c_in * c_out * H_out * W_out
// Activations, pooling, residual adds and normalization count as zero.
double layer_flops(const LayerDesc& desc, const Shape& out_shape);

// Per-sample dense forward FLOPs of the whole model.
double forward_flops_dense(const ModelSpec& spec);

// Per-sample forward FLOPs with per-prunable-layer densities (order matches
// enumerate_params restricted to prunable entries). Non-prunable layers are
// never scaled.
double forward_flops_sparse(const ModelSpec& spec,
                            const std::vector<double>& densities);

// Builders ----------------------------------------------------------------

// Plain MLP on flat features: hidden ReLU stack + linear head.
ModelSpec make_mlp(std::int64_t in_features, std::vector<std::int64_t> hidden,
                   std::int64_t classes, bool batch_norm = false);

// Small VGG-style conv net: conv(3x3)-BN-ReLU blocks with the given output
// widths (stride 2 from the second block on), global average pool, linear
// head. Input must be {C,H,W}.
ModelSpec make_mini_vgg(const Shape& input_shape,
                        std::vector<std::int64_t> widths,
                        std::int64_t classes);

// 3-stage basic-block residual net (depth = 6n+2: 8 -> n=1, 14 -> n=2).
// Stage widths w, 2w, 4w; stride-2 stage transitions with 1x1 projection.
ModelSpec make_resnet_small(const Shape& input_shape, int blocks_per_stage,
                            std::int64_t base_width, std::int64_t classes);

// Builds a named preset. Recognized: "mlp" (hidden = widths), "mini-vgg",
// "resnet8", "resnet14". Throws on unknown names.
ModelSpec make_preset(const std::string& name, const Shape& input_shape,
                      std::int64_t classes,
                      const std::vector<std::int64_t>& widths);

// Width scaling -------------------------------------------------------------

// Multiplies every scalable width by `factor` (round half up, minimum one
// channel), re-inferring in_ch from the wiring. Boundary widths flagged
// scale_in=false / scale_out=false are pinned.
ModelSpec rescale_widths(const ModelSpec& spec, double factor);

// Finds a common width factor such that the rescaled spec's prunable
// parameter count is within `tolerance` (default 2%) of fraction * original,
// by bisection on the factor. Monotone: a larger fraction never yields fewer
// parameters. When channel rounding leaves no factor inside the tolerance
// band, the closest achievable width set is returned; throws
// std::runtime_error only if the fraction is unreachable with >= 1 channel
// everywhere.
ModelSpec scale_width_to_params(const ModelSpec& spec, double fraction,
                                double tolerance = 0.02);

}  // namespace sparw
