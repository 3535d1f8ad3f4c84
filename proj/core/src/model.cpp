// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sparw {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::add: return "add";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

std::string ModelSpec::canonical_string() const {
  std::string s = "model{name=" + name + ";input=" + shape_to_string(input_shape) +
                  ";classes=" + std::to_string(classes) + ";layers=";
  for (const auto& l : layers) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "(%s,in=%lld,out=%lld,k=%lld,s=%lld,p=%lld,b=%d,i=%d,i2=%d)",
                  layer_kind_name(l.kind).c_str(),
                  static_cast<long long>(l.in_ch),
                  static_cast<long long>(l.out_ch),
                  static_cast<long long>(l.kernel),
                  static_cast<long long>(l.stride),
                  static_cast<long long>(l.pad), l.bias ? 1 : 0, l.input,
                  l.input2);
    s += buf;
  }
  return s + "}";
}

namespace {

[[noreturn]] void spec_error(int layer, const std::string& msg) {
  throw std::invalid_argument("model spec: layer " + std::to_string(layer) +
                              ": " + msg);
}

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s,
                          std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

std::vector<Shape> infer_shapes(ModelSpec& spec, bool check_head);

}  // namespace

std::vector<Shape> validate_spec(ModelSpec& spec) {
  return infer_shapes(spec, /*check_head=*/true);
}

namespace {

std::vector<Shape> infer_shapes(ModelSpec& spec, bool check_head) {
  if (spec.layers.empty())
    throw std::invalid_argument("model spec: no layers");
  if (spec.classes <= 0)
    throw std::invalid_argument("model spec: classes must be positive");
  if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3)
    throw std::invalid_argument("model spec: input shape must be {F} or {C,H,W}");
  for (std::int64_t d : spec.input_shape)
    if (d <= 0) throw std::invalid_argument("model spec: non-positive input dim");

  std::vector<Shape> out(spec.layers.size());
  auto producer_shape = [&](int self, int idx) -> const Shape& {
    if (idx == -1) {
      if (self == 0) return spec.input_shape;
      return out[static_cast<std::size_t>(self - 1)];
    }
    if (idx < 0 || idx >= self)
      spec_error(self, "producer index " + std::to_string(idx) +
                           " out of range");
    return out[static_cast<std::size_t>(idx)];
  };

  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    LayerDesc& l = spec.layers[static_cast<std::size_t>(i)];
    const Shape& in = producer_shape(i, l.input);
    switch (l.kind) {
      case LayerKind::linear: {
        if (in.size() != 1) spec_error(i, "linear expects flat input, got " +
                                              shape_to_string(in));
        if (l.out_ch <= 0) spec_error(i, "linear needs out_ch > 0");
        l.in_ch = in[0];
        out[i] = {l.out_ch};
        break;
      }
      case LayerKind::conv2d: {
        if (in.size() != 3) spec_error(i, "conv2d expects {C,H,W}, got " +
                                              shape_to_string(in));
        if (l.out_ch <= 0 || l.kernel <= 0 || l.stride <= 0 || l.pad < 0)
          spec_error(i, "conv2d needs out_ch,k,stride > 0 and pad >= 0");
        l.in_ch = in[0];
        const std::int64_t h = conv_out_dim(in[1], l.kernel, l.stride, l.pad);
        const std::int64_t w = conv_out_dim(in[2], l.kernel, l.stride, l.pad);
        if (h < 1 || w < 1) spec_error(i, "conv2d output collapses to zero");
        out[i] = {l.out_ch, h, w};
        break;
      }
      case LayerKind::relu: {
        l.in_ch = l.out_ch = in[0];
        out[i] = in;
        break;
      }
      case LayerKind::avg_pool: {
        if (in.size() != 3) spec_error(i, "avg_pool expects {C,H,W}");
        if (l.kernel <= 0 || l.stride <= 0)
          spec_error(i, "avg_pool needs kernel,stride > 0");
        const std::int64_t h = conv_out_dim(in[1], l.kernel, l.stride, 0);
        const std::int64_t w = conv_out_dim(in[2], l.kernel, l.stride, 0);
        if (h < 1 || w < 1) spec_error(i, "avg_pool output collapses to zero");
        l.in_ch = l.out_ch = in[0];
        out[i] = {in[0], h, w};
        break;
      }
      case LayerKind::batch_norm: {
        l.in_ch = l.out_ch = in[0];
        out[i] = in;
        break;
      }
      case LayerKind::add: {
        if (l.input2 < 0 || l.input2 >= i)
          spec_error(i, "add needs a valid second producer");
        const Shape& in2 = out[static_cast<std::size_t>(l.input2)];
        if (in != in2)
          spec_error(i, "add operands differ: " + shape_to_string(in) +
                            " vs " + shape_to_string(in2));
        l.in_ch = l.out_ch = in[0];
        out[i] = in;
        break;
      }
      case LayerKind::flatten: {
        l.in_ch = l.out_ch = shape_numel(in);
        out[i] = {shape_numel(in)};
        break;
      }
    }
  }
  const Shape& last = out.back();
  if (check_head && (last.size() != 1 || last[0] != spec.classes))
    throw std::invalid_argument(
        "model spec: final output " + shape_to_string(last) +
        " does not match classes " + std::to_string(spec.classes));
  return out;
}

}  // namespace

std::vector<ParamShapeInfo> enumerate_params(const ModelSpec& spec) {
  ModelSpec copy = spec;
  validate_spec(copy);
  std::vector<ParamShapeInfo> infos;
  for (int i = 0; i < static_cast<int>(copy.layers.size()); ++i) {
    const LayerDesc& l = copy.layers[static_cast<std::size_t>(i)];
    const std::string prefix =
        "layer" + std::to_string(i) + "." + layer_kind_name(l.kind) + ".";
    switch (l.kind) {
      case LayerKind::linear:
        infos.push_back({prefix + "weight", i, {l.out_ch, l.in_ch}, true});
        if (l.bias) infos.push_back({prefix + "bias", i, {l.out_ch}, false});
        break;
      case LayerKind::conv2d:
        infos.push_back(
            {prefix + "weight", i, {l.out_ch, l.in_ch, l.kernel, l.kernel}, true});
        if (l.bias) infos.push_back({prefix + "bias", i, {l.out_ch}, false});
        break;
      case LayerKind::batch_norm:
        infos.push_back({prefix + "scale", i, {l.out_ch}, false});
        infos.push_back({prefix + "shift", i, {l.out_ch}, false});
        break;
      default:
        break;
    }
  }
  return infos;
}

std::int64_t total_param_count(const ModelSpec& spec) {
  std::int64_t n = 0;
  for (const auto& p : enumerate_params(spec)) n += shape_numel(p.shape);
  return n;
}

std::int64_t prunable_param_count(const ModelSpec& spec) {
  std::int64_t n = 0;
  for (const auto& p : enumerate_params(spec))
    if (p.prunable) n += shape_numel(p.shape);
  return n;
}

double layer_flops(const LayerDesc& desc, const Shape& out_shape) {
  switch (desc.kind) {
    case LayerKind::linear:
      return 2.0 * static_cast<double>(desc.in_ch) *
             static_cast<double>(desc.out_ch);
    case LayerKind::conv2d:
      return 2.0 * static_cast<double>(desc.kernel) *
             static_cast<double>(desc.kernel) *
             static_cast<double>(desc.in_ch) *
             static_cast<double>(desc.out_ch) *
             static_cast<double>(out_shape[1]) *
             static_cast<double>(out_shape[2]);
    default:
      return 0.0;
  }
}

double forward_flops_dense(const ModelSpec& spec) {
  ModelSpec copy = spec;
  const auto shapes = validate_spec(copy);
  double f = 0.0;
  for (std::size_t i = 0; i < copy.layers.size(); ++i)
    f += layer_flops(copy.layers[i], shapes[i]);
  return f;
}

double forward_flops_sparse(const ModelSpec& spec,
                            const std::vector<double>& densities) {
  ModelSpec copy = spec;
  const auto shapes = validate_spec(copy);
  double f = 0.0;
  std::size_t next_density = 0;
  for (std::size_t i = 0; i < copy.layers.size(); ++i) {
    const double layer_cost = layer_flops(copy.layers[i], shapes[i]);
    if (copy.layers[i].prunable()) {
      if (next_density >= densities.size())
        throw std::invalid_argument("forward_flops_sparse: densities too short");
      f += densities[next_density++] * layer_cost;
    } else {
      f += layer_cost;
    }
  }
  if (next_density != densities.size())
    throw std::invalid_argument("forward_flops_sparse: densities too long");
  return f;
}

// Builders -------------------------------------------------------------

ModelSpec make_mlp(std::int64_t in_features, std::vector<std::int64_t> hidden,
                   std::int64_t classes, bool batch_norm) {
  ModelSpec spec;
  spec.name = "mlp";
  spec.input_shape = {in_features};
  spec.classes = classes;
  bool first = true;
  for (std::int64_t h : hidden) {
    LayerDesc lin{};
    lin.kind = LayerKind::linear;
    lin.out_ch = h;
    lin.scale_in = !first;
    spec.layers.push_back(lin);
    if (batch_norm) {
      LayerDesc bn{};
      bn.kind = LayerKind::batch_norm;
      spec.layers.push_back(bn);
    }
    LayerDesc act{};
    act.kind = LayerKind::relu;
    spec.layers.push_back(act);
    first = false;
  }
  LayerDesc head{};
  head.kind = LayerKind::linear;
  head.out_ch = classes;
  head.scale_in = !first;
  head.scale_out = false;
  spec.layers.push_back(head);
  validate_spec(spec);
  return spec;
}

namespace {

void push_conv_bn_relu(ModelSpec& spec, std::int64_t width,
                       std::int64_t kernel, std::int64_t stride,
                       std::int64_t pad, bool first) {
  LayerDesc conv{};
  conv.kind = LayerKind::conv2d;
  conv.out_ch = width;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.pad = pad;
  conv.bias = false;  // absorbed by the following batch norm
  conv.scale_in = !first;
  spec.layers.push_back(conv);
  LayerDesc bn{};
  bn.kind = LayerKind::batch_norm;
  spec.layers.push_back(bn);
  LayerDesc act{};
  act.kind = LayerKind::relu;
  spec.layers.push_back(act);
}

void push_head(ModelSpec& spec, const Shape& spatial, std::int64_t classes) {
  LayerDesc pool{};
  pool.kind = LayerKind::avg_pool;
  pool.kernel = spatial[1];
  pool.stride = spatial[1];
  spec.layers.push_back(pool);
  LayerDesc flat{};
  flat.kind = LayerKind::flatten;
  spec.layers.push_back(flat);
  LayerDesc head{};
  head.kind = LayerKind::linear;
  head.out_ch = classes;
  head.scale_out = false;
  spec.layers.push_back(head);
}

}  // namespace

ModelSpec make_mini_vgg(const Shape& input_shape,
                        std::vector<std::int64_t> widths,
                        std::int64_t classes) {
  if (widths.empty()) widths = {16, 32, 64, 64};
  ModelSpec spec;
  spec.name = "mini-vgg";
  spec.input_shape = input_shape;
  spec.classes = classes;
  for (std::size_t i = 0; i < widths.size(); ++i)
    push_conv_bn_relu(spec, widths[i], 3, i == 0 ? 1 : 2, 1, i == 0);
  const auto shapes = infer_shapes(spec, /*check_head=*/false);
  push_head(spec, shapes.back(), classes);
  validate_spec(spec);
  return spec;
}

ModelSpec make_resnet_small(const Shape& input_shape, int blocks_per_stage,
                            std::int64_t base_width, std::int64_t classes) {
  if (blocks_per_stage < 1)
    throw std::invalid_argument("resnet: blocks_per_stage must be >= 1");
  ModelSpec spec;
  spec.name = "resnet" + std::to_string(6 * blocks_per_stage + 2);
  spec.input_shape = input_shape;
  spec.classes = classes;
  push_conv_bn_relu(spec, base_width, 3, 1, 1, true);

  std::int64_t width = base_width;
  for (int stage = 0; stage < 3; ++stage) {
    const std::int64_t stage_width = base_width << stage;
    for (int block = 0; block < blocks_per_stage; ++block) {
      const std::int64_t stride = (stage > 0 && block == 0) ? 2 : 1;
      const int block_input = static_cast<int>(spec.layers.size()) - 1;
      // Main branch: conv-bn-relu-conv-bn.
      LayerDesc c1{};
      c1.kind = LayerKind::conv2d;
      c1.out_ch = stage_width;
      c1.kernel = 3;
      c1.stride = stride;
      c1.pad = 1;
      c1.bias = false;
      spec.layers.push_back(c1);
      LayerDesc bn1{};
      bn1.kind = LayerKind::batch_norm;
      spec.layers.push_back(bn1);
      LayerDesc act1{};
      act1.kind = LayerKind::relu;
      spec.layers.push_back(act1);
      LayerDesc c2{};
      c2.kind = LayerKind::conv2d;
      c2.out_ch = stage_width;
      c2.kernel = 3;
      c2.stride = 1;
      c2.pad = 1;
      c2.bias = false;
      spec.layers.push_back(c2);
      LayerDesc bn2{};
      bn2.kind = LayerKind::batch_norm;
      spec.layers.push_back(bn2);
      int skip = block_input;
      if (stride != 1 || width != stage_width) {
        // Projection shortcut: 1x1 conv + bn off the block input.
        LayerDesc proj{};
        proj.kind = LayerKind::conv2d;
        proj.out_ch = stage_width;
        proj.kernel = 1;
        proj.stride = stride;
        proj.pad = 0;
        proj.bias = false;
        proj.input = block_input;
        spec.layers.push_back(proj);
        LayerDesc bnp{};
        bnp.kind = LayerKind::batch_norm;
        spec.layers.push_back(bnp);
        skip = static_cast<int>(spec.layers.size()) - 1;
      }
      LayerDesc join{};
      join.kind = LayerKind::add;
      if (skip != block_input) {
        // Projection inserted: previous layer is its bn, main-branch bn2
        // sits two layers earlier.
        join.input = skip - 2;   // bn2
        join.input2 = skip;      // projection bn
      } else {
        join.input = -1;         // bn2 is the previous layer
        join.input2 = skip;      // block input (identity)
      }
      spec.layers.push_back(join);
      LayerDesc act2{};
      act2.kind = LayerKind::relu;
      spec.layers.push_back(act2);
      width = stage_width;
    }
  }
  const auto shapes = infer_shapes(spec, /*check_head=*/false);
  push_head(spec, shapes.back(), classes);
  validate_spec(spec);
  return spec;
}

ModelSpec make_preset(const std::string& name, const Shape& input_shape,
                      std::int64_t classes,
                      const std::vector<std::int64_t>& widths) {
  if (name == "mlp") {
    if (input_shape.size() != 1)
      throw std::invalid_argument("mlp preset expects flat input shape");
    return make_mlp(input_shape[0],
                    widths.empty() ? std::vector<std::int64_t>{64, 64} : widths,
                    classes);
  }
  if (name == "mini-vgg") return make_mini_vgg(input_shape, widths, classes);
  if (name == "resnet8")
    return make_resnet_small(input_shape, 1, widths.empty() ? 16 : widths[0],
                             classes);
  if (name == "resnet14")
    return make_resnet_small(input_shape, 2, widths.empty() ? 16 : widths[0],
                             classes);
  throw std::invalid_argument("unknown model preset: " + name);
}

// Width scaling ----------------------------------------------------------

namespace {

std::int64_t scaled_width(std::int64_t w, double factor) {
  const double x = static_cast<double>(w) * factor;
  std::int64_t r = std::llround(x);  // round half away from zero = half up here
  return r < 1 ? 1 : r;
}

}  // namespace

ModelSpec rescale_widths(const ModelSpec& spec, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw std::invalid_argument("rescale_widths: factor must be positive");
  ModelSpec scaled = spec;
  // The model input width scales only when no consumer pins it.
  bool input_pinned = false;
  for (int i = 0; i < static_cast<int>(scaled.layers.size()); ++i) {
    const LayerDesc& l = scaled.layers[static_cast<std::size_t>(i)];
    const bool feeds_from_input = (i == 0 && l.input == -1);
    if (feeds_from_input && !l.scale_in) input_pinned = true;
  }
  if (!input_pinned && !scaled.input_shape.empty())
    scaled.input_shape[0] = scaled_width(scaled.input_shape[0], factor);
  for (auto& l : scaled.layers) {
    if ((l.kind == LayerKind::linear || l.kind == LayerKind::conv2d) &&
        l.scale_out)
      l.out_ch = scaled_width(l.out_ch, factor);
  }
  // A scalable output head moves the class count with it.
  if (!scaled.layers.empty()) {
    const LayerDesc& last = scaled.layers.back();
    if ((last.kind == LayerKind::linear || last.kind == LayerKind::conv2d) &&
        last.scale_out)
      scaled.classes = last.out_ch;
  }
  validate_spec(scaled);  // re-infers in_ch and batch-norm widths
  return scaled;
}

ModelSpec scale_width_to_params(const ModelSpec& spec, double fraction,
                                double tolerance) {
  if (!(fraction > 0.0) || !std::isfinite(fraction))
    throw std::invalid_argument("scale_width_to_params: fraction must be positive");
  const double original = static_cast<double>(prunable_param_count(spec));
  const double target = fraction * original;

  auto count_at = [&](double f) {
    return static_cast<double>(prunable_param_count(rescale_widths(spec, f)));
  };

  double hi = 1.0;
  while (count_at(hi) < target) {
    hi *= 2.0;
    if (hi > 64.0)
      throw std::runtime_error("scale_width_to_params: fraction unreachable");
  }
  double lo = 0.0;
  // Bisect to the smallest factor whose count reaches the target; counts are
  // monotone in the factor, plateau boundaries included on the >= side.
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (count_at(mid) >= target)
      hi = mid;
    else
      lo = mid;
  }
  // The achievable counts form a step set; hi sits on the first plateau at
  // or above the target, lo on the one below. Prefer whichever side is
  // closer. Channel rounding can leave both sides outside the tolerance on
  // narrow models; the closest achievable width set is still returned. The
  // fraction is genuinely unreachable only when even the minimum widths
  // (one channel everywhere) overshoot the target.
  const double above = count_at(hi);
  if (lo == 0.0) {
    if (std::abs(above - target) > tolerance * target)
      throw std::runtime_error(
          "scale_width_to_params: fraction unreachable with at least one "
          "channel everywhere");
    return rescale_widths(spec, hi);
  }
  const double below = count_at(lo);
  return std::abs(above - target) <= std::abs(below - target)
             ? rescale_widths(spec, hi)
             : rescale_widths(spec, lo);
}

}  // namespace sparw
