// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "sparw/rng.hpp"

namespace sparw {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// One-sample im2col: input x [C,H,W] -> col [C*k*k, Ho*Wo], zero padding.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t Ho,
            std::int64_t Wo, T* col) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * s + ki - p;
          if (ih < 0 || ih >= H) {
            for (std::int64_t ow = 0; ow < Wo; ++ow) row[oh * Wo + ow] = T{0};
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * s + kj - p;
            row[oh * Wo + ow] = (iw < 0 || iw >= W) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col gradients back to dx [C,H,W].
template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W,
                std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t Ho,
                std::int64_t Wo, T* dx) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih = oh * s + ki - p;
          if (ih < 0 || ih >= H) continue;
          T* dst = dx + (c * H + ih) * W;
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            const std::int64_t iw = ow * s + kj - p;
            if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

[[noreturn]] void layer_error(int layer, LayerKind kind,
                              const std::string& msg) {
  throw std::runtime_error("layer " + std::to_string(layer) + " (" +
                           layer_kind_name(kind) + "): " + msg);
}

}  // namespace

// Network ----------------------------------------------------------------

template <typename T>
Parameter<T>& Network<T>::param(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p;
  throw std::invalid_argument("network: no parameter named " + name);
}

template <typename T>
const Parameter<T>& Network<T>::param(const std::string& name) const {
  return const_cast<Network<T>*>(this)->param(name);
}

template <typename T>
std::int64_t Network<T>::total_params() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

template <typename T>
std::int64_t Network<T>::active_params() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.active_count();
  return n;
}

template <typename T>
Network<T> build_network(const ModelSpec& spec) {
  Network<T> net;
  net.spec = spec;
  net.layer_shapes = validate_spec(net.spec);
  net.first_param_of_layer.assign(net.spec.layers.size(), -1);
  net.bn_buffer_of_layer.assign(net.spec.layers.size(), -1);
  for (const auto& info : enumerate_params(net.spec)) {
    Parameter<T> p;
    p.name = info.name;
    p.layer = info.layer;
    p.prunable = info.prunable;
    p.value = TensorT<T>(info.shape);
    p.grad = TensorT<T>(info.shape);
    if (net.first_param_of_layer[static_cast<std::size_t>(info.layer)] < 0)
      net.first_param_of_layer[static_cast<std::size_t>(info.layer)] =
          static_cast<int>(net.params.size());
    net.params.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    if (net.spec.layers[i].kind == LayerKind::batch_norm) {
      BatchNormBuffers<T> b;
      b.running_mean = TensorT<T>({net.spec.layers[i].out_ch});
      b.running_var = TensorT<T>::full({net.spec.layers[i].out_ch}, T{1});
      net.bn_buffer_of_layer[i] = static_cast<int>(net.bn.size());
      net.bn.push_back(std::move(b));
    }
  }
  return net;
}

template <typename T>
void init_params(Network<T>& net, std::uint64_t seed) {
  for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
    Parameter<T>& p = net.params[pi];
    const LayerDesc& l = net.spec.layers[static_cast<std::size_t>(p.layer)];
    const bool is_weight = p.name.ends_with(".weight");
    if (is_weight) {
      std::int64_t fan_in = l.in_ch;
      if (l.kind == LayerKind::conv2d) fan_in *= l.kernel * l.kernel;
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      RandomStream rng(derive_seed(seed, "init", pi));
      for (std::int64_t i = 0; i < p.value.numel(); ++i)
        p.value[i] = static_cast<T>(rng.normal(0.0, stddev));
    } else if (p.name.ends_with(".scale")) {
      p.value.fill(T{1});
    } else {
      p.value.fill(T{0});  // biases and batch-norm shifts
    }
  }
  for (auto& b : net.bn) {
    b.running_mean.fill(T{0});
    b.running_var.fill(T{1});
  }
  apply_masks(net);
}

template <typename T>
void apply_masks(Network<T>& net) {
  for (auto& p : net.params) {
    if (p.mask.empty()) continue;
    if (static_cast<std::int64_t>(p.mask.size()) != p.value.numel())
      throw std::invalid_argument("apply_masks: mask size mismatch on " + p.name);
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      if (!p.mask[static_cast<std::size_t>(i)]) p.value[i] = T{0};
  }
}

template <typename T>
void zero_grads(Network<T>& net) {
  for (auto& p : net.params) p.grad.fill(T{0});
}

// Forward ------------------------------------------------------------------

namespace {

template <typename T>
struct LayerCtx {
  Network<T>* net;
  int layer;
  const LayerDesc* desc;
  std::int64_t N;
};

template <typename T>
void forward_linear(const LayerCtx<T>& ctx, const TensorT<T>& x,
                    TensorT<T>& y) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  const Parameter<T>& w = ctx.net->params[static_cast<std::size_t>(pi)];
  CMapM<T> X(x.data(), ctx.N, d.in_ch);
  CMapM<T> W(w.value.data(), d.out_ch, d.in_ch);
  MapM<T> Y(y.data(), ctx.N, d.out_ch);
  Y.noalias() = X * W.transpose();
  if (d.bias) {
    const Parameter<T>& b = ctx.net->params[static_cast<std::size_t>(pi + 1)];
    for (std::int64_t n = 0; n < ctx.N; ++n)
      for (std::int64_t o = 0; o < d.out_ch; ++o)
        y[n * d.out_ch + o] += b.value[o];
  }
}

template <typename T>
void forward_conv(const LayerCtx<T>& ctx, const TensorT<T>& x, TensorT<T>& y,
                  const Shape& out_shape, std::vector<T>& col) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  const Parameter<T>& w = ctx.net->params[static_cast<std::size_t>(pi)];
  const Shape& in_shape = x.shape();
  const std::int64_t C = d.in_ch, H = in_shape[2], W = in_shape[3];
  const std::int64_t Ho = out_shape[1], Wo = out_shape[2];
  const std::int64_t ck2 = C * d.kernel * d.kernel;
  col.resize(static_cast<std::size_t>(ck2 * Ho * Wo));
  CMapM<T> Wm(w.value.data(), d.out_ch, ck2);
  const std::int64_t in_stride = C * H * W;
  const std::int64_t out_stride = d.out_ch * Ho * Wo;
  for (std::int64_t n = 0; n < ctx.N; ++n) {
    im2col(x.data() + n * in_stride, C, H, W, d.kernel, d.stride, d.pad, Ho, Wo,
           col.data());
    CMapM<T> Cm(col.data(), ck2, Ho * Wo);
    MapM<T> Ym(y.data() + n * out_stride, d.out_ch, Ho * Wo);
    Ym.noalias() = Wm * Cm;
  }
  if (d.bias) {
    const Parameter<T>& b = ctx.net->params[static_cast<std::size_t>(pi + 1)];
    for (std::int64_t n = 0; n < ctx.N; ++n)
      for (std::int64_t o = 0; o < d.out_ch; ++o) {
        T* dst = y.data() + n * out_stride + o * Ho * Wo;
        for (std::int64_t i = 0; i < Ho * Wo; ++i) dst[i] += b.value[o];
      }
  }
}

template <typename T>
void forward_avg_pool(const LayerCtx<T>& ctx, const TensorT<T>& x,
                      TensorT<T>& y, const Shape& out_shape) {
  const LayerDesc& d = *ctx.desc;
  const std::int64_t C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::int64_t Ho = out_shape[1], Wo = out_shape[2];
  const T inv = T{1} / static_cast<T>(d.kernel * d.kernel);
  for (std::int64_t n = 0; n < ctx.N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = x.data() + (n * C + c) * H * W;
      T* dst = y.data() + (n * C + c) * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T acc{0};
          for (std::int64_t ki = 0; ki < d.kernel; ++ki)
            for (std::int64_t kj = 0; kj < d.kernel; ++kj)
              acc += src[(oh * d.stride + ki) * W + (ow * d.stride + kj)];
          dst[oh * Wo + ow] = acc * inv;
        }
    }
}

// Batch norm statistics are reduced per channel over (N, spatial) in a fixed
// order with double accumulators: deterministic and precision-safe in f32.
template <typename T>
void forward_batch_norm(const LayerCtx<T>& ctx, const TensorT<T>& x,
                        TensorT<T>& y, Mode mode,
                        typename Tape<T>::Node& node) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  const Parameter<T>& scale = ctx.net->params[static_cast<std::size_t>(pi)];
  const Parameter<T>& shift = ctx.net->params[static_cast<std::size_t>(pi + 1)];
  BatchNormBuffers<T>& buf =
      ctx.net->bn[static_cast<std::size_t>(
          ctx.net->bn_buffer_of_layer[static_cast<std::size_t>(ctx.layer)])];
  const std::int64_t C = d.out_ch;
  const std::int64_t spatial = x.numel() / (ctx.N * C);
  const std::int64_t M = ctx.N * spatial;

  node.bn_inv_std = TensorT<T>({C});
  if (mode == Mode::train) {
    node.bn_xhat = TensorT<T>(x.shape());
    for (std::int64_t c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* src = x.data() + (n * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          const double v = static_cast<double>(src[i]);
          sum += v;
          sq += v * v;
        }
      }
      const double mean = sum / static_cast<double>(M);
      double var = sq / static_cast<double>(M) - mean * mean;
      if (var < 0.0) var = 0.0;  // guard against rounding
      const double inv_std = 1.0 / std::sqrt(var + kBnEps);
      node.bn_inv_std[c] = static_cast<T>(inv_std);
      buf.running_mean[c] = static_cast<T>(
          (1.0 - kBnMomentum) * static_cast<double>(buf.running_mean[c]) +
          kBnMomentum * mean);
      buf.running_var[c] = static_cast<T>(
          (1.0 - kBnMomentum) * static_cast<double>(buf.running_var[c]) +
          kBnMomentum * var);
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* src = x.data() + (n * C + c) * spatial;
        T* xh = node.bn_xhat.data() + (n * C + c) * spatial;
        T* dst = y.data() + (n * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          const T xhat = static_cast<T>(
              (static_cast<double>(src[i]) - mean) * inv_std);
          xh[i] = xhat;
          dst[i] = scale.value[c] * xhat + shift.value[c];
        }
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      const double mean = static_cast<double>(buf.running_mean[c]);
      const double inv_std =
          1.0 / std::sqrt(static_cast<double>(buf.running_var[c]) + kBnEps);
      node.bn_inv_std[c] = static_cast<T>(inv_std);
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* src = x.data() + (n * C + c) * spatial;
        T* dst = y.data() + (n * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i)
          dst[i] = static_cast<T>(
              static_cast<double>(scale.value[c]) *
                  (static_cast<double>(src[i]) - mean) * inv_std +
              static_cast<double>(shift.value[c]));
      }
    }
  }
}

}  // namespace

template <typename T>
const TensorT<T>& forward_pass(Network<T>& net, const TensorT<T>& x, Mode mode,
                               Tape<T>& tape) {
  const Shape& in = net.spec.input_shape;
  if (x.shape().empty()) throw std::runtime_error("forward: scalar input");
  const std::int64_t N = x.shape()[0];
  if (N < 1) throw std::runtime_error("forward: empty batch");
  // A flat-input model accepts any batch whose per-sample size matches (the
  // sample is implicitly flattened); otherwise the shapes must agree exactly.
  bool shape_ok;
  if (in.size() == 1) {
    shape_ok = x.numel() == N * in[0];
  } else {
    shape_ok = x.shape().size() == in.size() + 1;
    for (std::size_t i = 0; shape_ok && i < in.size(); ++i)
      shape_ok = x.shape()[i + 1] == in[i];
  }
  if (!shape_ok)
    throw std::runtime_error("forward: batch shape " +
                             shape_to_string(x.shape()) +
                             " does not match model input " +
                             shape_to_string(in));

  tape.input = x;
  tape.mode = mode;
  tape.consumed = false;
  tape.nodes.clear();
  tape.nodes.resize(net.spec.layers.size());

  std::vector<T> conv_scratch;
  for (int i = 0; i < static_cast<int>(net.spec.layers.size()); ++i) {
    const LayerDesc& d = net.spec.layers[static_cast<std::size_t>(i)];
    typename Tape<T>::Node& node = tape.nodes[static_cast<std::size_t>(i)];
    node.layer = i;
    node.input_node = d.input == -1 ? i - 1 : d.input;
    node.input2_node = d.kind == LayerKind::add ? d.input2 : -1;
    const TensorT<T>& src =
        node.input_node < 0
            ? tape.input
            : tape.nodes[static_cast<std::size_t>(node.input_node)].out;

    Shape out_shape = net.layer_shapes[static_cast<std::size_t>(i)];
    out_shape.insert(out_shape.begin(), N);
    node.out = TensorT<T>(out_shape);
    LayerCtx<T> ctx{&net, i, &d, N};

    switch (d.kind) {
      case LayerKind::linear:
        forward_linear(ctx, src, node.out);
        break;
      case LayerKind::conv2d:
        forward_conv(ctx, src, node.out,
                     net.layer_shapes[static_cast<std::size_t>(i)],
                     conv_scratch);
        break;
      case LayerKind::relu:
        for (std::int64_t j = 0; j < src.numel(); ++j)
          node.out[j] = src[j] > T{0} ? src[j] : T{0};
        break;
      case LayerKind::avg_pool:
        forward_avg_pool(ctx, src, node.out,
                         net.layer_shapes[static_cast<std::size_t>(i)]);
        break;
      case LayerKind::batch_norm:
        forward_batch_norm(ctx, src, node.out, mode, node);
        break;
      case LayerKind::add: {
        const TensorT<T>& src2 =
            tape.nodes[static_cast<std::size_t>(node.input2_node)].out;
        for (std::int64_t j = 0; j < src.numel(); ++j)
          node.out[j] = src[j] + src2[j];
        break;
      }
      case LayerKind::flatten:
        node.out.vec() = src.vec();
        break;
    }
    if (!all_finite(node.out))
      layer_error(i, d.kind, "non-finite activation");
  }
  return tape.nodes.back().out;
}

// Loss -----------------------------------------------------------------

template <typename T>
double loss_softmax_ce(const TensorT<T>& logits,
                       const std::vector<std::int32_t>& labels,
                       TensorT<T>* dlogits) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("loss: logits must be [N, classes]");
  const std::int64_t N = logits.shape()[0];
  const std::int64_t C = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw std::invalid_argument("loss: batch/label size mismatch");
  if (dlogits) *dlogits = TensorT<T>(logits.shape());
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const std::int32_t y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= C)
      throw std::invalid_argument("loss: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(C) + ")");
    const T* row = logits.data() + n * C;
    double mx = static_cast<double>(row[0]);
    for (std::int64_t c = 1; c < C; ++c)
      mx = std::max(mx, static_cast<double>(row[c]));
    double lse = 0.0;
    for (std::int64_t c = 0; c < C; ++c)
      lse += std::exp(static_cast<double>(row[c]) - mx);
    const double log_z = mx + std::log(lse);
    total += log_z - static_cast<double>(row[y]);
    if (dlogits) {
      T* drow = dlogits->data() + n * C;
      for (std::int64_t c = 0; c < C; ++c) {
        const double p = std::exp(static_cast<double>(row[c]) - log_z);
        drow[c] = static_cast<T>((p - (c == y ? 1.0 : 0.0)) /
                                 static_cast<double>(N));
      }
    }
  }
  return total / static_cast<double>(N);
}

// Backward -----------------------------------------------------------------

namespace {

template <typename T>
void backward_linear(const LayerCtx<T>& ctx, const TensorT<T>& x,
                     const TensorT<T>& dy, TensorT<T>* dx,
                     bool with_param_grads) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  Parameter<T>& w = ctx.net->params[static_cast<std::size_t>(pi)];
  CMapM<T> X(x.data(), ctx.N, d.in_ch);
  CMapM<T> dY(dy.data(), ctx.N, d.out_ch);
  if (with_param_grads) {
    MapM<T> dW(w.grad.data(), d.out_ch, d.in_ch);
    dW.noalias() += dY.transpose() * X;
    if (d.bias) {
      Parameter<T>& b = ctx.net->params[static_cast<std::size_t>(pi + 1)];
      for (std::int64_t n = 0; n < ctx.N; ++n)
        for (std::int64_t o = 0; o < d.out_ch; ++o)
          b.grad[o] += dy[n * d.out_ch + o];
    }
  }
  if (dx) {
    CMapM<T> W(w.value.data(), d.out_ch, d.in_ch);
    MapM<T> dX(dx->data(), ctx.N, d.in_ch);
    dX.noalias() += dY * W;
  }
}

template <typename T>
void backward_conv(const LayerCtx<T>& ctx, const TensorT<T>& x,
                   const TensorT<T>& dy, TensorT<T>* dx, const Shape& out_shape,
                   bool with_param_grads, std::vector<T>& col,
                   std::vector<T>& dcol) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  Parameter<T>& w = ctx.net->params[static_cast<std::size_t>(pi)];
  const Shape& in_shape = x.shape();
  const std::int64_t C = d.in_ch, H = in_shape[2], W = in_shape[3];
  const std::int64_t Ho = out_shape[1], Wo = out_shape[2];
  const std::int64_t ck2 = C * d.kernel * d.kernel;
  col.resize(static_cast<std::size_t>(ck2 * Ho * Wo));
  dcol.resize(static_cast<std::size_t>(ck2 * Ho * Wo));
  CMapM<T> Wm(w.value.data(), d.out_ch, ck2);
  MapM<T> dWm(w.grad.data(), d.out_ch, ck2);
  const std::int64_t in_stride = C * H * W;
  const std::int64_t out_stride = d.out_ch * Ho * Wo;
  for (std::int64_t n = 0; n < ctx.N; ++n) {
    CMapM<T> dYm(dy.data() + n * out_stride, d.out_ch, Ho * Wo);
    if (with_param_grads) {
      im2col(x.data() + n * in_stride, C, H, W, d.kernel, d.stride, d.pad, Ho,
             Wo, col.data());
      CMapM<T> Cm(col.data(), ck2, Ho * Wo);
      dWm.noalias() += dYm * Cm.transpose();
    }
    if (dx) {
      MapM<T> dCm(dcol.data(), ck2, Ho * Wo);
      dCm.noalias() = Wm.transpose() * dYm;
      col2im_add(dcol.data(), C, H, W, d.kernel, d.stride, d.pad, Ho, Wo,
                 dx->data() + n * in_stride);
    }
  }
  if (with_param_grads && d.bias) {
    Parameter<T>& b = ctx.net->params[static_cast<std::size_t>(pi + 1)];
    for (std::int64_t n = 0; n < ctx.N; ++n)
      for (std::int64_t o = 0; o < d.out_ch; ++o) {
        const T* src = dy.data() + n * out_stride + o * Ho * Wo;
        T acc{0};
        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += src[i];
        b.grad[o] += acc;
      }
  }
}

template <typename T>
void backward_avg_pool(const LayerCtx<T>& ctx, const TensorT<T>& dy,
                       TensorT<T>* dxp, const Shape& out_shape) {
  if (!dxp) return;
  TensorT<T>& dx = *dxp;
  const LayerDesc& d = *ctx.desc;
  const std::int64_t C = dx.shape()[1], H = dx.shape()[2], W = dx.shape()[3];
  const std::int64_t Ho = out_shape[1], Wo = out_shape[2];
  const T inv = T{1} / static_cast<T>(d.kernel * d.kernel);
  for (std::int64_t n = 0; n < ctx.N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = dy.data() + (n * C + c) * Ho * Wo;
      T* dst = dx.data() + (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          const T g = src[oh * Wo + ow] * inv;
          for (std::int64_t ki = 0; ki < d.kernel; ++ki)
            for (std::int64_t kj = 0; kj < d.kernel; ++kj)
              dst[(oh * d.stride + ki) * W + (ow * d.stride + kj)] += g;
        }
    }
}

template <typename T>
void backward_batch_norm(const LayerCtx<T>& ctx, const TensorT<T>& x,
                         const TensorT<T>& dy, TensorT<T>* dxp, Mode mode,
                         const typename Tape<T>::Node& node,
                         bool with_param_grads) {
  const LayerDesc& d = *ctx.desc;
  const int pi = ctx.net->first_param_of_layer[static_cast<std::size_t>(ctx.layer)];
  Parameter<T>& scale = ctx.net->params[static_cast<std::size_t>(pi)];
  Parameter<T>& shift = ctx.net->params[static_cast<std::size_t>(pi + 1)];
  const BatchNormBuffers<T>& buf =
      ctx.net->bn[static_cast<std::size_t>(
          ctx.net->bn_buffer_of_layer[static_cast<std::size_t>(ctx.layer)])];
  const std::int64_t C = d.out_ch;
  const std::int64_t spatial = dy.numel() / (ctx.N * C);
  const std::int64_t M = ctx.N * spatial;

  if (mode == Mode::train) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double inv_std = static_cast<double>(node.bn_inv_std[c]);
      const double gamma = static_cast<double>(scale.value[c]);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* gy = dy.data() + (n * C + c) * spatial;
        const T* xh = node.bn_xhat.data() + (n * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          sum_dy += static_cast<double>(gy[i]);
          sum_dy_xhat += static_cast<double>(gy[i]) * static_cast<double>(xh[i]);
        }
      }
      if (with_param_grads) {
        shift.grad[c] += static_cast<T>(sum_dy);
        scale.grad[c] += static_cast<T>(sum_dy_xhat);
      }
      if (!dxp) continue;
      const double k = gamma * inv_std / static_cast<double>(M);
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* gy = dy.data() + (n * C + c) * spatial;
        const T* xh = node.bn_xhat.data() + (n * C + c) * spatial;
        T* gx = dxp->data() + (n * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i)
          gx[i] += static_cast<T>(
              k * (static_cast<double>(M) * static_cast<double>(gy[i]) -
                   sum_dy - static_cast<double>(xh[i]) * sum_dy_xhat));
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      const double inv_std = static_cast<double>(node.bn_inv_std[c]);
      const double gamma = static_cast<double>(scale.value[c]);
      const double mean = static_cast<double>(buf.running_mean[c]);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t n = 0; n < ctx.N; ++n) {
        const T* gy = dy.data() + (n * C + c) * spatial;
        const T* xs = x.data() + (n * C + c) * spatial;
        T* gx = dxp ? dxp->data() + (n * C + c) * spatial : nullptr;
        for (std::int64_t i = 0; i < spatial; ++i) {
          const double g = static_cast<double>(gy[i]);
          if (with_param_grads) {
            sum_dy += g;
            sum_dy_xhat += g * (static_cast<double>(xs[i]) - mean) * inv_std;
          }
          if (gx) gx[i] += static_cast<T>(g * gamma * inv_std);
        }
      }
      if (with_param_grads) {
        shift.grad[c] += static_cast<T>(sum_dy);
        scale.grad[c] += static_cast<T>(sum_dy_xhat);
      }
    }
  }
}

}  // namespace

template <typename T>
void backward_pass(Network<T>& net, Tape<T>& tape, const TensorT<T>& dlogits,
                   GradMode grad_mode, TensorT<T>* input_grad,
                   bool with_param_grads) {
  if (tape.nodes.empty())
    throw std::runtime_error("backward: tape is empty (no forward recorded)");
  if (tape.consumed)
    throw std::runtime_error("backward: tape already consumed");
  tape.consumed = true;
  if (dlogits.shape() != tape.nodes.back().out.shape())
    throw std::runtime_error("backward: dlogits shape mismatch");

  const std::int64_t N = tape.input.shape()[0];
  std::vector<TensorT<T>> grads(tape.nodes.size());
  grads.back() = dlogits;
  if (input_grad) *input_grad = TensorT<T>(tape.input.shape());

  std::vector<T> col_scratch, dcol_scratch;
  for (int i = static_cast<int>(tape.nodes.size()) - 1; i >= 0; --i) {
    typename Tape<T>::Node& node = tape.nodes[static_cast<std::size_t>(i)];
    TensorT<T>& dy = grads[static_cast<std::size_t>(i)];
    if (dy.numel() == 0) continue;  // output never consumed downstream
    const LayerDesc& d = net.spec.layers[static_cast<std::size_t>(i)];
    const TensorT<T>& src =
        node.input_node < 0
            ? tape.input
            : tape.nodes[static_cast<std::size_t>(node.input_node)].out;

    // Destination gradient buffer for the producer. Null when the producer
    // is the batch input and the caller did not ask for the input gradient.
    TensorT<T>* dx_ptr = nullptr;
    if (node.input_node < 0) {
      dx_ptr = input_grad;  // may be null
    } else {
      TensorT<T>& slot = grads[static_cast<std::size_t>(node.input_node)];
      if (slot.numel() == 0) slot = TensorT<T>(src.shape());
      dx_ptr = &slot;
    }

    LayerCtx<T> ctx{&net, i, &d, N};
    switch (d.kind) {
      case LayerKind::linear:
        backward_linear(ctx, src, dy, dx_ptr, with_param_grads);
        break;
      case LayerKind::conv2d:
        backward_conv(ctx, src, dy, dx_ptr,
                      net.layer_shapes[static_cast<std::size_t>(i)],
                      with_param_grads, col_scratch, dcol_scratch);
        break;
      case LayerKind::relu:
        if (dx_ptr)
          for (std::int64_t j = 0; j < dy.numel(); ++j)
            if (node.out[j] > T{0}) (*dx_ptr)[j] += dy[j];
        break;
      case LayerKind::avg_pool:
        backward_avg_pool(ctx, dy, dx_ptr,
                          net.layer_shapes[static_cast<std::size_t>(i)]);
        break;
      case LayerKind::batch_norm:
        backward_batch_norm(ctx, src, dy, dx_ptr, tape.mode, node,
                            with_param_grads);
        break;
      case LayerKind::add: {
        if (dx_ptr)
          for (std::int64_t j = 0; j < dy.numel(); ++j) (*dx_ptr)[j] += dy[j];
        TensorT<T>& slot2 = grads[static_cast<std::size_t>(node.input2_node)];
        if (slot2.numel() == 0)
          slot2 = TensorT<T>(
              tape.nodes[static_cast<std::size_t>(node.input2_node)].out.shape());
        for (std::int64_t j = 0; j < dy.numel(); ++j) slot2[j] += dy[j];
        break;
      }
      case LayerKind::flatten:
        if (dx_ptr)
          for (std::int64_t j = 0; j < dy.numel(); ++j) (*dx_ptr)[j] += dy[j];
        break;
    }
    // Free this node's gradient buffer early.
    dy = TensorT<T>();
  }

  if (grad_mode == GradMode::masked) {
    for (auto& p : net.params) {
      if (p.mask.empty()) continue;
      for (std::int64_t j = 0; j < p.grad.numel(); ++j)
        if (!p.mask[static_cast<std::size_t>(j)]) p.grad[j] = T{0};
    }
  }
}

template <typename T>
double forward_backward(Network<T>& net, const TensorT<T>& x,
                        const std::vector<std::int32_t>& labels, Mode mode,
                        GradMode grad_mode, TensorT<T>* input_grad,
                        bool with_param_grads) {
  if (with_param_grads) zero_grads(net);
  Tape<T> tape;
  const TensorT<T>& logits = forward_pass(net, x, mode, tape);
  TensorT<T> dlogits;
  const double loss = loss_softmax_ce(logits, labels, &dlogits);
  backward_pass(net, tape, dlogits, grad_mode, input_grad, with_param_grads);
  return loss;
}

// Gradient check ---------------------------------------------------------

template <typename T>
GradCheckReport grad_check(Network<T>& net, const TensorT<T>& x,
                           const std::vector<std::int32_t>& labels,
                           const GradCheckOptions& opts) {
  // Batch-norm running buffers are mutated by train-mode forwards; snapshot
  // them so every loss evaluation sees the same state and the net is
  // restored at exit.
  const std::vector<BatchNormBuffers<T>> bn_snapshot = net.bn;
  auto restore_bn = [&] { net.bn = bn_snapshot; };

  auto loss_at = [&]() {
    restore_bn();
    Tape<T> tape;
    const TensorT<T>& logits = forward_pass(net, x, opts.mode, tape);
    return loss_softmax_ce<T>(logits, labels, nullptr);
  };

  // Analytic gradients in dense mode: masked coordinates are held at exact
  // zero but still have a well-defined derivative, which the checker probes.
  restore_bn();
  zero_grads(net);
  Tape<T> tape;
  const TensorT<T>& logits = forward_pass(net, x, opts.mode, tape);
  TensorT<T> dlogits;
  loss_softmax_ce(logits, labels, &dlogits);
  backward_pass(net, tape, dlogits, GradMode::dense,
                static_cast<TensorT<T>*>(nullptr));

  GradCheckReport report;
  for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
    Parameter<T>& p = net.params[pi];
    const std::int64_t n = p.value.numel();
    const std::int64_t samples =
        std::min<std::int64_t>(n, opts.coords_per_param);
    RandomStream rng(derive_seed(opts.seed, "grad-check-coords", pi));
    for (std::int64_t s = 0; s < samples; ++s) {
      const std::int64_t coord =
          static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      const T saved = p.value[coord];
      const double h = opts.step;
      p.value[coord] = static_cast<T>(static_cast<double>(saved) + h);
      const double up = loss_at();
      p.value[coord] = static_cast<T>(static_cast<double>(saved) - h);
      const double down = loss_at();
      p.value[coord] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic =
          static_cast<double>(p.grad[coord]) * opts.gradient_scale;
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_coord = coord;
      }
    }
  }
  restore_bn();
  report.pass = report.max_rel_error < opts.tolerance;
  return report;
}

template <typename T>
std::vector<std::int32_t> argmax_rows(const TensorT<T>& logits) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("argmax_rows: expected [N, C]");
  const std::int64_t N = logits.shape()[0], C = logits.shape()[1];
  std::vector<std::int32_t> out(static_cast<std::size_t>(N));
  for (std::int64_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * C;
    std::int32_t best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (row[c] > row[best]) best = static_cast<std::int32_t>(c);
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

// Explicit instantiations --------------------------------------------------

#define SPARW_INSTANTIATE(T)                                                   \
  template struct Network<T>;                                                  \
  template Network<T> build_network<T>(const ModelSpec&);                      \
  template void init_params<T>(Network<T>&, std::uint64_t);                    \
  template void apply_masks<T>(Network<T>&);                                   \
  template void zero_grads<T>(Network<T>&);                                    \
  template const TensorT<T>& forward_pass<T>(Network<T>&, const TensorT<T>&,   \
                                             Mode, Tape<T>&);                  \
  template double loss_softmax_ce<T>(const TensorT<T>&,                        \
                                     const std::vector<std::int32_t>&,         \
                                     TensorT<T>*);                             \
  template void backward_pass<T>(Network<T>&, Tape<T>&, const TensorT<T>&,     \
                                 GradMode, TensorT<T>*, bool);                 \
  template double forward_backward<T>(Network<T>&, const TensorT<T>&,          \
                                      const std::vector<std::int32_t>&, Mode,  \
                                      GradMode, TensorT<T>*, bool);            \
  template GradCheckReport grad_check<T>(Network<T>&, const TensorT<T>&,       \
                                         const std::vector<std::int32_t>&,     \
                                         const GradCheckOptions&);             \
  template std::vector<std::int32_t> argmax_rows<T>(const TensorT<T>&);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
