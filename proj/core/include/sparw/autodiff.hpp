// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over the small layer vocabulary the experiments
// need (linear, conv2d, relu, average pool, batch norm, residual add,
// flatten). A forward pass records one tape node per executed layer; the
// backward pass replays the tape in reverse topological order exactly once,
// accumulating parameter gradients and, on request, the input gradient
// (needed by gradient-based attacks).
//
// Masking semantics: a parameter may carry an element mask. Masked-out
// weights are held at exactly zero, so the forward pass of a masked network
// is bit-for-bit the forward pass of a dense network whose weights are zero
// at those positions. Backward runs in one of two gradient modes: `masked`
// zeroes gradients at masked positions (training), `dense` reports full
// gradients (used to score inactive weights for growth).

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparw/model.hpp"
#include "sparw/tensor.hpp"

namespace sparw {

enum class Mode : std::uint8_t { train, eval };
enum class GradMode : std::uint8_t { masked, dense };

template <typename T>
struct Parameter {
  std::string name;
  int layer = 0;
  bool prunable = false;
  TensorT<T> value;
  TensorT<T> grad;                 // same shape; zeroed by zero_grads
  std::vector<std::uint8_t> mask;  // empty = dense; else one byte per element

  std::int64_t active_count() const {
    if (mask.empty()) return value.numel();
    std::int64_t n = 0;
    for (auto b : mask) n += b ? 1 : 0;
    return n;
  }
};

template <typename T>
struct BatchNormBuffers {
  TensorT<T> running_mean;
  TensorT<T> running_var;
};

template <typename T>
struct Network {
  ModelSpec spec;
  std::vector<Shape> layer_shapes;        // per-layer output shape (no batch)
  std::vector<Parameter<T>> params;
  std::vector<int> bn_buffer_of_layer;    // layer -> index into bn, or -1
  std::vector<BatchNormBuffers<T>> bn;
  // First parameter index of each layer (weight), or -1.
  std::vector<int> first_param_of_layer;

  Parameter<T>& param(const std::string& name);
  const Parameter<T>& param(const std::string& name) const;
  std::int64_t total_params() const;
  std::int64_t active_params() const;  // total minus masked-out elements
};

// Builds a network with zeroed parameters and fresh batch-norm buffers
// (running mean 0, running var 1).
template <typename T>
Network<T> build_network(const ModelSpec& spec);

// He/Kaiming normal init (gain sqrt(2)) for conv/linear weights, zero
// biases, batch-norm scale 1 / shift 0. Deterministic in the seed: same
// (spec, seed) gives bit-identical parameters.
template <typename T>
void init_params(Network<T>& net, std::uint64_t seed);

// Re-zeroes masked-out weight elements (no-op for dense parameters).
template <typename T>
void apply_masks(Network<T>& net);

template <typename T>
void zero_grads(Network<T>& net);

// Tape -----------------------------------------------------------------

template <typename T>
struct Tape {
  struct Node {
    int layer = 0;               // index into spec.layers
    int input_node = -1;         // producing node (-1 = the batch input)
    int input2_node = -1;        // second producer for add
    TensorT<T> out;              // layer output [N, ...]
    // Batch-norm caches (train mode): normalized input and 1/sqrt(var+eps);
    // eval mode caches only the frozen inv-std.
    TensorT<T> bn_xhat;
    TensorT<T> bn_inv_std;
  };
  TensorT<T> input;              // copy of the batch input [N, ...]
  Mode mode = Mode::train;
  std::vector<Node> nodes;
  bool consumed = false;

  const TensorT<T>& logits() const { return nodes.back().out; }
};

// Runs the model on a batch (leading dimension N), records the tape, and
// returns the logits [N, classes]. In train mode batch-norm uses batch
// statistics and updates running buffers (momentum 0.1); in eval mode it
// uses the frozen running statistics. Throws std::runtime_error if any
// intermediate value is non-finite or the batch shape mismatches the spec.
template <typename T>
const TensorT<T>& forward_pass(Network<T>& net, const TensorT<T>& x, Mode mode,
                               Tape<T>& tape);

// Mean softmax cross-entropy over the batch. If dlogits is non-null it
// receives d(loss)/d(logits) (already divided by the batch size).
template <typename T>
double loss_softmax_ce(const TensorT<T>& logits,
                       const std::vector<std::int32_t>& labels,
                       TensorT<T>* dlogits = nullptr);

// Replays the tape backward once, accumulating parameter gradients
// according to grad_mode. If input_grad is non-null it receives the
// gradient w.r.t. the batch input. with_param_grads=false skips parameter
// gradient accumulation entirely (input-gradient-only consumers such as
// attacks). A tape can only be consumed once; a second call throws
// std::runtime_error.
template <typename T>
void backward_pass(Network<T>& net, Tape<T>& tape, const TensorT<T>& dlogits,
                   GradMode grad_mode, TensorT<T>* input_grad = nullptr,
                   bool with_param_grads = true);

// Convenience: forward + loss + backward on (x, labels); returns the loss.
template <typename T>
double forward_backward(Network<T>& net, const TensorT<T>& x,
                        const std::vector<std::int32_t>& labels, Mode mode,
                        GradMode grad_mode, TensorT<T>* input_grad = nullptr,
                        bool with_param_grads = true);

// Gradient checking ------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;            // central-difference step
  double tolerance = 1e-4;       // max relative error allowed
  int coords_per_param = 8;      // sampled coordinates per parameter tensor
  std::uint64_t seed = 1;        // coordinate sampling stream
  Mode mode = Mode::train;
  // Fault-injection hook for validating the checker itself: analytic
  // gradients are multiplied by this factor before comparison.
  double gradient_scale = 1.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_coord = -1;
  bool pass = false;
};

// Compares analytic gradients of the mean CE loss against central
// differences over a random coordinate sample of every parameter.
template <typename T>
GradCheckReport grad_check(Network<T>& net, const TensorT<T>& x,
                           const std::vector<std::int32_t>& labels,
                           const GradCheckOptions& opts = {});

// Row-wise argmax of logits [N, C].
template <typename T>
std::vector<std::int32_t> argmax_rows(const TensorT<T>& logits);

}  // namespace sparw
