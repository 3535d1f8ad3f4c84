// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "sparw/rng.hpp"

namespace sparw {

namespace {
constexpr std::int64_t kEvalChunk = 256;

std::string format(const char* fmt, ...) {
  char buf[64];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "epoch,lr,train_ra,val_ra,test_ra,test_sa,val_robust_loss,sparsity,"
         "active_params,cum_train_flops,wall_time_s";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string row;
  row += format("%d", r.epoch);
  row += format(",%.10g", r.lr);
  row += format(",%.6f", r.train_ra);
  row += format(",%.6f", r.val_ra);
  row += format(",%.6f", r.test_ra);
  row += format(",%.6f", r.test_sa);
  row += format(",%.10g", r.val_robust_loss);
  row += format(",%.6f", r.sparsity);
  row += format(",%lld", static_cast<long long>(r.active_params));
  row += format(",%.10g", r.cum_train_flops);
  row += format(",%.3f", r.wall_time_s);
  return row;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header())
    throw std::runtime_error("metrics.csv: unexpected header");
  std::vector<MetricsRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    MetricsRecord r;
    long long active = 0;
    if (!(ls >> r.epoch >> r.lr >> r.train_ra >> r.val_ra >> r.test_ra >>
          r.test_sa >> r.val_robust_loss >> r.sparsity >> active >>
          r.cum_train_flops >> r.wall_time_s))
      throw std::runtime_error("metrics.csv: malformed row: " + line);
    r.active_params = active;
    rows.push_back(r);
  }
  return rows;
}

// Evaluation -------------------------------------------------------------

template <typename T>
EvalResult evaluate_accuracy(Network<T>& net, const Dataset& ds,
                             const AttackConfig* attack, std::uint64_t seed) {
  validate(ds);
  const std::int64_t n = ds.count();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  AugmentConfig no_aug;
  RandomStream unused_rng(0);
  TensorT<T> x;
  std::vector<std::int32_t> labels;
  Tape<T> tape;
  std::int64_t correct = 0;
  double loss_sum = 0.0;
  for (std::int64_t begin = 0, chunk = 0; begin < n;
       begin += kEvalChunk, ++chunk) {
    const std::int64_t end = std::min(begin + kEvalChunk, n);
    fill_batch(ds, order, static_cast<std::size_t>(begin),
               static_cast<std::size_t>(end), no_aug, unused_rng, x, labels);
    if (attack) {
      const auto delta =
          pgd_attack(net, x, labels, *attack,
                     derive_seed(seed, "attack-eval",
                                 static_cast<std::uint64_t>(chunk)));
      for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += delta[i];
    }
    forward_pass(net, x, Mode::eval, tape);
    const auto pred = argmax_rows(tape.logits());
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
    loss_sum += loss_softmax_ce(tape.logits(), labels) *
                static_cast<double>(end - begin);
  }
  EvalResult result;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  result.loss = loss_sum / static_cast<double>(n);
  return result;
}

double robust_generalization_gap(double train_ra, double test_ra) {
  return train_ra - test_ra;
}

CheckpointSelection select_checkpoints(const std::vector<MetricsRecord>& h) {
  if (h.empty()) throw std::invalid_argument("select_checkpoints: empty history");
  CheckpointSelection sel;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i].val_ra > h[static_cast<std::size_t>(sel.best_index)].val_ra)
      sel.best_index = static_cast<int>(i);
  sel.final_index = static_cast<int>(h.size() - 1);
  sel.diff = h[static_cast<std::size_t>(sel.best_index)].test_ra -
             h[static_cast<std::size_t>(sel.final_index)].test_ra;
  return sel;
}

// FLOPs ----------------------------------------------------------------------

double standard_iteration_flops(double forward_flops) {
  return 3.0 * forward_flops;
}

double adversarial_iteration_flops(double forward_flops, int attack_steps) {
  return 3.0 * forward_flops * static_cast<double>(attack_steps + 1);
}

// Transfer attacks -----------------------------------------------------------

template <typename T>
EvalResult transfer_eval(Network<T>& source, Network<T>& target,
                         const Dataset& ds, const AttackConfig& attack,
                         std::uint64_t seed) {
  if (source.spec.input_shape != target.spec.input_shape ||
      source.spec.classes != target.spec.classes)
    throw std::invalid_argument(
        "transfer_eval: source/target input or class shape mismatch");
  validate(ds);
  const std::int64_t n = ds.count();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  AugmentConfig no_aug;
  RandomStream unused_rng(0);
  TensorT<T> x;
  std::vector<std::int32_t> labels;
  Tape<T> tape;
  std::int64_t correct = 0;
  double loss_sum = 0.0;
  for (std::int64_t begin = 0, chunk = 0; begin < n;
       begin += kEvalChunk, ++chunk) {
    const std::int64_t end = std::min(begin + kEvalChunk, n);
    fill_batch(ds, order, static_cast<std::size_t>(begin),
               static_cast<std::size_t>(end), no_aug, unused_rng, x, labels);
    const auto delta =
        pgd_attack(source, x, labels, attack,
                   derive_seed(seed, "attack-eval",
                               static_cast<std::uint64_t>(chunk)));
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += delta[i];
    forward_pass(target, x, Mode::eval, tape);
    const auto pred = argmax_rows(tape.logits());
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
    loss_sum += loss_softmax_ce(tape.logits(), labels) *
                static_cast<double>(end - begin);
  }
  EvalResult result;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  result.loss = loss_sum / static_cast<double>(n);
  return result;
}

// Loss surface -----------------------------------------------------------------

namespace {

// Seeded Gaussian direction over the weight tensors, zero at masked
// positions and at non-prunable parameters, scaled per output unit to the
// unit's weight norm.
template <typename T>
std::vector<TensorT<T>> make_direction(const Network<T>& net,
                                       std::uint64_t seed) {
  std::vector<TensorT<T>> dir;
  dir.reserve(net.params.size());
  for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
    const auto& p = net.params[pi];
    TensorT<T> d(p.value.shape());
    if (p.prunable) {
      RandomStream rng(derive_seed(seed, "direction", pi));
      for (std::int64_t i = 0; i < d.numel(); ++i)
        d[i] = static_cast<T>(rng.normal());
      if (!p.mask.empty())
        for (std::int64_t i = 0; i < d.numel(); ++i)
          if (!p.mask[static_cast<std::size_t>(i)]) d[i] = T{0};
      const std::int64_t units = p.value.shape()[0];
      const std::int64_t per_unit = d.numel() / units;
      for (std::int64_t u = 0; u < units; ++u) {
        double wn = 0.0, dn = 0.0;
        for (std::int64_t i = u * per_unit; i < (u + 1) * per_unit; ++i) {
          wn += static_cast<double>(p.value[i]) * static_cast<double>(p.value[i]);
          dn += static_cast<double>(d[i]) * static_cast<double>(d[i]);
        }
        const double scale = dn > 0.0 ? std::sqrt(wn / dn) : 0.0;
        for (std::int64_t i = u * per_unit; i < (u + 1) * per_unit; ++i)
          d[i] = static_cast<T>(static_cast<double>(d[i]) * scale);
      }
    }
    dir.push_back(std::move(d));
  }
  return dir;
}

}  // namespace

template <typename T>
LossSurface loss_surface_grid(Network<T>& net, const TensorT<T>& x,
                              const std::vector<std::int32_t>& labels, int n,
                              double radius, const AttackConfig* attack,
                              std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("loss_surface_grid: n < 1");
  if (!(radius > 0.0))
    throw std::invalid_argument("loss_surface_grid: radius <= 0");

  auto d1 = make_direction(net, derive_seed(seed, "surface", 1));
  auto d2 = make_direction(net, derive_seed(seed, "surface", 2));
  // Orthogonalize d2 against d1 over the concatenation of all tensors.
  double dot = 0.0, norm1 = 0.0;
  for (std::size_t pi = 0; pi < d1.size(); ++pi)
    for (std::int64_t i = 0; i < d1[pi].numel(); ++i) {
      dot += static_cast<double>(d1[pi][i]) * static_cast<double>(d2[pi][i]);
      norm1 += static_cast<double>(d1[pi][i]) * static_cast<double>(d1[pi][i]);
    }
  if (norm1 > 0.0) {
    const double proj = dot / norm1;
    for (std::size_t pi = 0; pi < d2.size(); ++pi)
      for (std::int64_t i = 0; i < d2[pi].numel(); ++i)
        d2[pi][i] -= static_cast<T>(proj * static_cast<double>(d1[pi][i]));
  }

  std::vector<TensorT<T>> theta;
  theta.reserve(net.params.size());
  for (const auto& p : net.params) theta.push_back(p.value);

  LossSurface surf;
  surf.n = n;
  surf.radius = radius;
  if (n == 1) {
    surf.coords = {0.0};
  } else {
    for (int i = 0; i < n; ++i)
      surf.coords.push_back(-radius +
                            2.0 * radius * static_cast<double>(i) /
                                static_cast<double>(n - 1));
  }
  surf.loss.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));

  TensorT<T> x_adv(x.shape());
  Tape<T> tape;
  for (int ia = 0; ia < n; ++ia) {
    for (int ib = 0; ib < n; ++ib) {
      const T a = static_cast<T>(surf.coords[static_cast<std::size_t>(ia)]);
      const T b = static_cast<T>(surf.coords[static_cast<std::size_t>(ib)]);
      for (std::size_t pi = 0; pi < net.params.size(); ++pi) {
        auto& v = net.params[pi].value;
        for (std::int64_t i = 0; i < v.numel(); ++i)
          v[i] = theta[pi][i] + a * d1[pi][i] + b * d2[pi][i];
      }
      for (std::int64_t i = 0; i < x.numel(); ++i) x_adv[i] = x[i];
      if (attack) {
        const auto delta = pgd_attack(
            net, x, labels, *attack,
            derive_seed(seed, "surface-attack", static_cast<std::uint64_t>(ia),
                        static_cast<std::uint64_t>(ib)));
        for (std::int64_t i = 0; i < x.numel(); ++i) x_adv[i] += delta[i];
      }
      forward_pass(net, x_adv, Mode::eval, tape);
      surf.loss[static_cast<std::size_t>(ia) * static_cast<std::size_t>(n) +
                static_cast<std::size_t>(ib)] =
          loss_softmax_ce(tape.logits(), labels);
    }
  }
  for (std::size_t pi = 0; pi < net.params.size(); ++pi)
    net.params[pi].value = theta[pi];
  return surf;
}

std::string loss_surface_tsv(const LossSurface& s) {
  std::string out = "a\tb\tloss\n";
  for (int ia = 0; ia < s.n; ++ia)
    for (int ib = 0; ib < s.n; ++ib) {
      out += format("%.10g", s.coords[static_cast<std::size_t>(ia)]);
      out += format("\t%.10g", s.coords[static_cast<std::size_t>(ib)]);
      out += format("\t%.10g\n",
                    s.loss[static_cast<std::size_t>(ia) *
                               static_cast<std::size_t>(s.n) +
                           static_cast<std::size_t>(ib)]);
    }
  return out;
}

#define SPARW_INSTANTIATE(T)                                                   \
  template EvalResult evaluate_accuracy<T>(Network<T>&, const Dataset&,        \
                                           const AttackConfig*,               \
                                           std::uint64_t);                    \
  template EvalResult transfer_eval<T>(Network<T>&, Network<T>&,              \
                                       const Dataset&, const AttackConfig&,   \
                                       std::uint64_t);                        \
  template LossSurface loss_surface_grid<T>(Network<T>&, const TensorT<T>&,   \
                                            const std::vector<std::int32_t>&, \
                                            int, double, const AttackConfig*, \
                                            std::uint64_t);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
