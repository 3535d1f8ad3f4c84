// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/checkpoint.hpp"
#include "sparw/metrics.hpp"
#include "sparw/rng.hpp"
#include "sparw/sparsity.hpp"
#include "sparw/train.hpp"

namespace sparw {

namespace fs = std::filesystem;

namespace {

std::string strf(const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("short write: " + path);
}

// Sparsity over the prunable parameters only (0 for a dense network).
template <typename T>
double net_sparsity(const Network<T>& net) {
  std::int64_t total = 0, active = 0;
  for (const auto& p : net.params) {
    if (!p.prunable) continue;
    total += p.value.numel();
    active += p.active_count();
  }
  return total == 0 ? 0.0 : 1.0 - static_cast<double>(active) / static_cast<double>(total);
}

template <typename T>
std::vector<double> current_densities(const Network<T>& net) {
  std::vector<double> d;
  for (const auto& p : net.params) {
    if (!p.prunable) continue;
    d.push_back(static_cast<double>(p.active_count()) /
                static_cast<double>(p.value.numel()));
  }
  return d;
}

// Saliency mask on one deterministic calibration batch (the first
// batch_size training samples, unaugmented).
template <typename T>
MaskSet snip_mask(Network<T>& net, const Dataset& train,
                  std::int64_t batch_size, double sparsity) {
  const std::int64_t n = std::min<std::int64_t>(batch_size, train.count());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset calib = take(train, idx);
  TensorT<T> x;
  std::vector<std::int32_t> labels;
  to_tensor(calib, x, labels);
  return allocate_snip(net, x, labels, sparsity);
}

// Random-position mask with the budget allocated by name.
template <typename T>
MaskSet static_random_mask(Network<T>& net, const ModelSpec& spec,
                           const Dataset& train, std::int64_t batch_size,
                           const std::string& allocator, double sparsity,
                           std::uint64_t seed) {
  if (allocator == "snip") return snip_mask(net, train, batch_size, sparsity);
  const auto layers = prunable_layers(spec);
  AllocationPlan plan;
  if (allocator == "uniform")
    plan = allocate_uniform(layers, sparsity);
  else if (allocator == "erk")
    plan = allocate_erk(layers, sparsity);
  else if (allocator == "igq")
    plan = allocate_igq(layers, sparsity);
  else
    throw std::runtime_error("unknown allocator: " + allocator);
  return sample_random_mask(plan, layers, derive_seed(seed, "mask"));
}

template <typename T>
std::string run_experiment_t(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&t_start]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  fs::create_directories(cfg.out_dir);
  write_text_file(cfg.out_dir + "/config.txt", render_config(cfg));

  DataSplits data = load_splits(cfg);
  const ModelSpec spec =
      build_model_spec(cfg, data.train.sample_shape, data.train.classes);
  Network<T> net = build_network<T>(spec);
  init_params(net, cfg.seed);
  OptimizerStateT<T> opt = make_optimizer_state(net);

  const TrainConfig& tc = cfg.train;
  const AttackConfig eval_atk = tc.eval_attack;
  const std::int64_t iters_per_epoch =
      (data.train.count() + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t total_iters =
      static_cast<std::int64_t>(tc.epochs) * iters_per_epoch;

  const bool use_fb = cfg.method == Method::flying_bird ||
                      cfg.method == Method::flying_bird_plus;
  FlyingBird<T> fly;
  fly.cfg = cfg.fb;
  fly.total_iters = total_iters;

  std::vector<MetricsRecord> history;
  std::string csv_text = metrics_csv_header() + "\n";
  double cum_flops = 0.0;
  std::int64_t global_iter = 0;
  int best_epoch = -1;
  double best_val_ra = -1.0;
  double wall_base = 0.0;
  int start_epoch = 0;
  bool resumed = false;
  RBResult rb;
  bool has_rb = cfg.method == Method::robust_bird;

  const std::string last_path = cfg.out_dir + "/last.ckpt";
  if (cfg.resume && fs::exists(last_path)) {
    const TrainingSnapshot<T> snap = load_checkpoint<T>(last_path);
    apply_snapshot(snap, net, opt);
    start_epoch = snap.epoch;
    global_iter = snap.global_iter;
    cum_flops = snap.cum_flops;
    best_epoch = snap.best_epoch;
    best_val_ra = snap.best_val_ra;
    wall_base = snap.wall_base_s;
    csv_text = snap.metrics_csv;
    history = parse_metrics_csv(csv_text);
    if (snap.has_fb) {
      fly.total_iters = snap.fb_total_iters;
      fly.updates = snap.fb_updates;
      fly.boost_p = snap.fb_boost_p;
      fly.boost_g = snap.fb_boost_g;
      fly.q_p = snap.fb_q_p;
      fly.q_g = snap.fb_q_g;
    }
    if (use_fb) fly.masks = extract_masks(net);
    resumed = true;
    std::printf("resumed %s at epoch %d (%lld iterations done)\n",
                last_path.c_str(), start_epoch,
                static_cast<long long>(global_iter));
  }

  if (!resumed) {
    switch (cfg.method) {
      case Method::dense_at:
      case Method::small_dense:
        break;
      case Method::random_prune: {
        if (cfg.allocator == "snip")
          throw std::runtime_error(
              "the snip allocator picks positions by saliency; "
              "use method.name = snip");
        install_masks(net, static_random_mask(net, spec, data.train,
                                              tc.batch_size, cfg.allocator,
                                              cfg.sparsity, cfg.seed));
        break;
      }
      case Method::igq_static:
        install_masks(net,
                      static_random_mask(net, spec, data.train, tc.batch_size,
                                         "igq", cfg.sparsity, cfg.seed));
        break;
      case Method::snip:
        install_masks(net,
                      snip_mask(net, data.train, tc.batch_size, cfg.sparsity));
        break;
      case Method::omp: {
        // Dense adversarial pretraining, one-shot global magnitude pruning,
        // rewind to the initial weights.
        std::vector<TensorT<T>> theta0;
        theta0.reserve(net.params.size());
        for (const auto& p : net.params) theta0.push_back(p.value);
        const std::vector<BatchNormBuffers<T>> bn0 = net.bn;
        std::int64_t it = 0;
        const auto lr_fn = [&](std::int64_t iter) {
          if (tc.schedule == LrScheduleKind::cyclic)
            return lr_cyclic(tc.cyclic_max_lr, iter, total_iters);
          return lr_multistep(tc.lr0, tc.milestones, tc.lr_decay,
                              static_cast<int>(iter / iters_per_epoch));
        };
        for (int e = 0; e < tc.epochs; ++e) {
          const EpochStats st = train_epoch(net, opt, data.train, tc,
                                            tc.adversarial, tc.train_attack, e,
                                            lr_fn, it);
          cum_flops += st.flops;
          std::printf("prune-search epoch %3d  loss %.4f  acc %.4f\n", e,
                      st.loss, st.accuracy);
          std::fflush(stdout);
        }
        const MaskSet masks = global_magnitude_mask(net, cfg.sparsity);
        for (std::size_t i = 0; i < net.params.size(); ++i)
          net.params[i].value = theta0[i];
        net.bn = bn0;
        install_masks(net, masks);
        opt = make_optimizer_state(net);
        break;
      }
      case Method::robust_bird: {
        rb = find_robust_bird(net, data.train, cfg.rb, tc);
        cum_flops += rb.search_flops;
        opt = make_optimizer_state(net);
        std::string txt;
        txt += strf("converged = %d\n", rb.converged ? 1 : 0);
        txt += strf("epochs = %d\n", rb.epochs_trained);
        for (std::size_t i = 0; i < rb.distances.size(); ++i)
          txt += strf("distance[%zu] = %.10g\n", i, rb.distances[i]);
        write_text_file(cfg.out_dir + "/ticket_search.txt", txt);
        std::printf("ticket drawn after %d epochs (converged=%d)\n",
                    rb.epochs_trained, rb.converged ? 1 : 0);
        std::fflush(stdout);
        break;
      }
      case Method::flying_bird:
      case Method::flying_bird_plus: {
        MaskSet masks =
            static_random_mask(net, spec, data.train, tc.batch_size,
                               cfg.fb.allocator, cfg.sparsity, cfg.seed);
        install_masks(net, masks);
        fly.masks = std::move(masks);
        break;
      }
    }
  }

  IterationHooks hooks;
  if (use_fb) {
    hooks.wants_dense_grads = [&fly](std::int64_t it) {
      return fly.is_update_iter(it);
    };
    hooks.after_step = [&fly, &net, &opt](std::int64_t it) {
      if (fly.is_update_iter(it)) fly.apply_update(net, opt, it);
    };
  }

  const auto lr_fn = [&](std::int64_t iter) {
    if (tc.schedule == LrScheduleKind::cyclic)
      return lr_cyclic(tc.cyclic_max_lr, iter, total_iters);
    return lr_multistep(tc.lr0, tc.milestones, tc.lr_decay,
                        static_cast<int>(iter / iters_per_epoch));
  };

  const auto snapshot_now = [&](int epochs_done) {
    TrainingSnapshot<T> s = capture_snapshot(net, opt);
    s.epoch = epochs_done;
    s.global_iter = global_iter;
    s.cum_flops = cum_flops;
    s.best_epoch = best_epoch;
    s.best_val_ra = best_val_ra;
    s.wall_base_s = wall_base + elapsed();
    s.metrics_csv = csv_text;
    if (use_fb) {
      s.has_fb = true;
      s.fb_total_iters = fly.total_iters;
      s.fb_updates = fly.updates;
      s.fb_boost_p = fly.boost_p;
      s.fb_boost_g = fly.boost_g;
      s.fb_q_p = fly.q_p;
      s.fb_q_g = fly.q_g;
    }
    return s;
  };

  write_text_file(cfg.out_dir + "/metrics.csv", csv_text);

  for (int e = start_epoch; e < tc.epochs; ++e) {
    const double lr_now = lr_fn(global_iter);
    const EpochStats st =
        train_epoch(net, opt, data.train, tc, tc.adversarial, tc.train_attack,
                    e, lr_fn, global_iter, hooks);
    cum_flops += st.flops;

    const EvalResult ev_train = evaluate_accuracy(
        net, data.train_probe, &eval_atk, derive_seed(cfg.seed, "eval-train", e));
    EvalResult ev_val = evaluate_accuracy(net, data.val, &eval_atk,
                                          derive_seed(cfg.seed, "eval-val", e));
    const EvalResult ev_test = evaluate_accuracy(
        net, data.test, &eval_atk, derive_seed(cfg.seed, "eval-test", e));
    const EvalResult ev_sa = evaluate_accuracy(
        net, data.test, nullptr, derive_seed(cfg.seed, "eval-sa", e));

    // Adaptation statistics never touch the test split: the robust
    // generalization signal pairs the train probe with the validation set.
    if (use_fb)
      fly.end_epoch(ev_train.accuracy - ev_val.accuracy, ev_val.loss, e + 1);

    MetricsRecord r;
    r.epoch = e;
    r.lr = lr_now;
    r.train_ra = ev_train.accuracy;
    r.val_ra = ev_val.accuracy;
    r.test_ra = ev_test.accuracy;
    r.test_sa = ev_sa.accuracy;
    r.val_robust_loss = ev_val.loss;
    r.sparsity = net_sparsity(net);
    r.active_params = net.active_params();
    r.cum_train_flops = cum_flops;
    r.wall_time_s = cfg.wall_time ? wall_base + elapsed() : 0.0;
    history.push_back(r);
    csv_text += metrics_csv_row(r) + "\n";
    write_text_file(cfg.out_dir + "/metrics.csv", csv_text);

    if (r.val_ra > best_val_ra) {
      best_val_ra = r.val_ra;
      best_epoch = e;
      save_checkpoint(cfg.out_dir + "/best.ckpt", snapshot_now(e + 1));
    }
    save_checkpoint(last_path, snapshot_now(e + 1));

    std::printf(
        "epoch %3d  lr %.4g  train_ra %.4f  val_ra %.4f  test_ra %.4f  "
        "test_sa %.4f  sparsity %.4f  flops %.4g\n",
        e, lr_now, r.train_ra, r.val_ra, r.test_ra, r.test_sa, r.sparsity,
        cum_flops);
    std::fflush(stdout);

    if (cfg.stop_after_epochs > 0 && e + 1 >= cfg.stop_after_epochs) {
      std::printf("stopping after %d epochs (train.stop_after_epochs); "
                  "resume with resume = on\n",
                  e + 1);
      break;
    }
  }

  MetricsRecord best_row, final_row;
  double diff_ra = 0.0;
  if (!history.empty()) {
    const CheckpointSelection sel = select_checkpoints(history);
    best_row = history[static_cast<std::size_t>(sel.best_index)];
    final_row = history[static_cast<std::size_t>(sel.final_index)];
    diff_ra = sel.diff;
  } else {
    // Zero-epoch run: report initialization-time metrics.
    MetricsRecord r;
    r.epoch = -1;
    r.train_ra = evaluate_accuracy(net, data.train_probe, &eval_atk,
                                   derive_seed(cfg.seed, "eval-train", 0))
                     .accuracy;
    const EvalResult ev_val = evaluate_accuracy(
        net, data.val, &eval_atk, derive_seed(cfg.seed, "eval-val", 0));
    r.val_ra = ev_val.accuracy;
    r.val_robust_loss = ev_val.loss;
    r.test_ra = evaluate_accuracy(net, data.test, &eval_atk,
                                  derive_seed(cfg.seed, "eval-test", 0))
                    .accuracy;
    r.test_sa =
        evaluate_accuracy(net, data.test, nullptr,
                          derive_seed(cfg.seed, "eval-sa", 0))
            .accuracy;
    r.sparsity = net_sparsity(net);
    r.active_params = net.active_params();
    best_row = final_row = r;
    best_epoch = -1;
    if (!fs::exists(cfg.out_dir + "/best.ckpt"))
      save_checkpoint(cfg.out_dir + "/best.ckpt", snapshot_now(0));
  }

  save_checkpoint(cfg.out_dir + "/final.ckpt", snapshot_now(tc.epochs));
  if (!fs::exists(last_path)) save_checkpoint(last_path, snapshot_now(0));

  const double dense_fwd = forward_flops_dense(spec);
  const double sparse_fwd = forward_flops_sparse(spec, current_densities(net));

  std::string sm;
  const auto add = [&sm](const std::string& k, const std::string& v) {
    sm += k + " = " + v + "\n";
  };
  add("method", to_string(cfg.method));
  add("model", spec.name);
  add("precision", cfg.precision);
  add("seed", std::to_string(cfg.seed));
  add("epochs", std::to_string(tc.epochs));
  add("final_sparsity", strf("%.6f", net_sparsity(net)));
  add("active_params", std::to_string(net.active_params()));
  add("total_params", std::to_string(net.total_params()));
  add("best_epoch", std::to_string(best_row.epoch));
  add("best_val_ra_pct", strf("%.2f", 100.0 * best_row.val_ra));
  add("best_test_ra_pct", strf("%.2f", 100.0 * best_row.test_ra));
  add("best_test_sa_pct", strf("%.2f", 100.0 * best_row.test_sa));
  add("final_test_ra_pct", strf("%.2f", 100.0 * final_row.test_ra));
  add("final_test_sa_pct", strf("%.2f", 100.0 * final_row.test_sa));
  add("diff_test_ra_pct", strf("%.2f", 100.0 * diff_ra));
  add("rgg_best_pct",
      strf("%.2f", 100.0 * robust_generalization_gap(best_row.train_ra,
                                                     best_row.test_ra)));
  add("rgg_final_pct",
      strf("%.2f", 100.0 * robust_generalization_gap(final_row.train_ra,
                                                     final_row.test_ra)));
  add("train_flops", strf("%.10g", cum_flops));
  add("inference_flops_dense", strf("%.10g", dense_fwd));
  add("inference_flops_sparse", strf("%.10g", sparse_fwd));
  add("wall_time_s", strf("%.3f", wall_base + elapsed()));
  if (has_rb) {
    add("ticket_search_epochs", std::to_string(rb.epochs_trained));
    add("ticket_converged", rb.converged ? "1" : "0");
  }
  if (use_fb) add("topology_updates", std::to_string(fly.updates));
  write_text_file(cfg.out_dir + "/summary.txt", sm);

  if (cfg.loss_surface_n > 0) {
    const std::int64_t n =
        std::min<std::int64_t>(cfg.loss_surface_samples, data.test.count());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const Dataset batch = take(data.test, idx);
    TensorT<T> x;
    std::vector<std::int32_t> labels;
    to_tensor(batch, x, labels);
    const LossSurface s =
        loss_surface_grid(net, x, labels, cfg.loss_surface_n,
                          cfg.loss_surface_radius, &eval_atk, cfg.seed);
    write_text_file(cfg.out_dir + "/loss_surface.tsv", loss_surface_tsv(s));
  }

  return sm;
}

}  // namespace

DataSplits load_splits(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset train_all, test;
  if (d.name == "cifar10" || d.name == "cifar100") {
    std::string dir = d.path;
    if (dir.empty() && d.name == "cifar10") {
      if (const char* env = std::getenv("SPARW_CIFAR10_DIR")) dir = env;
    }
    if (dir.empty())
      throw std::runtime_error(
          "no dataset directory: set data.path"
          " (or SPARW_CIFAR10_DIR for cifar10)");
    if (d.name == "cifar10") {
      auto pair = load_cifar10_dir(dir);
      train_all = std::move(pair.first);
      test = std::move(pair.second);
    } else {
      train_all = load_cifar100_files({dir + "/train.bin"});
      test = load_cifar100_files({dir + "/test.bin"});
    }
  } else if (d.name == "idx") {
    if (d.path.empty())
      throw std::runtime_error("data.path required for idx data");
    train_all = load_idx(d.path + "/train-images-idx3-ubyte",
                         d.path + "/train-labels-idx1-ubyte");
    test = load_idx(d.path + "/t10k-images-idx3-ubyte",
                    d.path + "/t10k-labels-idx1-ubyte");
  } else if (d.name == "blobs") {
    Shape dims(d.blob_dims.begin(), d.blob_dims.end());
    const Dataset all = synthetic_blobs(d.blob_classes, d.blob_per_class, dims,
                                        derive_seed(cfg.seed, "data"));
    // Hold out one sixth as the test set.
    const std::int64_t test_count =
        std::max<std::int64_t>(1, all.count() / 6);
    auto pair =
        split_train_val(all, test_count, derive_seed(cfg.seed, "data-split"));
    train_all = std::move(pair.first);
    test = std::move(pair.second);
  } else {
    throw std::runtime_error("unknown data.name: " + d.name);
  }

  std::int64_t val_count = d.val_count;
  if (val_count <= 0)
    val_count = std::max<std::int64_t>(1, train_all.count() / 10);
  if (val_count >= train_all.count())
    throw std::runtime_error("data.val_count leaves no training data");
  auto split = split_train_val(train_all, val_count,
                               derive_seed(cfg.seed, "split"));

  DataSplits s;
  s.val = std::move(split.second);
  s.train = d.train_subset > 0
                ? shuffled_subset(split.first,
                                  std::min(d.train_subset, split.first.count()),
                                  derive_seed(cfg.seed, "train-subset"))
                : std::move(split.first);
  s.test = d.test_subset > 0
               ? shuffled_subset(test, std::min(d.test_subset, test.count()),
                                 derive_seed(cfg.seed, "test-subset"))
               : std::move(test);
  const std::int64_t probe_count =
      d.train_ra_subset > 0 ? std::min(d.train_ra_subset, s.train.count())
                            : s.train.count();
  s.train_probe =
      shuffled_subset(s.train, probe_count, derive_seed(cfg.seed, "train-probe"));
  return s;
}

ModelSpec build_model_spec(const ExperimentConfig& cfg,
                           const Shape& input_shape, std::int64_t classes) {
  Shape in = input_shape;
  if (cfg.model_preset == "mlp") in = {shape_numel(input_shape)};
  const std::vector<std::int64_t> widths(cfg.model_widths.begin(),
                                         cfg.model_widths.end());
  ModelSpec spec = make_preset(cfg.model_preset, in, classes, widths);
  if (cfg.width_scale != 1.0) spec = rescale_widths(spec, cfg.width_scale);
  if (cfg.method == Method::small_dense)
    spec = scale_width_to_params(spec, 1.0 - cfg.sparsity);
  return spec;
}

std::string run_experiment(const ExperimentConfig& cfg) {
  if (cfg.precision == "f64") return run_experiment_t<double>(cfg);
  return run_experiment_t<float>(cfg);
}

}  // namespace sparw
