// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / find-rb / eval / transfer-eval /
// loss-surface / flops / gen-data, all driven by the same key=value config
// files with --set overrides.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparw/attack.hpp"
#include "sparw/autodiff.hpp"
#include "sparw/checkpoint.hpp"
#include "sparw/config.hpp"
#include "sparw/data.hpp"
#include "sparw/experiment.hpp"
#include "sparw/metrics.hpp"
#include "sparw/model.hpp"
#include "sparw/rng.hpp"
#include "sparw/sparsity.hpp"
#include "sparw/train.hpp"

namespace fs = std::filesystem;
using namespace sparw;

namespace {

struct CommonArgs {
  std::string config;
  std::string seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "key=value config file");
  cmd->add_option("--seed", a.seed, "override the global seed");
  cmd->add_option("--out", a.out, "override the output directory");
  cmd->add_option("--set", a.sets, "override a config key (key=value)")
      ->take_all();
}

ExperimentConfig load_config(const CommonArgs& a) {
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::parse_file(a.config);
  for (const auto& s : a.sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.seed.empty()) kv.set("seed", a.seed);
  if (!a.out.empty()) kv.set("out.dir", a.out);
  return experiment_config_from(kv);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("short write: " + path);
}

// Builds the configured network and loads checkpoint state into it.
template <typename T>
Network<T> network_from_checkpoint(const ExperimentConfig& cfg,
                                   const Shape& input_shape,
                                   std::int64_t classes,
                                   const std::string& ckpt_path) {
  const ModelSpec spec = build_model_spec(cfg, input_shape, classes);
  Network<T> net = build_network<T>(spec);
  OptimizerStateT<T> opt = make_optimizer_state(net);
  const TrainingSnapshot<T> snap = load_checkpoint<T>(ckpt_path);
  apply_snapshot(snap, net, opt);
  return net;
}

// find-rb: run only the ticket search, then persist the rewound sparse
// network and the distance trace.
template <typename T>
int do_find_rb(const ExperimentConfig& cfg) {
  const DataSplits data = load_splits(cfg);
  const ModelSpec spec =
      build_model_spec(cfg, data.train.sample_shape, data.train.classes);
  Network<T> net = build_network<T>(spec);
  init_params(net, cfg.seed);
  const RBResult rb = find_robust_bird(net, data.train, cfg.rb, cfg.train);
  const OptimizerStateT<T> opt = make_optimizer_state(net);

  fs::create_directories(cfg.out_dir);
  std::string txt;
  txt += "converged = " + std::to_string(rb.converged ? 1 : 0) + "\n";
  txt += "epochs = " + std::to_string(rb.epochs_trained) + "\n";
  char buf[64];
  for (std::size_t i = 0; i < rb.distances.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "distance[%zu] = %.10g\n", i,
                  rb.distances[i]);
    txt += buf;
  }
  std::snprintf(buf, sizeof(buf), "search_flops = %.10g\n", rb.search_flops);
  txt += buf;
  write_text_file(cfg.out_dir + "/ticket_search.txt", txt);

  TrainingSnapshot<T> snap = capture_snapshot(net, opt);
  snap.metrics_csv = metrics_csv_header() + "\n";
  save_checkpoint(cfg.out_dir + "/ticket.ckpt", snap);

  std::fputs(txt.c_str(), stdout);
  std::printf("wrote %s/ticket.ckpt\n", cfg.out_dir.c_str());
  return 0;
}

template <typename T>
int do_eval(const ExperimentConfig& cfg, const std::string& ckpt) {
  const DataSplits data = load_splits(cfg);
  Network<T> net = network_from_checkpoint<T>(
      cfg, data.train.sample_shape, data.train.classes, ckpt);
  const AttackConfig atk = cfg.train.eval_attack;
  const EvalResult ra =
      evaluate_accuracy(net, data.test, &atk, derive_seed(cfg.seed, "eval-cli"));
  const EvalResult sa = evaluate_accuracy(net, data.test, nullptr, 0);

  std::string txt;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "test_count = %lld\n",
                static_cast<long long>(data.test.count()));
  txt += buf;
  std::snprintf(buf, sizeof(buf), "test_ra = %.6f\n", ra.accuracy);
  txt += buf;
  std::snprintf(buf, sizeof(buf), "test_sa = %.6f\n", sa.accuracy);
  txt += buf;
  std::snprintf(buf, sizeof(buf), "test_ra_pct = %.2f\n", 100.0 * ra.accuracy);
  txt += buf;
  std::snprintf(buf, sizeof(buf), "test_sa_pct = %.2f\n", 100.0 * sa.accuracy);
  txt += buf;
  std::snprintf(buf, sizeof(buf), "robust_loss = %.10g\n", ra.loss);
  txt += buf;
  std::fputs(txt.c_str(), stdout);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/eval.txt", txt);
  }
  return 0;
}

template <typename T>
int do_transfer_eval(const ExperimentConfig& src_cfg,
                     const ExperimentConfig& tgt_cfg, const std::string& src,
                     const std::string& tgt) {
  const DataSplits data = load_splits(src_cfg);
  Network<T> source = network_from_checkpoint<T>(
      src_cfg, data.train.sample_shape, data.train.classes, src);
  Network<T> target = network_from_checkpoint<T>(
      tgt_cfg, data.train.sample_shape, data.train.classes, tgt);
  const EvalResult tr =
      transfer_eval(source, target, data.test, src_cfg.train.eval_attack,
                    derive_seed(src_cfg.seed, "eval-cli"));
  const EvalResult white =
      evaluate_accuracy(target, data.test, &src_cfg.train.eval_attack,
                        derive_seed(src_cfg.seed, "eval-cli"));
  std::printf("transfer_ra = %.6f\n", tr.accuracy);
  std::printf("transfer_ra_pct = %.2f\n", 100.0 * tr.accuracy);
  std::printf("target_whitebox_ra = %.6f\n", white.accuracy);
  std::printf("target_whitebox_ra_pct = %.2f\n", 100.0 * white.accuracy);
  return 0;
}

template <typename T>
int do_loss_surface(const ExperimentConfig& cfg, const std::string& ckpt,
                    int grid_n) {
  const DataSplits data = load_splits(cfg);
  Network<T> net = network_from_checkpoint<T>(
      cfg, data.train.sample_shape, data.train.classes, ckpt);
  const int n = grid_n > 0 ? grid_n
                           : (cfg.loss_surface_n > 0 ? cfg.loss_surface_n : 21);
  const std::int64_t count =
      std::min<std::int64_t>(cfg.loss_surface_samples, data.test.count());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset batch = take(data.test, idx);
  TensorT<T> x;
  std::vector<std::int32_t> labels;
  to_tensor(batch, x, labels);
  const AttackConfig atk = cfg.train.eval_attack;
  const LossSurface s = loss_surface_grid(
      net, x, labels, n, cfg.loss_surface_radius, &atk, cfg.seed);
  fs::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/loss_surface.tsv";
  write_text_file(path, loss_surface_tsv(s));
  std::printf("wrote %s (n=%d radius=%g samples=%lld)\n", path.c_str(), n,
              cfg.loss_surface_radius, static_cast<long long>(count));
  return 0;
}

template <typename T>
int do_flops(const ExperimentConfig& cfg) {
  const DataSplits data = load_splits(cfg);
  const ModelSpec spec =
      build_model_spec(cfg, data.train.sample_shape, data.train.classes);
  const double fdense = forward_flops_dense(spec);
  const std::int64_t batch = cfg.train.batch_size;
  const std::int64_t iters =
      (data.train.count() + batch - 1) / batch;

  std::printf("model = %s\n", spec.name.c_str());
  std::printf("train_count = %lld\n", static_cast<long long>(data.train.count()));
  std::printf("iters_per_epoch = %lld\n", static_cast<long long>(iters));
  std::printf("forward_flops_dense = %.10g\n", fdense);
  std::printf("standard_iteration_flops_dense = %.10g\n",
              standard_iteration_flops(fdense) * static_cast<double>(batch));
  std::printf("adversarial_iteration_flops_dense = %.10g\n",
              adversarial_iteration_flops(fdense, cfg.train.train_attack.steps) *
                  static_cast<double>(batch));

  const bool static_mask = cfg.method == Method::random_prune ||
                           cfg.method == Method::snip ||
                           cfg.method == Method::igq_static ||
                           cfg.method == Method::flying_bird ||
                           cfg.method == Method::flying_bird_plus;
  if (static_mask) {
    Network<T> net = build_network<T>(spec);
    init_params(net, cfg.seed);
    const std::string alloc =
        cfg.method == Method::igq_static ? "igq"
        : (cfg.method == Method::flying_bird ||
           cfg.method == Method::flying_bird_plus)
            ? cfg.fb.allocator
            : (cfg.method == Method::snip ? "snip" : cfg.allocator);
    MaskSet masks;
    if (alloc == "snip") {
      const std::int64_t n = std::min<std::int64_t>(batch, data.train.count());
      std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
      TensorT<T> x;
      std::vector<std::int32_t> labels;
      to_tensor(take(data.train, idx), x, labels);
      masks = allocate_snip(net, x, labels, cfg.sparsity);
    } else {
      const auto layers = prunable_layers(spec);
      AllocationPlan plan;
      if (alloc == "uniform")
        plan = allocate_uniform(layers, cfg.sparsity);
      else if (alloc == "erk")
        plan = allocate_erk(layers, cfg.sparsity);
      else
        plan = allocate_igq(layers, cfg.sparsity);
      masks = sample_random_mask(plan, layers, derive_seed(cfg.seed, "mask"));
    }
    const std::vector<double> dens = layer_densities(masks);
    const double fsparse = forward_flops_sparse(spec, dens);
    std::printf("initial_sparsity = %.6f\n", sparsity_of(masks));
    std::printf("forward_flops_sparse = %.10g\n", fsparse);
    std::printf("standard_iteration_flops_sparse = %.10g\n",
                standard_iteration_flops(fsparse) * static_cast<double>(batch));
    std::printf(
        "adversarial_iteration_flops_sparse = %.10g\n",
        adversarial_iteration_flops(fsparse, cfg.train.train_attack.steps) *
            static_cast<double>(batch));
    for (std::size_t l = 0; l < dens.size(); ++l)
      std::printf("density[%zu] = %.6f\n", l, dens[l]);
  } else if (cfg.method == Method::omp || cfg.method == Method::robust_bird) {
    std::printf("target_sparsity = %.6f\n", cfg.sparsity);
  }
  return 0;
}

int do_gen_data(const std::string& out_dir, int classes,
                std::int64_t train_per_class, std::int64_t test_per_class,
                std::uint64_t seed, double label_noise, double pixel_noise,
                double class_sep) {
  if (classes < 2 || classes > 10)
    throw std::runtime_error("gen-data: classes must be in [2, 10]");
  if (train_per_class < 1 || test_per_class < 1)
    throw std::runtime_error("gen-data: per-class counts must be positive");
  const std::int64_t per_class = train_per_class + test_per_class;
  // Same seed -> identical images; the noisy variant only relabels, so the
  // test slice can be taken from the clean draw.
  const Dataset noisy = synthetic_images(classes, per_class, seed, label_noise,
                                         pixel_noise, class_sep);
  const Dataset clean =
      label_noise > 0.0 ? synthetic_images(classes, per_class, seed, 0.0,
                                           pixel_noise, class_sep)
                        : noisy;
  std::vector<std::int64_t> train_idx, test_idx;
  for (int c = 0; c < classes; ++c) {
    const std::int64_t base = static_cast<std::int64_t>(c) * per_class;
    for (std::int64_t i = 0; i < train_per_class; ++i)
      train_idx.push_back(base + i);
    for (std::int64_t i = train_per_class; i < per_class; ++i)
      test_idx.push_back(base + i);
  }
  fs::create_directories(out_dir);
  write_cifar10_file(take(noisy, train_idx), out_dir + "/train.bin");
  write_cifar10_file(take(clean, test_idx), out_dir + "/test.bin");
  std::printf("wrote %s/train.bin (%lld) and %s/test.bin (%lld)\n",
              out_dir.c_str(),
              static_cast<long long>(train_idx.size()), out_dir.c_str(),
              static_cast<long long>(test_idx.size()));
  return 0;
}

template <typename Fn>
int dispatch_precision(const std::string& ckpt, Fn&& fn) {
  const std::string prec = checkpoint_precision(ckpt);
  if (prec == "f64") return fn(double{});
  return fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse adversarial training workbench"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* cmd_train =
      app.add_subcommand("train", "run the configured experiment end to end");
  add_common(cmd_train, train_args);

  CommonArgs rb_args;
  CLI::App* cmd_rb = app.add_subcommand(
      "find-rb", "run only the early-ticket search and save the sparse net");
  add_common(cmd_rb, rb_args);

  CommonArgs eval_args;
  std::string eval_ckpt;
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "robust/standard accuracy of a checkpoint");
  add_common(cmd_eval, eval_args);
  cmd_eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")
      ->required();

  CommonArgs tr_args;
  std::string tr_source, tr_target, tr_target_config;
  CLI::App* cmd_tr = app.add_subcommand(
      "transfer-eval", "accuracy of a target model under attacks crafted "
                       "against a source model");
  add_common(cmd_tr, tr_args);
  cmd_tr->add_option("--source", tr_source, "source (attacked) checkpoint")
      ->required();
  cmd_tr->add_option("--target", tr_target, "target (measured) checkpoint")
      ->required();
  cmd_tr->add_option("--target-config", tr_target_config,
                     "config for the target model (defaults to --config)");

  CommonArgs ls_args;
  std::string ls_ckpt;
  int ls_n = 0;
  CLI::App* cmd_ls = app.add_subcommand(
      "loss-surface", "adversarial-loss grid around a checkpoint");
  add_common(cmd_ls, ls_args);
  cmd_ls->add_option("--ckpt", ls_ckpt, "checkpoint to probe")->required();
  cmd_ls->add_option("--n", ls_n, "grid side length (default from config, else 21)");

  CommonArgs fl_args;
  CLI::App* cmd_fl = app.add_subcommand(
      "flops", "per-iteration and per-epoch FLOPs for the configured run");
  add_common(cmd_fl, fl_args);

  std::string gd_out = "data";
  int gd_classes = 10;
  std::int64_t gd_train = 600, gd_test = 120;
  std::uint64_t gd_seed = 1;
  double gd_noise = 0.0, gd_pixel_noise = 0.05, gd_class_sep = 1.0;
  CLI::App* cmd_gd = app.add_subcommand(
      "gen-data", "write a procedural image dataset in the CIFAR-10 binary "
                  "layout (train.bin/test.bin)");
  cmd_gd->add_option("--out", gd_out, "output directory");
  cmd_gd->add_option("--classes", gd_classes, "number of classes (2-10)");
  cmd_gd->add_option("--train-per-class", gd_train, "training samples per class");
  cmd_gd->add_option("--test-per-class", gd_test, "test samples per class");
  cmd_gd->add_option("--seed", gd_seed, "generator seed");
  cmd_gd->add_option("--label-noise", gd_noise,
                     "fraction of training labels resampled uniformly");
  cmd_gd->add_option("--pixel-noise", gd_pixel_noise,
                     "per-pixel Gaussian noise sigma");
  cmd_gd->add_option("--class-sep", gd_class_sep,
                     "class base-color separation in [0,1]; lower = harder");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      const ExperimentConfig cfg = load_config(train_args);
      const std::string summary = run_experiment(cfg);
      std::fputs(summary.c_str(), stdout);
      return 0;
    }
    if (cmd_rb->parsed()) {
      const ExperimentConfig cfg = load_config(rb_args);
      if (cfg.precision == "f64") return do_find_rb<double>(cfg);
      return do_find_rb<float>(cfg);
    }
    if (cmd_eval->parsed()) {
      const ExperimentConfig cfg = load_config(eval_args);
      return dispatch_precision(eval_ckpt, [&](auto tag) {
        return do_eval<decltype(tag)>(cfg, eval_ckpt);
      });
    }
    if (cmd_tr->parsed()) {
      const ExperimentConfig src_cfg = load_config(tr_args);
      CommonArgs tgt_args = tr_args;
      if (!tr_target_config.empty()) tgt_args.config = tr_target_config;
      const ExperimentConfig tgt_cfg = load_config(tgt_args);
      return dispatch_precision(tr_source, [&](auto tag) {
        return do_transfer_eval<decltype(tag)>(src_cfg, tgt_cfg, tr_source,
                                               tr_target);
      });
    }
    if (cmd_ls->parsed()) {
      const ExperimentConfig cfg = load_config(ls_args);
      return dispatch_precision(ls_ckpt, [&](auto tag) {
        return do_loss_surface<decltype(tag)>(cfg, ls_ckpt, ls_n);
      });
    }
    if (cmd_fl->parsed()) {
      const ExperimentConfig cfg = load_config(fl_args);
      if (cfg.precision == "f64") return do_flops<double>(cfg);
      return do_flops<float>(cfg);
    }
    if (cmd_gd->parsed())
      return do_gen_data(gd_out, gd_classes, gd_train, gd_test, gd_seed,
                         gd_noise, gd_pixel_noise, gd_class_sep);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
