// End-to-end experiment runs (tiny budgets), checkpoint round-trips, and
// resume equivalence.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "sparw/checkpoint.hpp"
#include "sparw/config.hpp"
#include "sparw/data.hpp"
#include "sparw/experiment.hpp"
#include "sparw/metrics.hpp"
#include "sparw/model.hpp"
#include "sparw/train.hpp"
#include "test_util.hpp"

using namespace sparw;
using testutil::ScratchDir;
using testutil::read_file;

namespace {

// Tiny flat-feature run: 48 samples, 3 iterations per epoch.
std::string base_config_text() {
  return "data.name = blobs\n"
         "data.blob_classes = 2\n"
         "data.blob_per_class = 24\n"
         "data.blob_dims = 8\n"
         "data.val_count = 8\n"
         "data.train_ra_subset = 16\n"
         "model.preset = mlp\n"
         "model.widths = 10\n"
         "train.epochs = 3\n"
         "train.batch_size = 16\n"
         "train.lr0 = 0.05\n"
         "train.milestones =\n"
         "train.augment = off\n"
         "attack.train_steps = 1\n"
         "attack.eval_steps = 2\n"
         "seed = 5\n";
}

ExperimentConfig config_from_text(const std::string& text) {
  return experiment_config_from(KeyValueConfig::parse_text(text));
}

std::string summary_value(const std::string& summary, const std::string& key) {
  const std::string needle = key + " = ";
  const auto pos = summary.find(needle);
  REQUIRE(pos != std::string::npos);
  const auto end = summary.find('\n', pos);
  return summary.substr(pos + needle.size(), end - pos - needle.size());
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("same config and seed produce a byte-identical metrics stream") {
  ScratchDir tmp("exp_determinism");
  ExperimentConfig a = config_from_text(base_config_text());
  a.out_dir = tmp.path("run_a");
  (void)run_experiment(a);
  ExperimentConfig b = config_from_text(base_config_text());
  b.out_dir = tmp.path("run_b");
  (void)run_experiment(b);
  const std::string csv_a = read_file(tmp.path("run_a") + "/metrics.csv");
  const std::string csv_b = read_file(tmp.path("run_b") + "/metrics.csv");
  CHECK(!csv_a.empty());
  CHECK(csv_a == csv_b);
  const auto rows = parse_metrics_csv(csv_a);
  CHECK(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.wall_time_s == 0.0);  // timing off
  // A different seed changes the stream.
  ExperimentConfig c = config_from_text(base_config_text());
  c.out_dir = tmp.path("run_c");
  c.seed = 6;
  c.train.seed = 6;
  (void)run_experiment(c);
  CHECK(read_file(tmp.path("run_c") + "/metrics.csv") != csv_a);
}

TEST_CASE("zero-epoch run reports initialization-time metrics") {
  ScratchDir tmp("exp_zero");
  ExperimentConfig cfg = config_from_text(base_config_text());
  cfg.train.epochs = 0;
  cfg.out_dir = tmp.path("zero");
  const std::string summary = run_experiment(cfg);
  CHECK(summary_value(summary, "epochs") == "0");
  CHECK(summary_value(summary, "best_epoch") == "-1");
  CHECK(summary_value(summary, "method") == "dense-at");
  (void)summary_value(summary, "final_test_ra_pct");  // key must exist
  const auto rows =
      parse_metrics_csv(read_file(tmp.path("zero") + "/metrics.csv"));
  CHECK(rows.empty());
  CHECK(std::filesystem::exists(tmp.path("zero") + "/final.ckpt"));
}

TEST_CASE("dynamic sparse run conserves the configured sparsity exactly") {
  ScratchDir tmp("exp_fb");
  // Uniform halves of evenly divisible layers (80 and 20 weights) make the
  // conserved sparsity land exactly on 0.5.
  ExperimentConfig cfg = config_from_text(
      base_config_text() +
      "method.name = flying-bird\nmethod.sparsity = 0.5\n"
      "method.allocator = uniform\nfb.delta_t = 3\n");
  cfg.out_dir = tmp.path("fb");
  const std::string summary = run_experiment(cfg);
  CHECK(summary_value(summary, "final_sparsity") == "0.500000");
  CHECK(summary_value(summary, "method") == "flying-bird");
  const int updates = std::stoi(summary_value(summary, "topology_updates"));
  // 48 blob samples -> 8 test, 8 val, 32 train -> 2 iterations per epoch;
  // 6 iterations total, updates after the 3rd and 6th.
  CHECK(updates == 2);
  const auto rows =
      parse_metrics_csv(read_file(tmp.path("fb") + "/metrics.csv"));
  for (const auto& r : rows) CHECK(r.sparsity == 0.5);
}

TEST_CASE("every method completes a tiny run with coherent summaries") {
  ScratchDir tmp("exp_methods");
  const std::vector<std::string> methods{
      "small-dense", "random-prune", "omp",         "snip",
      "igq-static",  "robust-bird",  "flying-bird+"};
  int idx = 0;
  for (const auto& m : methods) {
    std::string text = base_config_text() +
                       "method.name = " + m + "\nmethod.sparsity = 0.5\n" +
                       "train.epochs = 2\nrb.max_epochs = 2\nfb.delta_t = 3\n" +
                       "fb.t_start = 0\nfb.queue_len = 2\n";
    if (m == "random-prune" || m == "flying-bird+")
      text += "method.allocator = uniform\n";
    ExperimentConfig cfg = config_from_text(text);
    cfg.out_dir = tmp.path("m" + std::to_string(idx++));
    const std::string summary = run_experiment(cfg);
    CHECK(summary_value(summary, "method") == m);
    const auto rows =
        parse_metrics_csv(read_file(cfg.out_dir + "/metrics.csv"));
    CHECK(rows.size() == 2);
    if (m == "small-dense") {
      // Capacity reduced by width, not masks: no masked-off weights, but
      // fewer total weights than the full-width 8->{10}->2 mlp (112).
      CHECK(summary_value(summary, "final_sparsity") == "0.000000");
      CHECK(std::stoll(summary_value(summary, "active_params")) ==
            std::stoll(summary_value(summary, "total_params")));
      CHECK(std::stoll(summary_value(summary, "total_params")) < 112);
    } else {
      CHECK(std::stod(summary_value(summary, "final_sparsity")) > 0.3);
    }
    if (m == "robust-bird")
      (void)summary_value(summary, "ticket_search_epochs");
  }
}

TEST_CASE("conv preset runs end-to-end on image blobs") {
  ScratchDir tmp("exp_conv");
  ExperimentConfig cfg = config_from_text(
      "data.name = blobs\ndata.blob_classes = 2\ndata.blob_per_class = 16\n"
      "data.blob_dims = 3,8,8\ndata.val_count = 8\ndata.train_ra_subset = 8\n"
      "model.preset = mini-vgg\nmodel.widths = 4,8\n"
      "train.epochs = 1\ntrain.batch_size = 16\ntrain.milestones =\n"
      "attack.train_steps = 1\nattack.eval_steps = 1\nseed = 3\n"
      "surface.n = 3\nsurface.samples = 8\n");
  cfg.out_dir = tmp.path("conv");
  (void)run_experiment(cfg);
  const std::string tsv = read_file(tmp.path("conv") + "/loss_surface.tsv");
  std::size_t lines = 0;
  for (char c : tsv) lines += (c == '\n') ? 1 : 0;
  CHECK(lines == 10);  // header + 3x3 grid
  CHECK(tsv.rfind("a\tb\tloss\n", 0) == 0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ScratchDir tmp("ckpt");
  ModelSpec spec = make_mlp(8, {10}, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 44);
  OptimizerStateT<double> opt = make_optimizer_state(net);
  for (auto& v : opt.velocity) v.fill(0.25);
  opt.step = 7;

  TrainingSnapshot<double> snap = capture_snapshot(net, opt);
  snap.epoch = 3;
  snap.global_iter = 21;
  snap.cum_flops = 1.5e9;
  snap.metrics_csv = "header\nrow";
  save_checkpoint(tmp.path("a.ckpt"), snap);

  TrainingSnapshot<double> loaded =
      load_checkpoint<double>(tmp.path("a.ckpt"));
  CHECK(loaded.epoch == 3);
  CHECK(loaded.global_iter == 21);
  CHECK(loaded.cum_flops == 1.5e9);
  CHECK(loaded.metrics_csv == snap.metrics_csv);

  Network<double> restored = build_network<double>(spec);
  OptimizerStateT<double> opt2 = make_optimizer_state(restored);
  apply_snapshot(loaded, restored, opt2);
  for (std::size_t i = 0; i < net.params.size(); ++i)
    CHECK(restored.params[i].value.vec() == net.params[i].value.vec());
  CHECK(opt2.step == 7);
  CHECK(opt2.velocity[0].vec() == opt.velocity[0].vec());
}

TEST_CASE("checkpoints refuse corruption, wrong precision, wrong model") {
  ScratchDir tmp("ckpt_bad");
  ModelSpec spec = make_mlp(8, {10}, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 1);
  OptimizerStateT<double> opt = make_optimizer_state(net);
  TrainingSnapshot<double> snap = capture_snapshot(net, opt);
  save_checkpoint(tmp.path("good.ckpt"), snap);
  CHECK(checkpoint_precision(tmp.path("good.ckpt")) == "f64");

  // Version word corrupted in place.
  std::string bytes = read_file(tmp.path("good.ckpt"));
  bytes[4] = static_cast<char>(0xEE);
  bytes[5] = static_cast<char>(0xEE);
  testutil::write_file(tmp.path("bad_version.ckpt"), bytes);
  CHECK_THROWS_AS((void)load_checkpoint<double>(tmp.path("bad_version.ckpt")),
                  std::runtime_error);

  // Magic corrupted.
  std::string magic = read_file(tmp.path("good.ckpt"));
  magic[0] = 'X';
  testutil::write_file(tmp.path("bad_magic.ckpt"), magic);
  CHECK_THROWS_AS((void)load_checkpoint<double>(tmp.path("bad_magic.ckpt")),
                  std::runtime_error);

  // Truncation.
  testutil::write_file(tmp.path("trunc.ckpt"),
                       read_file(tmp.path("good.ckpt")).substr(0, 40));
  CHECK_THROWS_AS((void)load_checkpoint<double>(tmp.path("trunc.ckpt")),
                  std::runtime_error);

  // Wrong precision template.
  CHECK_THROWS_AS((void)load_checkpoint<float>(tmp.path("good.ckpt")),
                  std::runtime_error);

  // A snapshot from a different architecture must not apply.
  ModelSpec other_spec = make_mlp(8, {12}, 2);
  Network<double> other = build_network<double>(other_spec);
  OptimizerStateT<double> other_opt = make_optimizer_state(other);
  TrainingSnapshot<double> loaded =
      load_checkpoint<double>(tmp.path("good.ckpt"));
  CHECK_THROWS((void)[&] { apply_snapshot(loaded, other, other_opt); }());
}

TEST_CASE("interrupted-and-resumed training equals the uninterrupted run") {
  ScratchDir tmp("exp_resume");
  const std::string fb_text =
      base_config_text() +
      "method.name = flying-bird+\nmethod.sparsity = 0.5\n"
      "method.allocator = uniform\nfb.delta_t = 3\nfb.t_start = 0\n"
      "fb.queue_len = 2\ntrain.epochs = 4\n";

  ExperimentConfig full = config_from_text(fb_text);
  full.out_dir = tmp.path("full");
  (void)run_experiment(full);

  ExperimentConfig part1 = config_from_text(fb_text);
  part1.out_dir = tmp.path("split");
  part1.stop_after_epochs = 2;
  (void)run_experiment(part1);
  const auto mid_rows =
      parse_metrics_csv(read_file(tmp.path("split") + "/metrics.csv"));
  CHECK(mid_rows.size() == 2);

  ExperimentConfig part2 = config_from_text(fb_text);
  part2.out_dir = tmp.path("split");
  part2.resume = true;
  (void)run_experiment(part2);

  CHECK(read_file(tmp.path("split") + "/metrics.csv") ==
        read_file(tmp.path("full") + "/metrics.csv"));
}

TEST_SUITE_END();
