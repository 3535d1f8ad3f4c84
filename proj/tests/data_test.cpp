// Binary dataset loaders, synthetic generators, splits, and batch assembly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sparw/autodiff.hpp"
#include "sparw/data.hpp"
#include "sparw/metrics.hpp"
#include "sparw/model.hpp"
#include "sparw/rng.hpp"
#include "sparw/train.hpp"
#include "test_util.hpp"

using namespace sparw;
using testutil::ScratchDir;

namespace {

void write_bytes(const std::string& path,
                 const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("cifar batch: 10000 records occupy exactly 30,730,000 bytes") {
  ScratchDir tmp("cifar_batch");
  Dataset ds;
  ds.sample_shape = {3, 32, 32};
  ds.classes = 10;
  ds.pixels.assign(10000 * 3072, 0.0f);
  ds.labels.assign(10000, 0);
  write_cifar10_file(ds, tmp.path("batch.bin"));
  CHECK(std::filesystem::file_size(tmp.path("batch.bin")) == 30730000);
  Dataset back = load_cifar10_files({tmp.path("batch.bin")});
  CHECK(back.count() == 10000);
}

TEST_CASE("cifar records: hand-built two-record fixture loads exactly") {
  ScratchDir tmp("cifar_fixture");
  std::vector<unsigned char> bytes;
  bytes.push_back(3);  // label of record 0
  bytes.push_back(255);
  bytes.push_back(128);
  for (int i = 2; i < 3072; ++i) bytes.push_back(0);
  bytes.push_back(9);  // label of record 1
  for (int i = 0; i < 3072; ++i) bytes.push_back(7);
  write_bytes(tmp.path("two.bin"), bytes);

  Dataset ds = load_cifar10_files({tmp.path("two.bin")});
  CHECK(ds.count() == 2);
  CHECK(ds.sample_shape == Shape{3, 32, 32});
  CHECK(ds.labels == std::vector<std::int32_t>{3, 9});
  CHECK(ds.pixels[0] == 1.0f);  // byte 255 maps to exactly 1.0
  CHECK(ds.pixels[1] == 128.0f / 255.0f);
  CHECK(ds.pixels[2] == 0.0f);
  CHECK(ds.pixels[3072] == 7.0f / 255.0f);
}

TEST_CASE("cifar loader rejects truncation and bad labels") {
  ScratchDir tmp("cifar_bad");
  std::vector<unsigned char> truncated(3072, 0);  // one byte short
  write_bytes(tmp.path("trunc.bin"), truncated);
  CHECK_THROWS((void)load_cifar10_files({tmp.path("trunc.bin")}));

  std::vector<unsigned char> bad(3073, 0);
  bad[0] = 10;  // label out of range for the 10-class layout
  write_bytes(tmp.path("badlabel.bin"), bad);
  CHECK_THROWS((void)load_cifar10_files({tmp.path("badlabel.bin")}));
}

TEST_CASE("cifar-100 records use the fine label byte") {
  ScratchDir tmp("cifar100");
  std::vector<unsigned char> bytes;
  bytes.push_back(11);  // coarse (ignored)
  bytes.push_back(42);  // fine (used)
  for (int i = 0; i < 3072; ++i) bytes.push_back(0);
  write_bytes(tmp.path("c100.bin"), bytes);
  Dataset ds = load_cifar100_files({tmp.path("c100.bin")});
  CHECK(ds.count() == 1);
  CHECK(ds.classes == 100);
  CHECK(ds.labels[0] == 42);
}

TEST_CASE("quantized write/load round-trip stays within half a byte step") {
  ScratchDir tmp("cifar_roundtrip");
  Dataset ds = synthetic_images(2, 3, 5);
  write_cifar10_file(ds, tmp.path("rt.bin"));
  Dataset back = load_cifar10_files({tmp.path("rt.bin")});
  CHECK(back.count() == ds.count());
  CHECK(back.labels == ds.labels);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i)
    CHECK(std::abs(back.pixels[i] - ds.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("idx fixture: 2x2 image with exact bytes") {
  ScratchDir tmp("idx");
  std::vector<unsigned char> img;
  push_be32(img, 0x00000803u);
  push_be32(img, 1);  // count
  push_be32(img, 2);  // rows
  push_be32(img, 2);  // cols
  img.push_back(0);
  img.push_back(255);
  img.push_back(128);
  img.push_back(64);
  write_bytes(tmp.path("img.idx"), img);

  std::vector<unsigned char> lab;
  push_be32(lab, 0x00000801u);
  push_be32(lab, 1);
  lab.push_back(5);
  write_bytes(tmp.path("lab.idx"), lab);

  Dataset ds = load_idx(tmp.path("img.idx"), tmp.path("lab.idx"));
  CHECK(ds.count() == 1);
  CHECK(ds.sample_shape == Shape{1, 2, 2});
  CHECK(ds.labels[0] == 5);
  CHECK(ds.pixels[0] == 0.0f);
  CHECK(ds.pixels[1] == 1.0f);
  CHECK(ds.pixels[2] == 128.0f / 255.0f);
  CHECK(ds.pixels[3] == 64.0f / 255.0f);
}

TEST_CASE("idx loader rejects bad magic and count mismatches") {
  ScratchDir tmp("idx_bad");
  std::vector<unsigned char> img;
  push_be32(img, 0x00000802u);  // wrong magic
  push_be32(img, 1);
  push_be32(img, 2);
  push_be32(img, 2);
  for (int i = 0; i < 4; ++i) img.push_back(0);
  write_bytes(tmp.path("img.idx"), img);
  std::vector<unsigned char> lab;
  push_be32(lab, 0x00000801u);
  push_be32(lab, 1);
  lab.push_back(1);
  write_bytes(tmp.path("lab.idx"), lab);
  CHECK_THROWS((void)load_idx(tmp.path("img.idx"), tmp.path("lab.idx")));

  // Fix the magic but claim two labels for one image.
  img[3] = 0x03;
  write_bytes(tmp.path("img2.idx"), img);
  std::vector<unsigned char> lab2;
  push_be32(lab2, 0x00000801u);
  push_be32(lab2, 2);
  lab2.push_back(1);
  lab2.push_back(2);
  write_bytes(tmp.path("lab2.idx"), lab2);
  CHECK_THROWS((void)load_idx(tmp.path("img2.idx"), tmp.path("lab2.idx")));
}

TEST_CASE("idx write/load round-trip") {
  ScratchDir tmp("idx_rt");
  Dataset ds = synthetic_blobs(3, 4, {1, 4, 4}, 2, 0.1);
  write_idx_files(ds, tmp.path("img.idx"), tmp.path("lab.idx"));
  Dataset back = load_idx(tmp.path("img.idx"), tmp.path("lab.idx"));
  CHECK(back.count() == ds.count());
  CHECK(back.labels == ds.labels);
}

TEST_CASE("blob generator: deterministic, exact per-class counts, separable") {
  Dataset a = synthetic_blobs(2, 16, {8}, 5, 0.05);
  Dataset b = synthetic_blobs(2, 16, {8}, 5, 0.05);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  std::vector<int> per_class(2, 0);
  for (auto l : a.labels) per_class[static_cast<std::size_t>(l)]++;
  CHECK(per_class == std::vector<int>{16, 16});

  // A linear model separates the two wide-margin blobs within 5 epochs.
  Dataset train = synthetic_blobs(2, 32, {8}, 7, 0.05);
  ModelSpec spec = testutil::linear_spec(8, 2);
  Network<double> net = build_network<double>(spec);
  init_params(net, 1);
  OptimizerStateT<double> opt = make_optimizer_state(net);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr0 = 0.1;
  cfg.milestones = {};
  cfg.augment.enabled = false;
  cfg.seed = 2;
  std::int64_t iter = 0;
  for (int e = 0; e < 5; ++e)
    (void)train_epoch(net, opt, train, cfg, false, cfg.train_attack, e,
                      [&](std::int64_t) { return 0.1; }, iter);
  CHECK(evaluate_accuracy(net, train, nullptr, 1).accuracy > 0.95);
}

TEST_CASE("image generator: deterministic, label noise only relabels") {
  Dataset clean = synthetic_images(3, 4, 11, 0.0);
  Dataset clean2 = synthetic_images(3, 4, 11, 0.0);
  CHECK(clean.pixels == clean2.pixels);
  CHECK(clean.labels == clean2.labels);
  CHECK(clean.count() == 12);
  CHECK(clean.sample_shape == Shape{3, 32, 32});

  Dataset noisy = synthetic_images(3, 4, 11, 0.9);
  CHECK(noisy.pixels == clean.pixels);  // same draw, labels differ only
  CHECK(noisy.labels != clean.labels);

  CHECK_THROWS((void)synthetic_images(3, 4, 11, 1.5));
  CHECK_THROWS((void)synthetic_images(3, 4, 11, 0.0, -0.1));
  CHECK_THROWS((void)synthetic_images(3, 4, 11, 0.0, 0.05, 2.0));
}

TEST_CASE("subsets and splits are deterministic and sized exactly") {
  Dataset ds = synthetic_blobs(4, 8, {6}, 3, 0.2);
  Dataset sub = shuffled_subset(ds, 10, 21);
  CHECK(sub.count() == 10);
  Dataset sub2 = shuffled_subset(ds, 10, 21);
  CHECK(sub.pixels == sub2.pixels);
  CHECK(sub.labels == sub2.labels);
  CHECK_THROWS((void)shuffled_subset(ds, 33, 21));

  auto [train, val] = split_train_val(ds, 12, 4);
  CHECK(train.count() == 20);
  CHECK(val.count() == 12);

  CHECK_THROWS((void)take(ds, {99}));
}

TEST_CASE("batch assembly: plain copy without augmentation, bounds with it") {
  Dataset ds = synthetic_blobs(2, 4, {3, 6, 6}, 9, 0.2);
  std::vector<std::int64_t> order{3, 1, 5, 0};
  AugmentConfig off;
  RandomStream rng(4);
  TensorT<double> x;
  std::vector<std::int32_t> labels;
  fill_batch(ds, order, 0, 4, off, rng, x, labels);
  CHECK(x.shape() == Shape{4, 3, 6, 6});
  REQUIRE(labels.size() == 4);
  // Row 1 of the batch is sample 1 verbatim.
  const std::int64_t numel = ds.sample_numel();
  for (std::int64_t i = 0; i < numel; ++i)
    CHECK(x[numel + i] ==
          static_cast<double>(ds.pixels[static_cast<std::size_t>(numel + i)]));

  AugmentConfig on{true, 2, true};
  RandomStream rng2(4);
  TensorT<double> xa;
  fill_batch(ds, order, 0, 4, on, rng2, xa, labels);
  CHECK(xa.shape() == Shape{4, 3, 6, 6});
  for (std::int64_t i = 0; i < xa.numel(); ++i) {
    CHECK(xa[i] >= 0.0);
    CHECK(xa[i] <= 1.0);
  }
  // Same stream seed, same crops.
  RandomStream rng3(4);
  TensorT<double> xb;
  fill_batch(ds, order, 0, 4, on, rng3, xb, labels);
  CHECK(xa.vec() == xb.vec());
}

TEST_SUITE_END();
