// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams. Everything stochastic in the engine draws
// from a RandomStream seeded through derive_seed(root, purpose, a, b), so a
// single experiment seed pins every artifact bit-for-bit and independent
// consumers (init, splits, attacks per batch, ...) never share state. The
// generators are implemented here rather than taken from <random> because
// stdlib distributions are implementation-defined and results must be
// reproducible from the recorded seed alone.

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace sparw {

// splitmix64: used for seed derivation and generator bootstrapping.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from a root seed, a purpose tag and up
// to two integer coordinates (e.g. epoch and batch index).
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t a = 0, std::uint64_t b = 0);

// xoshiro256** with explicit, portable distributions.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (pairs cached).
  double normal();
  double normal(double mean, double stddev);
  // Uniform integer in [0, n); n must be positive. Unbiased (rejection).
  std::uint64_t uniform_int(std::uint64_t n);

  // Fisher-Yates shuffle with this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sparw
