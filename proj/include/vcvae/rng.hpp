#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "vcvae/tensor.hpp"

namespace vcvae {

// Keyed random stream. Streams derived with derive() depend only on the
// parent key and the label, never on how many values the parent has drawn,
// so subsystems and parallel workers get disjoint reproducible streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng derive(std::string_view label) const;
  Rng derive(std::uint64_t index) const;

  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();  // [0, 1)
  double normal();
  std::size_t uniform_index(std::size_t n);  // [0, n)

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

Tensor sample_standard_normal(Rng& rng, const Shape& shape);

}  // namespace vcvae
