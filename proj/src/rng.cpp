#include "vcvae/rng.hpp"

#include <array>

namespace vcvae {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::mt19937_64 seeded_engine(std::uint64_t key) {
  std::array<std::uint32_t, 4> words{
      static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
      static_cast<std::uint32_t>(splitmix64(key)),
      static_cast<std::uint32_t>(splitmix64(key) >> 32)};
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(splitmix64(seed)), engine_(seeded_engine(key_)) {}

Rng Rng::derive(std::string_view label) const {
  Rng child(0);
  child.key_ = splitmix64(key_ ^ fnv1a(label));
  child.engine_ = seeded_engine(child.key_);
  return child;
}

Rng Rng::derive(std::uint64_t index) const {
  Rng child(0);
  child.key_ = splitmix64(splitmix64(key_) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  child.engine_ = seeded_engine(child.key_);
  return child;
}

double Rng::uniform() { return uniform_(engine_); }

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor sample_standard_normal(Rng& rng, const Shape& shape) {
  Tensor out(shape);
  for (auto& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace vcvae
