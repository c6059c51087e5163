#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ssmid {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a label, so seeds derived from names do not depend on ordering.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
  return derive_seed(seed, hash_label(label));
}

/// Seedable generator with splittable substreams. The engine is
/// std::mt19937_64; substreams are seeded through SplitMix64 mixing.
class Rng {
public:
  static constexpr std::string_view kName = "mt19937_64/splitmix64-streams";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  Rng split(std::string_view label) const { return Rng(derive_seed(seed_, label)); }

  std::uint64_t seed() const noexcept { return seed_; }

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace ssmid
