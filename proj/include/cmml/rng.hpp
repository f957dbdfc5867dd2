#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cmml {

// Deterministic random source. The same (seed, stream_id) pair yields an
// identical sequence on every platform: mt19937_64 is fully specified by the
// standard and all value transforms below are our own (the standard library
// distributions are not bit-portable across implementations).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; caches the spare draw.
  double normal();
  double normal(double mean, double sd);

  // Uniform integer in [0, n); n must be positive.
  int uniform_int(int n);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  // A random permutation of {0, ..., n-1}.
  std::vector<int> permutation(int n);

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// SplitMix64 step; used for seed mixing and id-hash splits.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cmml
