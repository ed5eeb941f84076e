#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vidfm {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

// Seed for replication `index` of stream `stream` under `root`.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index);

// mt19937_64 with distribution code written out here, so draws are identical on every
// platform (std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, bound), rejection sampling.
  std::uint64_t below(std::uint64_t bound);
  // Standard normal, Marsaglia polar method.
  double normal();

  // `count` distinct indices from [0, population), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vidfm
