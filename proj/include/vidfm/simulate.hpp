#pragma once

#include "vidfm/types.hpp"

#include <cstdint>

namespace vidfm {

enum class MissingPattern { kNone, kExperiment2 };

struct SimConfig {
  ModelDims dims;
  double omega = 0.2;  // share of included loadings
  std::uint64_t seed = 1;
  MissingPattern pattern = MissingPattern::kNone;
};

struct SimTruth {
  Matrix lambda;     // n x s; zero wherever z is zero
  Matrix z;          // n x s, entries 0/1
  Vector alpha;      // r, AR(1) coefficients (Phi_1 = diag(alpha))
  Vector xi;         // n, idiosyncratic variance shares
  Vector sigma_eps;  // n, diagonal of Sigma_eps
  Matrix factors;    // T x s, row t-1 holds F_t'

  Matrix phi1() const { return alpha.asDiagonal(); }
  // T x r dynamic factors f_t'.
  Matrix dynamic_factors() const { return factors.leftCols(alpha.size()); }
};

struct SimResult {
  Panel panel;
  SimTruth truth;
};

// Simulated sparse DFM. Draw order from Rng(seed): inclusion set, loadings, alpha, xi,
// stationary initial factors, factor innovations, idiosyncratic noise (time-major).
// The missing pattern, if any, uses the stream derive_seed(seed, 1, 0).
SimResult simulate_dfm(const SimConfig& cfg);

// Block pattern on four equal variable blocks: full; every third period (t = 3, 6, ...);
// leading observations removed until 20% missing; 20% missing uniformly at random.
Panel apply_missing_pattern(const Panel& panel, MissingPattern pattern, std::uint64_t seed);

// floor(omega * n * s + 1/2)
std::size_t inclusion_count(double omega, int n, int s);

}  // namespace vidfm
