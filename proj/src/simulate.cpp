#include "vidfm/simulate.hpp"

#include "vidfm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vidfm {

std::size_t inclusion_count(double omega, int n, int s) {
  return static_cast<std::size_t>(std::floor(omega * static_cast<double>(n) * static_cast<double>(s) + 0.5));
}

SimResult simulate_dfm(const SimConfig& cfg) {
  if (!(cfg.omega >= 0.0 && cfg.omega <= 1.0)) {
    std::ostringstream os;
    os << "omega must lie in [0, 1], got " << cfg.omega;
    throw ConfigError(os.str());
  }
  const int n = cfg.dims.n();
  const int T = cfg.dims.T();
  const int r = cfg.dims.r();
  const int p = cfg.dims.p();
  const int s = cfg.dims.s();
  if (cfg.pattern == MissingPattern::kExperiment2 && n % 4 != 0) {
    throw ConfigError("experiment2 missing pattern requires n divisible by 4");
  }

  Rng rng(cfg.seed);
  SimTruth truth;

  // Included loadings over vec(Lambda), column-major index gamma = i + n k.
  const auto chosen = rng.sample_without_replacement(static_cast<std::size_t>(n) * s,
                                                     inclusion_count(cfg.omega, n, s));
  truth.lambda = Matrix::Zero(n, s);
  truth.z = Matrix::Zero(n, s);
  for (std::size_t gamma : chosen) {
    const auto i = static_cast<Eigen::Index>(gamma % static_cast<std::size_t>(n));
    const auto k = static_cast<Eigen::Index>(gamma / static_cast<std::size_t>(n));
    truth.z(i, k) = 1.0;
    truth.lambda(i, k) = rng.normal();
  }

  truth.alpha.resize(r);
  for (int j = 0; j < r; ++j) truth.alpha(j) = rng.uniform(-0.95, 0.95);
  truth.xi.resize(n);
  for (int i = 0; i < n; ++i) truth.xi(i) = rng.uniform(0.1, 0.9);

  truth.sigma_eps.resize(n);
  for (int i = 0; i < n; ++i) {
    double zeta = 0.0;
    for (int l = 0; l <= p; ++l) {
      for (int j = 0; j < r; ++j) {
        const double lam = truth.lambda(i, l * r + j);
        zeta += lam * lam / (1.0 - truth.alpha(j) * truth.alpha(j));
      }
    }
    truth.sigma_eps(i) = zeta > 0.0 ? truth.xi(i) / (1.0 - truth.xi(i)) * zeta : 1.0;
  }

  // f_t for t = -p..T; row index t + p. The first row is drawn from the stationary law.
  Matrix f(T + p + 1, r);
  for (int j = 0; j < r; ++j) {
    f(0, j) = rng.normal() / std::sqrt(1.0 - truth.alpha(j) * truth.alpha(j));
  }
  for (int row = 1; row <= T + p; ++row) {
    for (int j = 0; j < r; ++j) f(row, j) = truth.alpha(j) * f(row - 1, j) + rng.normal();
  }
  truth.factors.resize(T, s);
  for (int t = 1; t <= T; ++t) {
    for (int l = 0; l <= p; ++l) {
      truth.factors.block(t - 1, l * r, 1, r) = f.row(t + p - l);
    }
  }

  Matrix y = truth.lambda * truth.factors.transpose();
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) y(i, t) += std::sqrt(truth.sigma_eps(i)) * rng.normal();
  }

  Panel panel(std::move(y), AvailabilityMask(n, T, true));
  if (cfg.pattern != MissingPattern::kNone) {
    panel = apply_missing_pattern(panel, cfg.pattern, derive_seed(cfg.seed, 1, 0));
  }
  return SimResult{std::move(panel), std::move(truth)};
}

Panel apply_missing_pattern(const Panel& panel, MissingPattern pattern, std::uint64_t seed) {
  const int n = panel.n();
  const int T = panel.T();
  if (pattern == MissingPattern::kNone) {
    return panel;
  }
  if (n % 4 != 0) {
    throw ConfigError("experiment2 missing pattern requires n divisible by 4, got n=" + std::to_string(n));
  }
  const int q = n / 4;
  Rng rng(seed);
  AvailabilityMask mask = panel.mask();

  // Block 2: lower frequency, last period of every 3-period block.
  for (int i = q; i < 2 * q; ++i) {
    for (int t = 0; t < T; ++t) {
      if ((t + 1) % 3 != 0) mask.set(i, t, false);
    }
  }

  const auto block_cells = static_cast<std::size_t>(q) * static_cast<std::size_t>(T);
  const auto target = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(block_cells) + 0.5));

  // Block 3: ragged start. Pick a variable uniformly, drop its earliest available observation.
  {
    std::vector<int> next(static_cast<std::size_t>(q), 0);
    std::size_t missing = 0;
    for (int i = 2 * q; i < 3 * q; ++i) missing += static_cast<std::size_t>(T - mask.count_row(i));
    int exhausted = 0;
    while (missing < target && exhausted < q) {
      const auto slot = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(q)));
      const int i = 2 * q + static_cast<int>(slot);
      int& t = next[slot];
      while (t < T && !mask.get(i, t)) ++t;
      if (t >= T) {
        exhausted = 0;
        for (int v = 2 * q; v < 3 * q; ++v) exhausted += mask.count_row(v) == 0 ? 1 : 0;
        continue;
      }
      mask.set(i, t, false);
      ++missing;
    }
  }

  // Block 4: uniformly scattered.
  {
    const auto cells = rng.sample_without_replacement(block_cells, target);
    for (std::size_t c : cells) {
      const int i = 3 * q + static_cast<int>(c % static_cast<std::size_t>(q));
      const int t = static_cast<int>(c / static_cast<std::size_t>(q));
      mask.set(i, t, false);
    }
  }
  return panel.restricted(mask);
}

}  // namespace vidfm
