#pragma once

#include "vidfm/elbo.hpp"
#include "vidfm/em.hpp"
#include "vidfm/kalman.hpp"
#include "vidfm/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace vidfm {

struct FitConfig {
  double tol = 1e-6;               // |dELBO| / (|ELBO| + 1)
  int max_iter = 500;
  bool rerun = true;
  double rerun_criterion = 1e-6;   // absolute ELBO gain that triggers another rerun
  int max_reruns = 20;
  bool em_refine = true;           // refine the principal components by EM before regressions
  EmConfig em;
  std::optional<VariationalState> init;  // user-supplied start; PCA path when empty
  // Called with the offending state before a monotonicity failure is thrown.
  std::function<void(const VariationalState&)> on_failure;
};

struct FitReport {
  VariationalState state;
  SmoothedMoments moments;            // q(F) matching `state`
  std::vector<ElboBreakdown> trace;   // entry 0 at the initial state, then one per sweep
  int sweeps = 0;
  bool converged = false;
  int reruns = 0;
  double wall_seconds = 0.0;

  double elbo() const { return trace.back().total; }
};

struct Standardization {
  Vector mean;
  Vector sd;
};

// Per-variable demeaning and scaling to unit standard deviation over available entries.
// Variables with fewer than two observations or zero spread keep mean 0 / sd 1 as needed.
Panel standardize(const Panel& panel, Standardization* out = nullptr);

// State that equals the prior: mu = 0, Sigma = V, psi2 = tau2, b = beta.
VariationalState prior_state(const ModelContext& ctx);

// Conjugate regressions (B = 1) of the panel and of the factors on a known path of F_t,
// (T+1) x s with row 0 = F_0.
VariationalState regression_state(const ModelContext& ctx, const Matrix& path);

// Starting state. Uses cfg.init if given, the prior state for an all-missing panel,
// otherwise principal components (optionally refined by EM, or taken from `em`).
VariationalState initialize(const ModelContext& ctx, const FitConfig& cfg, const EmReport* em = nullptr);

// Smoothed factor moments for the current state (also refreshes state.g and state.q).
struct FactorUpdate {
  CollapsedSystem system;
  SmootherResult smoothed;
};
FactorUpdate update_factors(const ModelContext& ctx, VariationalState& state);

// Coordinate ascent from `init` until the relative ELBO change drops below tol.
FitReport run_vi(const ModelContext& ctx, const FitConfig& cfg, VariationalState init);

// run_vi followed by restarts with B = 1 while the ELBO keeps improving; best run returned.
FitReport run_with_reruns(const ModelContext& ctx, const FitConfig& cfg, VariationalState init);

// initialize + run_with_reruns (or run_vi when cfg.rerun is false).
FitReport fit(const ModelContext& ctx, const FitConfig& cfg, const EmReport* em = nullptr);

// T x r smoothed means of the dynamic factors.
Matrix dynamic_factor_means(const SmoothedMoments& moments, int r);

}  // namespace vidfm
