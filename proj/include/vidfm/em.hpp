#pragma once

#include "vidfm/kalman.hpp"
#include "vidfm/types.hpp"

#include <vector>

namespace vidfm {

struct EmConfig {
  double tol = 1e-8;        // relative log-likelihood change
  int max_iter = 1000;
  double f0_variance = 2.0; // F_0 ~ N(0, f0_variance I)
};

// Point parameters; the factor innovation covariance is fixed to I.
struct EmParams {
  Matrix loadings;    // n x s
  Vector sigma2_eps;  // n
  Matrix phi;         // r x s
};

struct EmReport {
  EmParams params;
  std::vector<double> loglik;  // one entry per E-step
  int iterations = 0;          // M-steps taken
  bool converged = false;
  SmoothedMoments moments;     // smoothed moments under `params`
};

// First r principal components of the mean-imputed panel, scaled to unit variance, stacked
// with p lags (zeros before t = 1). Returns (T+1) x s; row 0 is F_0 = 0.
Matrix principal_component_path(const Panel& panel, int r, int p);

// Least-squares M-step from smoothed moments and per-variable sums.
EmParams em_m_step(const SmoothedMoments& moments, const Matrix& g, const std::vector<Matrix>& q,
                   const Panel& panel, int r);

// Regressions on the principal-component path.
EmParams em_initial_params(const Panel& panel, const ModelDims& dims);

EmReport run_em(const Panel& panel, const ModelDims& dims, const EmConfig& cfg);
EmReport run_em(const Panel& panel, const ModelDims& dims, const EmConfig& cfg, EmParams init);

// sum_t log p(y_t | y_1..y_{t-1}) for the point system built from `params`.
double em_log_likelihood(const FilterByproducts& byproducts, const EmParams& params, const Panel& panel);

}  // namespace vidfm
