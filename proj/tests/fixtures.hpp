#pragma once

#include "oracles.hpp"
#include "vidfm/types.hpp"

namespace fixture {

using vidfm::Matrix;
using vidfm::Vector;

// Arbitrary valid variational state for small-system tests.
inline vidfm::VariationalState random_state(vidfm::Rng& rng, const vidfm::ModelDims& dims, double b_lo = 0.05,
                                            double b_hi = 0.95) {
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();
  vidfm::VariationalState st;
  st.mu_lambda.resize(n, s);
  st.b.resize(n, s);
  st.psi2_eps.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < s; ++k) {
      st.mu_lambda(i, k) = rng.normal();
      st.b(i, k) = rng.uniform(b_lo, b_hi);
    }
    st.psi2_eps(i) = rng.uniform(0.5, 2.0);
    st.sigma_lambda.push_back(oracle::random_spd(rng, s, 0.05, 0.5));
  }
  st.mu_phi.resize(r, s);
  st.psi2_u.resize(r);
  for (int j = 0; j < r; ++j) {
    for (int k = 0; k < s; ++k) st.mu_phi(j, k) = rng.uniform(-0.6, 0.6) / (dims.p() + 1);
    st.psi2_u(j) = rng.uniform(0.5, 1.5);
    st.sigma_phi.push_back(oracle::random_spd(rng, s, 0.02, 0.2));
  }
  st.g = Matrix::Zero(n, s);
  st.q.assign(static_cast<std::size_t>(n), Matrix::Zero(s, s));
  st.refresh_selector_moments();
  st.refresh_loading_moments();
  return st;
}

// Random panel with each cell missing with probability `miss`.
inline vidfm::Panel random_panel(vidfm::Rng& rng, int n, int T, double miss) {
  Matrix y(n, T);
  vidfm::AvailabilityMask mask(n, T, true);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < T; ++t) {
      y(i, t) = rng.normal();
      if (rng.uniform() < miss) mask.set(i, t, false);
    }
  }
  return vidfm::Panel(y, mask);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace fixture
