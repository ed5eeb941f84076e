#pragma once

#include "vidfm/types.hpp"

namespace vidfm {

// F_t = companion F_{t-1} + S u_t, u_t ~ N(0, diag(psi2_u)), F_0 ~ N(0, sigma_f0).
struct TransitionSystem {
  Matrix companion;   // s x s, [M_Phi; I_rp 0]
  Vector psi2_u;      // r
  Matrix sigma_f0;    // s x s
};

Matrix companion_matrix(const Matrix& mu_phi, int r, int p);

// Collapsed observation system. The filter runs on the information pair
// (info_t, precision_t) = (H*_t^{-1} y*_t, H*_t^{-1}), which stays defined when
// Sigma^thetaZ_t is singular; y*_t and H*_t are reconstructed on demand.
struct CollapsedSystem {
  int T = 0;
  int s = 0;
  Matrix loading_mean;             // n x s, B o M_Lambda
  Vector psi2_eps;                 // n
  Matrix w;                        // n x s, Psi_eps^{-1} (B o (1-B) o M_Lambda o M_Lambda)
  std::vector<Matrix> sigma_thz;   // T of s x s
  std::vector<Matrix> precision;   // T of s x s, M' A_t Psi^{-1} M + Sigma^thetaZ_t
  std::vector<Vector> info;        // T of s, M' Psi^{-1} A_t y_t
  std::vector<double> weighted_y2; // T, y_t' A_t Psi^{-1} y_t
  TransitionSystem transition;

  // t in 1..T. A ridge of 1e-10 I is added to Sigma^thetaZ_t when the precision has an
  // eigenvalue below 1e-12 (logged).
  Matrix h_star(int t) const;
  Vector y_star(int t) const;

 private:
  Matrix regularized_precision(int t) const;
};

// Collapsed system for the current variational parameters.
CollapsedSystem build_collapsed_system(const VariationalState& state, const ModelContext& ctx);

// Plain DFM with point parameters (used by the EM baseline and as a reduction check).
CollapsedSystem build_point_system(const Matrix& loadings, const Vector& sigma2_eps,
                                   const Matrix& phi, const Vector& sigma2_u, const Matrix& sigma_f0,
                                   const Panel& panel, int r, int p);

struct FilterByproducts {
  std::vector<Vector> predicted_mean;  // t = 1..T at index t-1
  std::vector<Matrix> predicted_cov;
  std::vector<Vector> filtered_mean;   // t = 0..T
  std::vector<Matrix> filtered_cov;
  std::vector<double> log_det_ratio;    // ln det G_t - ln det H*_t = ln det(I + P_t K_t)
  std::vector<double> innovation_quad;  // eps*_t' G_t^{-1} eps*_t
  std::vector<double> residual_quad;    // e_t' Psi^{-1} e_t + y*_t' Sigma^thetaZ_t y*_t

  // sum_t of -1/2 (log_det_ratio + innovation_quad + residual_quad)
  double log_evidence_terms() const;
  // eps*_t and G_t for t in 1..T (requires y*_t, H*_t; see CollapsedSystem).
  Vector innovation(const CollapsedSystem& sys, int t) const;
  Matrix innovation_cov(const CollapsedSystem& sys, int t) const;
};

struct SmootherResult {
  SmoothedMoments moments;
  FilterByproducts byproducts;
  Matrix g;                // n x s, g_i'
  std::vector<Matrix> q;   // n of s x s
};

// Kalman filter and fixed-interval smoother over the collapsed system.
SmootherResult smooth(const CollapsedSystem& sys, const Panel& panel, int r);

// g_i = sum_t a_{i,t} y_{i,t} E[F_t], Q_i = sum_t a_{i,t} E[F_t F_t'].
void accumulate_variable_stats(const SmoothedMoments& moments, const Panel& panel, Matrix& g,
                               std::vector<Matrix>& q);

}  // namespace vidfm
