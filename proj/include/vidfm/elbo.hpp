#pragma once

#include "vidfm/kalman.hpp"
#include "vidfm/types.hpp"

namespace vidfm {

struct ElboBreakdown {
  double f_terms = 0.0;
  double lambda_terms = 0.0;
  double phi_terms = 0.0;
  double sigma_eps_terms = 0.0;
  double sigma_u_terms = 0.0;
  double z_terms = 0.0;
  double total = 0.0;
};

// ELBO with q(F) at its optimum for the theta and Z blocks in `state`, i.e. `sys` and
// `byproducts` must come from build_collapsed_system(state, ctx) and smooth().
ElboBreakdown compute_elbo(const VariationalState& state, const CollapsedSystem& sys,
                           const FilterByproducts& byproducts, const ModelContext& ctx);

// E[log sigma^2] under scaled-inverse-chi^2(dof, scale).
double expected_log_scale(double dof, double scale);

// KL(Scaled-Inv-chi^2(dof_q, scale_q) || Scaled-Inv-chi^2(dof_p, scale_p)).
double kl_scaled_inv_chi2(double dof_q, double scale_q, double dof_p, double scale_p);

// E_{sigma^2}[KL(N(mu, sigma^2 cov) || N(0, sigma^2 prior_cov))] with E[1/sigma^2] = 1/psi2.
double kl_scaled_gaussian(const Vector& mu, const Matrix& cov, double psi2, const Matrix& prior_inv,
                          double prior_logdet);

// KL(Bernoulli(b) || Bernoulli(beta)) with beta given through its clamped logit.
double kl_bernoulli(double b, double logit_beta);

}  // namespace vidfm
