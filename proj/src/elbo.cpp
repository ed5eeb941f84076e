#include "vidfm/elbo.hpp"

#include "vidfm/special.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace vidfm {

namespace {

void require_finite(double value, const char* group, int index) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite ELBO term in " << group;
    if (index >= 0) os << " at index " << index;
    throw NumericalError(os.str());
  }
}

// log(1 + exp(x))
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double expected_log_scale(double dof, double scale) {
  return std::log(0.5 * dof * scale) - digamma(0.5 * dof);
}

double kl_scaled_inv_chi2(double dof_q, double scale_q, double dof_p, double scale_p) {
  // Both are inverse-gamma(dof/2, dof*scale/2).
  const double aq = 0.5 * dof_q;
  const double bq = 0.5 * dof_q * scale_q;
  const double ap = 0.5 * dof_p;
  const double bp = 0.5 * dof_p * scale_p;
  return (aq - ap) * digamma(aq) - std::lgamma(aq) + std::lgamma(ap) + ap * (std::log(bq) - std::log(bp)) +
         aq * (bp - bq) / bq;
}

double kl_scaled_gaussian(const Vector& mu, const Matrix& cov, double psi2, const Matrix& prior_inv,
                          double prior_logdet) {
  const double trace = prior_inv.cwiseProduct(cov).sum();
  const double quad = mu.dot(prior_inv * mu) / psi2;
  return 0.5 * (trace + quad - static_cast<double>(mu.size()) + prior_logdet - logdet_spd(cov));
}

double kl_bernoulli(double b, double logit_beta) {
  const double log_beta = -softplus(-logit_beta);
  const double log_not_beta = -softplus(logit_beta);
  double kl = 0.0;
  if (b > 0.0) kl += b * (std::log(b) - log_beta);
  if (b < 1.0) kl += (1.0 - b) * (std::log1p(-b) - log_not_beta);
  return kl;
}

ElboBreakdown compute_elbo(const VariationalState& state, const CollapsedSystem& sys,
                           const FilterByproducts& byproducts, const ModelContext& ctx) {
  const auto& dims = ctx.dims();
  const auto& prior = ctx.prior();
  const auto& panel = ctx.panel();
  const int n = dims.n();
  const int r = dims.r();
  const int s = dims.s();
  const int T = dims.T();
  ElboBreakdown e;

  // log normalizer of q(F) plus the expected normalizing constants of the observation and
  // transition densities.
  double f_terms = byproducts.log_evidence_terms();
  f_terms -= 0.5 * (ctx.v_f0_logdet() - logdet_spd(sys.transition.sigma_f0));
  for (int i = 0; i < n; ++i) {
    const double ti = panel.n_available(i);
    if (ti == 0.0) continue;
    const double dof = prior.nu_eps(i) + ti;
    f_terms -= 0.5 * ti * (std::log(2.0 * std::numbers::pi) + expected_log_scale(dof, state.psi2_eps(i)));
  }
  for (int j = 0; j < r; ++j) {
    const double dof = prior.nu_u(j) + T;
    f_terms -= 0.5 * T * (expected_log_scale(dof, state.psi2_u(j)) - std::log(state.psi2_u(j)));
  }
  require_finite(f_terms, "F terms", -1);
  e.f_terms = f_terms;

  for (int i = 0; i < n; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const double kl = kl_scaled_gaussian(state.mu_lambda.row(i).transpose(), state.sigma_lambda[ii],
                                         state.psi2_eps(i), ctx.v_lambda_inv(i), ctx.v_lambda_logdet(i));
    require_finite(kl, "lambda terms", i);
    e.lambda_terms -= kl;
    const double kls = kl_scaled_inv_chi2(prior.nu_eps(i) + panel.n_available(i), state.psi2_eps(i),
                                          prior.nu_eps(i), prior.tau2_eps(i));
    require_finite(kls, "sigma_eps terms", i);
    e.sigma_eps_terms -= kls;
    for (int k = 0; k < s; ++k) {
      const double klz = kl_bernoulli(state.b(i, k), ctx.logit_beta(i, k));
      require_finite(klz, "z terms", i);
      e.z_terms -= klz;
    }
  }
  for (int j = 0; j < r; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const double kl = kl_scaled_gaussian(state.mu_phi.row(j).transpose(), state.sigma_phi[jj], state.psi2_u(j),
                                         ctx.v_phi_inv(j), ctx.v_phi_logdet(j));
    require_finite(kl, "phi terms", j);
    e.phi_terms -= kl;
    const double kls = kl_scaled_inv_chi2(prior.nu_u(j) + T, state.psi2_u(j), prior.nu_u(j), prior.tau2_u(j));
    require_finite(kls, "sigma_u terms", j);
    e.sigma_u_terms -= kls;
  }
  e.total = e.f_terms + e.lambda_terms + e.phi_terms + e.sigma_eps_terms + e.sigma_u_terms + e.z_terms;
  return e;
}

}  // namespace vidfm
