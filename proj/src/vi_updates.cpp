#include "vidfm/vi_updates.hpp"

#include "vidfm/special.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <sstream>

namespace vidfm {

namespace {

constexpr double kScaleFloor = 1e-12;

struct Conjugate {
  Vector mean;
  Matrix cov;
  double quad = 0.0;  // mean' A mean
};

Conjugate solve_conjugate(const Matrix& a, const Vector& rhs, const char* what, int index) {
  Eigen::LLT<Matrix> llt(0.5 * (a + a.transpose()));
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "normal-equation matrix for " << what << "[" << index << "] is not positive definite";
    throw NumericalError(os.str());
  }
  Conjugate c;
  c.mean = llt.solve(rhs);
  c.quad = rhs.dot(c.mean);
  c.cov = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  c.cov = 0.5 * (c.cov + c.cov.transpose());
  return c;
}

double residual_scale(double numerator, double dof, const char* what, int index) {
  const double value = numerator / dof;
  if (value < kScaleFloor || !std::isfinite(value)) {
    if (!std::isfinite(value) || numerator < -1e-10 * dof) {
      std::ostringstream os;
      os << "inconsistent moments: residual scale for " << what << "[" << index << "] is " << value;
      throw NumericalError(os.str());
    }
    spdlog::warn("residual scale for {}[{}] = {:.3e} clamped to {:.0e}", what, index, value, kScaleFloor);
    return kScaleFloor;
  }
  return value;
}

}  // namespace

void update_transition(const SmoothedMoments& moments, const ModelContext& ctx, VariationalState& state) {
  const int r = ctx.dims().r();
  const int s = ctx.dims().s();
  const auto& prior = ctx.prior();
  state.mu_phi.resize(r, s);
  state.sigma_phi.resize(static_cast<std::size_t>(r));
  state.psi2_u.resize(r);
  for (int j = 0; j < r; ++j) {
    const Matrix a = moments.sum_lag_second + ctx.v_phi_inv(j);
    const Vector rhs = moments.sum_cross.row(j).transpose();
    Conjugate c = solve_conjugate(a, rhs, "phi", j);
    state.mu_phi.row(j) = c.mean.transpose();
    state.sigma_phi[static_cast<std::size_t>(j)] = std::move(c.cov);
    const double num = prior.nu_u(j) * prior.tau2_u(j) + moments.sum_f2(j) - c.quad;
    state.psi2_u(j) = residual_scale(num, prior.nu_u(j) + moments.T, "psi2_u", j);
  }
}

void update_loadings(const ModelContext& ctx, VariationalState& state) {
  const int n = ctx.dims().n();
  const int s = ctx.dims().s();
  const auto& prior = ctx.prior();
  const auto& panel = ctx.panel();
  state.mu_lambda.resize(n, s);
  state.sigma_lambda.resize(static_cast<std::size_t>(n));
  state.psi2_eps.resize(n);
  state.r_lambda.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const Matrix a = state.p_sel[ii].cwiseProduct(state.q[ii]) + ctx.v_lambda_inv(i);
    const Vector rhs = state.b.row(i).transpose().cwiseProduct(state.g.row(i).transpose());
    Conjugate c = solve_conjugate(a, rhs, "lambda", i);
    const double num = prior.nu_eps(i) * prior.tau2_eps(i) + ctx.sum_y2(i) - c.quad;
    const double psi2 = residual_scale(num, prior.nu_eps(i) + panel.n_available(i), "psi2_eps", i);
    state.mu_lambda.row(i) = c.mean.transpose();
    state.psi2_eps(i) = psi2;
    state.r_lambda[ii] = c.cov + c.mean * c.mean.transpose() / psi2;
    state.sigma_lambda[ii] = std::move(c.cov);
  }
}

double selector_statistic(const VariationalState& state, int i, int k) {
  const auto ii = static_cast<std::size_t>(i);
  const Matrix& rr = state.r_lambda[ii];
  const Matrix& qq = state.q[ii];
  double gamma = state.mu_lambda(i, k) * state.g(i, k) / state.psi2_eps(i) - 0.5 * rr(k, k) * qq(k, k);
  for (Eigen::Index m = 0; m < rr.cols(); ++m) {
    if (m == k) continue;
    gamma -= state.b(i, m) * rr(k, m) * qq(k, m);
  }
  return gamma;
}

void update_selectors(const ModelContext& ctx, VariationalState& state) {
  const int n = ctx.dims().n();
  const int s = ctx.dims().s();
  state.p_sel.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < s; ++k) {
      state.b(i, k) = expit(selector_statistic(state, i, k) + ctx.logit_beta(i, k));
    }
    state.p_sel[static_cast<std::size_t>(i)] = selector_second_moment(state.b.row(i).transpose());
  }
}

}  // namespace vidfm
