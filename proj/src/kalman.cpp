#include "vidfm/kalman.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <sstream>

namespace vidfm {

namespace {

constexpr double kRidgeThreshold = 1e-12;
constexpr double kRidge = 1e-10;

// Precision and information contributions of the observed variables at each t.
void assemble_observations(CollapsedSystem& sys, const Panel& panel,
                           const std::vector<Matrix>* extra_precision, const Matrix* phi_uncertainty) {
  const int n = panel.n();
  const int T = panel.T();
  const int s = sys.s;
  const Vector inv_psi = sys.psi2_eps.cwiseInverse();

  std::vector<Matrix> outer(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vector m = sys.loading_mean.row(i).transpose();
    outer[static_cast<std::size_t>(i)] = m * m.transpose() * inv_psi(i);
  }

  const Matrix scaled_y = inv_psi.asDiagonal() * panel.y();
  const Matrix info = sys.loading_mean.transpose() * scaled_y;  // s x T

  sys.sigma_thz.assign(static_cast<std::size_t>(T), Matrix::Zero(s, s));
  sys.precision.assign(static_cast<std::size_t>(T), Matrix::Zero(s, s));
  sys.info.resize(static_cast<std::size_t>(T));
  sys.weighted_y2.assign(static_cast<std::size_t>(T), 0.0);

#pragma omp parallel for schedule(static)
  for (int t = 0; t < T; ++t) {
    Matrix thz = Matrix::Zero(s, s);
    Matrix prec = Matrix::Zero(s, s);
    double wy2 = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!panel.available(i, t)) continue;
      prec += outer[static_cast<std::size_t>(i)];
      if (extra_precision != nullptr) thz += (*extra_precision)[static_cast<std::size_t>(i)];
      wy2 += panel.y(i, t) * panel.y(i, t) * inv_psi(i);
    }
    if (phi_uncertainty != nullptr && t + 1 < T) thz += *phi_uncertainty;
    thz = 0.5 * (thz + thz.transpose());
    prec += thz;
    sys.sigma_thz[static_cast<std::size_t>(t)] = thz;
    sys.precision[static_cast<std::size_t>(t)] = 0.5 * (prec + prec.transpose());
    sys.info[static_cast<std::size_t>(t)] = info.col(t);
    sys.weighted_y2[static_cast<std::size_t>(t)] = wy2;
  }
}

void require_finite(const Matrix& m, const char* what, int t) {
  if (!m.allFinite()) {
    std::ostringstream os;
    os << "non-finite " << what << " in Kalman recursion at t=" << t;
    throw NumericalError(os.str());
  }
}

void require_finite(const Vector& v, const char* what, int t) {
  if (!v.allFinite()) {
    std::ostringstream os;
    os << "non-finite " << what << " in Kalman recursion at t=" << t;
    throw NumericalError(os.str());
  }
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

Matrix companion_matrix(const Matrix& mu_phi, int r, int p) {
  const int s = r * (p + 1);
  Matrix c = Matrix::Zero(s, s);
  c.topRows(r) = mu_phi;
  if (p > 0) c.block(r, 0, r * p, r * p).setIdentity();
  return c;
}

Matrix CollapsedSystem::regularized_precision(int t) const {
  Matrix k = precision[static_cast<std::size_t>(t - 1)];
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kRidgeThreshold) {
    spdlog::warn("collapsed precision at t={} is near singular (min eigenvalue {:.3e}); adding ridge {:.0e}",
                 t, eig.eigenvalues().minCoeff(), kRidge);
    k += kRidge * Matrix::Identity(s, s);
  }
  return k;
}

Matrix CollapsedSystem::h_star(int t) const {
  Eigen::LLT<Matrix> llt(regularized_precision(t));
  return symmetrized(llt.solve(Matrix::Identity(s, s)));
}

Vector CollapsedSystem::y_star(int t) const {
  Eigen::LLT<Matrix> llt(regularized_precision(t));
  return llt.solve(info[static_cast<std::size_t>(t - 1)]);
}

CollapsedSystem build_collapsed_system(const VariationalState& state, const ModelContext& ctx) {
  const auto& dims = ctx.dims();
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();

  CollapsedSystem sys;
  sys.T = dims.T();
  sys.s = s;
  sys.loading_mean = state.b.cwiseProduct(state.mu_lambda);
  sys.psi2_eps = state.psi2_eps;
  const Matrix ones = Matrix::Ones(n, s);
  sys.w = state.psi2_eps.cwiseInverse().asDiagonal() *
          state.b.cwiseProduct(ones - state.b).cwiseProduct(state.mu_lambda).cwiseProduct(state.mu_lambda);

  std::vector<Matrix> extra(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Matrix d = state.p_sel[static_cast<std::size_t>(i)].cwiseProduct(state.sigma_lambda[static_cast<std::size_t>(i)]);
    d.diagonal() += sys.w.row(i).transpose();
    extra[static_cast<std::size_t>(i)] = std::move(d);
  }
  Matrix phi_unc = Matrix::Zero(s, s);
  for (int j = 0; j < r; ++j) phi_unc += state.sigma_phi[static_cast<std::size_t>(j)];

  assemble_observations(sys, ctx.panel(), &extra, &phi_unc);

  sys.transition.companion = companion_matrix(state.mu_phi, r, dims.p());
  sys.transition.psi2_u = state.psi2_u;
  Matrix f0_precision = ctx.v_f0_inv() + phi_unc;
  sys.transition.sigma_f0 = inverse_spd(symmetrized(f0_precision));
  return sys;
}

CollapsedSystem build_point_system(const Matrix& loadings, const Vector& sigma2_eps, const Matrix& phi,
                                   const Vector& sigma2_u, const Matrix& sigma_f0, const Panel& panel,
                                   int r, int p) {
  CollapsedSystem sys;
  sys.T = panel.T();
  sys.s = static_cast<int>(loadings.cols());
  sys.loading_mean = loadings;
  sys.psi2_eps = sigma2_eps;
  sys.w = Matrix::Zero(loadings.rows(), loadings.cols());
  assemble_observations(sys, panel, nullptr, nullptr);
  sys.transition.companion = companion_matrix(phi, r, p);
  sys.transition.psi2_u = sigma2_u;
  sys.transition.sigma_f0 = sigma_f0;
  return sys;
}

double FilterByproducts::log_evidence_terms() const {
  double total = 0.0;
  for (std::size_t t = 0; t < log_det_ratio.size(); ++t) {
    total -= 0.5 * (log_det_ratio[t] + innovation_quad[t] + residual_quad[t]);
  }
  return total;
}

Vector FilterByproducts::innovation(const CollapsedSystem& sys, int t) const {
  return sys.y_star(t) - predicted_mean[static_cast<std::size_t>(t - 1)];
}

Matrix FilterByproducts::innovation_cov(const CollapsedSystem& sys, int t) const {
  return symmetrized(predicted_cov[static_cast<std::size_t>(t - 1)] + sys.h_star(t));
}

SmootherResult smooth(const CollapsedSystem& sys, const Panel& panel, int r) {
  const int T = sys.T;
  const int s = sys.s;
  const Matrix& c = sys.transition.companion;
  const Matrix eye = Matrix::Identity(s, s);

  SmootherResult out;
  FilterByproducts& fb = out.byproducts;
  fb.predicted_mean.resize(static_cast<std::size_t>(T));
  fb.predicted_cov.resize(static_cast<std::size_t>(T));
  fb.filtered_mean.resize(static_cast<std::size_t>(T + 1));
  fb.filtered_cov.resize(static_cast<std::size_t>(T + 1));
  fb.log_det_ratio.assign(static_cast<std::size_t>(T), 0.0);
  fb.innovation_quad.assign(static_cast<std::size_t>(T), 0.0);
  fb.residual_quad.assign(static_cast<std::size_t>(T), 0.0);

  fb.filtered_mean[0] = Vector::Zero(s);
  fb.filtered_cov[0] = symmetrized(sys.transition.sigma_f0);

  // sum_i a_{i,t} (y_{i,t} - m_i'F)^2 / psi2_i + F' Sigma^thetaZ_t F
  const auto fit_quad = [&](int t, const Vector& f) {
    const Vector fitted = sys.loading_mean * f;
    double q = f.dot(sys.sigma_thz[static_cast<std::size_t>(t - 1)] * f);
    for (int i = 0; i < panel.n(); ++i) {
      if (!panel.available(i, t - 1)) continue;
      const double e = panel.y(i, t - 1) - fitted(i);
      q += e * e / sys.psi2_eps(i);
    }
    return q;
  };

  for (int t = 1; t <= T; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    Vector m = c * fb.filtered_mean[ti - 1];
    Matrix pcov = c * fb.filtered_cov[ti - 1] * c.transpose();
    pcov.topLeftCorner(r, r).diagonal() += sys.transition.psi2_u;
    pcov = symmetrized(pcov);
    require_finite(pcov, "predicted covariance", t);
    fb.predicted_mean[ti - 1] = m;
    fb.predicted_cov[ti - 1] = pcov;

    const Matrix& k = sys.precision[ti - 1];
    const Vector& info = sys.info[ti - 1];

    // P+ = L (I + L' K L)^{-1} L' with P- = L L'.
    Eigen::LLT<Matrix> pchol(pcov);
    if (pchol.info() != Eigen::Success) {
      throw NumericalError("predicted covariance lost positive definiteness at t=" + std::to_string(t));
    }
    const Matrix l = pchol.matrixL();
    const Matrix inner = symmetrized(eye + l.transpose() * k * l);
    Eigen::LLT<Matrix> ichol(inner);
    if (ichol.info() != Eigen::Success) {
      throw NumericalError("filter update matrix not positive definite at t=" + std::to_string(t));
    }
    const Matrix il = ichol.matrixL();
    const Matrix half = il.triangularView<Eigen::Lower>().solve(l.transpose());  // Li^{-1} L'
    const Matrix post_cov = symmetrized(half.transpose() * half);
    const Vector d = info - k * m;
    const Vector v = ichol.solve(l.transpose() * d);  // post_mean = m + L v
    const Vector post_mean = m + l * v;
    require_finite(post_mean, "filtered mean", t);
    require_finite(post_cov, "filtered covariance", t);
    fb.filtered_mean[ti] = post_mean;
    fb.filtered_cov[ti] = post_cov;

    fb.log_det_ratio[ti - 1] = 2.0 * il.diagonal().array().log().sum();
    // Quadratic forms are evaluated at their minimizers in residual form; expanding them
    // (y'Psi^{-1}y - 2 info'F + F'KF) cancels badly when some psi2 is tiny.
    const double total_quad = fit_quad(t, post_mean) + v.squaredNorm();

    // Split off min_F of the same form without the prediction term, attained at K^+ info.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
    const Vector& ev = eig.eigenvalues();
    const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    Vector proj = eig.eigenvectors().transpose() * info;
    for (int a = 0; a < s; ++a) proj(a) = ev(a) > cutoff ? proj(a) / ev(a) : 0.0;
    const double residual = fit_quad(t, eig.eigenvectors() * proj);
    fb.residual_quad[ti - 1] = residual;
    fb.innovation_quad[ti - 1] = total_quad - residual;
  }

  // Fixed-interval smoother with lag-one cross moments.
  SmoothedMoments& mo = out.moments;
  mo.T = T;
  mo.mean.resize(static_cast<std::size_t>(T + 1));
  mo.second.resize(static_cast<std::size_t>(T + 1));
  mo.cross.assign(static_cast<std::size_t>(T + 1), Matrix::Zero(s, s));
  std::vector<Matrix> cov(static_cast<std::size_t>(T + 1));
  mo.mean[static_cast<std::size_t>(T)] = fb.filtered_mean[static_cast<std::size_t>(T)];
  cov[static_cast<std::size_t>(T)] = fb.filtered_cov[static_cast<std::size_t>(T)];
  for (int t = T - 1; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix& pnext = fb.predicted_cov[ti];  // P_{t+1|t}
    Eigen::LDLT<Matrix> ldlt(pnext);
    // J_t = P_{t|t} C' P_{t+1|t}^{-1}
    const Matrix j = ldlt.solve(c * fb.filtered_cov[ti]).transpose();
    mo.mean[ti] = fb.filtered_mean[ti] + j * (mo.mean[ti + 1] - fb.predicted_mean[ti]);
    cov[ti] = symmetrized(fb.filtered_cov[ti] + j * (cov[ti + 1] - pnext) * j.transpose());
    const Matrix lag_cov = cov[ti + 1] * j.transpose();  // Cov(F_{t+1}, F_t)
    mo.cross[ti + 1] = lag_cov + mo.mean[ti + 1] * mo.mean[ti].transpose();
    require_finite(cov[ti], "smoothed covariance", t);
  }
  for (int t = 0; t <= T; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    mo.second[ti] = symmetrized(cov[ti] + mo.mean[ti] * mo.mean[ti].transpose());
  }
  mo.accumulate_sums(r);
  accumulate_variable_stats(mo, panel, out.g, out.q);
  return out;
}

void accumulate_variable_stats(const SmoothedMoments& moments, const Panel& panel, Matrix& g,
                               std::vector<Matrix>& q) {
  const int n = panel.n();
  const int T = panel.T();
  const Eigen::Index s = moments.mean.front().size();
  g = Matrix::Zero(n, s);
  q.assign(static_cast<std::size_t>(n), Matrix::Zero(s, s));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Vector gi = Vector::Zero(s);
    Matrix qi = Matrix::Zero(s, s);
    for (int t = 1; t <= T; ++t) {
      if (!panel.available(i, t - 1)) continue;
      gi += panel.y(i, t - 1) * moments.mean[static_cast<std::size_t>(t)];
      qi += moments.second[static_cast<std::size_t>(t)];
    }
    g.row(i) = gi.transpose();
    q[static_cast<std::size_t>(i)] = qi;
  }
}

}  // namespace vidfm
