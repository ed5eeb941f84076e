#include "vidfm/em.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>

namespace vidfm {

namespace {

constexpr double kRelativeVarianceFloor = 1e-10;

SmootherResult e_step(const EmParams& params, const Panel& panel, const ModelDims& dims, const EmConfig& cfg) {
  const int s = dims.s();
  const CollapsedSystem sys =
      build_point_system(params.loadings, params.sigma2_eps, params.phi, Vector::Ones(dims.r()),
                         cfg.f0_variance * Matrix::Identity(s, s), panel, dims.r(), dims.p());
  return smooth(sys, panel, dims.r());
}

}  // namespace

Matrix principal_component_path(const Panel& panel, int r, int p) {
  const int n = panel.n();
  const int T = panel.T();
  if (n < r || T < r) {
    throw ConfigError("cannot extract " + std::to_string(r) + " principal components from a " +
                      std::to_string(n) + " x " + std::to_string(T) + " panel");
  }
  Matrix filled = panel.y();
  for (int i = 0; i < n; ++i) {
    const int ti = panel.n_available(i);
    const double mean = ti > 0 ? panel.y().row(i).sum() / ti : 0.0;
    for (int t = 0; t < T; ++t) {
      filled(i, t) = panel.available(i, t) ? panel.y(i, t) - mean : 0.0;
    }
  }
  Eigen::BDCSVD<Matrix> svd(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix f = std::sqrt(static_cast<double>(T)) * svd.matrixV().leftCols(r);  // T x r
  for (int j = 0; j < r; ++j) {
    Eigen::Index arg = 0;
    svd.matrixU().col(j).cwiseAbs().maxCoeff(&arg);
    if (svd.matrixU()(arg, j) < 0.0) f.col(j) = -f.col(j);
  }
  const int s = r * (p + 1);
  Matrix path = Matrix::Zero(T + 1, s);
  for (int t = 1; t <= T; ++t) {
    for (int l = 0; l <= p && t - l >= 1; ++l) {
      path.block(t, l * r, 1, r) = f.row(t - l - 1);
    }
  }
  return path;
}

EmParams em_m_step(const SmoothedMoments& moments, const Matrix& g, const std::vector<Matrix>& q,
                   const Panel& panel, int r) {
  const int n = panel.n();
  const auto s = g.cols();
  EmParams out;
  out.loadings = Matrix::Zero(n, s);
  out.sigma2_eps = Vector::Ones(n);
  bool singular = false;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const int ti = panel.n_available(i);
    if (ti == 0) continue;
    const Matrix& qi = q[static_cast<std::size_t>(i)];
    Eigen::LLT<Matrix> llt(qi);
    if (llt.info() != Eigen::Success) {
#pragma omp atomic write
      singular = true;
      continue;
    }
    const Vector gi = g.row(i).transpose();
    const Vector lam = llt.solve(gi);
    const double sy2 = panel.y().row(i).squaredNorm();
    const double floor = kRelativeVarianceFloor * std::max(sy2 / ti, 1e-300);
    out.loadings.row(i) = lam.transpose();
    out.sigma2_eps(i) = std::max((sy2 - gi.dot(lam)) / ti, floor);
  }
  if (singular) {
    throw NumericalError("EM M-step normal equations for the loadings are not positive definite");
  }
  Eigen::LLT<Matrix> llt(moments.sum_lag_second);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("EM M-step normal equations for the transition are not positive definite");
  }
  out.phi = llt.solve(moments.sum_cross.transpose()).transpose();
  (void)r;
  return out;
}

EmParams em_initial_params(const Panel& panel, const ModelDims& dims) {
  const Matrix path = principal_component_path(panel, dims.r(), dims.p());
  const SmoothedMoments mo = SmoothedMoments::point_mass(path, dims.r());
  Matrix g;
  std::vector<Matrix> q;
  accumulate_variable_stats(mo, panel, g, q);
  return em_m_step(mo, g, q, panel, dims.r());
}

double em_log_likelihood(const FilterByproducts& byproducts, const EmParams& params, const Panel& panel) {
  double ll = byproducts.log_evidence_terms();
  for (int i = 0; i < panel.n(); ++i) {
    const int ti = panel.n_available(i);
    ll -= 0.5 * ti * (std::log(2.0 * std::numbers::pi) + std::log(params.sigma2_eps(i)));
  }
  return ll;
}

EmReport run_em(const Panel& panel, const ModelDims& dims, const EmConfig& cfg) {
  return run_em(panel, dims, cfg, em_initial_params(panel, dims));
}

EmReport run_em(const Panel& panel, const ModelDims& dims, const EmConfig& cfg, EmParams init) {
  EmReport report;
  report.params = std::move(init);
  for (;;) {
    SmootherResult sm = e_step(report.params, panel, dims, cfg);
    const double ll = em_log_likelihood(sm.byproducts, report.params, panel);
    if (!std::isfinite(ll)) throw NumericalError("EM log-likelihood is not finite");
    const bool have_prev = !report.loglik.empty();
    const double prev = have_prev ? report.loglik.back() : 0.0;
    report.loglik.push_back(ll);
    report.moments = std::move(sm.moments);
    if (have_prev && std::abs(ll - prev) / (std::abs(prev) + 1.0) < cfg.tol) {
      report.converged = true;
      break;
    }
    if (report.iterations >= cfg.max_iter) {
      spdlog::warn("EM stopped at the iteration cap ({}) without converging", cfg.max_iter);
      break;
    }
    report.params = em_m_step(report.moments, sm.g, sm.q, panel, dims.r());
    ++report.iterations;
  }
  return report;
}

}  // namespace vidfm
