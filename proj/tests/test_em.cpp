#include "doctest.h"

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vidfm/em.hpp"
#include "vidfm/fit.hpp"
#include "vidfm/simulate.hpp"

#include <cmath>

using namespace vidfm;

namespace {

// y = Lambda F' exactly, with AR(1) factors.
Panel noiseless_panel(Rng& rng, int n, int T, int r, Matrix* common) {
  Matrix f(T, r);
  Vector prev = Vector::Zero(r);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < r; ++j) prev(j) = 0.6 * prev(j) + rng.normal();
    f.row(t) = prev.transpose();
  }
  Matrix lambda(n, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) lambda(i, j) = rng.normal();
  *common = lambda * f.transpose();
  return Panel(*common, AvailabilityMask(n, T, true));
}

}  // namespace

TEST_CASE("principal component path layout") {
  Rng rng(4);
  const Panel panel = fixture::random_panel(rng, 6, 20, 0.1);
  const Matrix path = principal_component_path(panel, 2, 2);
  CHECK(path.rows() == 21);
  CHECK(path.cols() == 6);
  CHECK(path.row(0).cwiseAbs().maxCoeff() == 0.0);
  for (int j = 0; j < 2; ++j) CHECK(path.col(j).squaredNorm() == doctest::Approx(20.0).epsilon(1e-10));
  for (int t = 2; t <= 20; ++t) CHECK(path.block(t, 2, 1, 2) == path.block(t - 1, 0, 1, 2));
  CHECK(path.block(1, 2, 1, 4).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(principal_component_path(panel, 7, 0), ConfigError);
  CHECK_THROWS_AS(principal_component_path(fixture::random_panel(rng, 6, 3, 0.0), 4, 0), ConfigError);
}

TEST_CASE("M-step on a known path equals least squares") {
  Rng rng(6);
  const int n = 4, T = 30, r = 2, p = 1;
  const Panel panel = fixture::random_panel(rng, n, T, 0.2);
  Matrix path(T + 1, 4);
  for (int t = 0; t <= T; ++t)
    for (int k = 0; k < 4; ++k) path(t, k) = rng.normal();
  for (int t = 1; t <= T; ++t) path.block(t, 2, 1, 2) = path.block(t - 1, 0, 1, 2);
  const SmoothedMoments mo = SmoothedMoments::point_mass(path, r);
  Matrix g;
  std::vector<Matrix> q;
  accumulate_variable_stats(mo, panel, g, q);
  const EmParams par = em_m_step(mo, g, q, panel, r);
  for (int i = 0; i < n; ++i) {
    std::vector<int> rows;
    for (int t = 0; t < T; ++t)
      if (panel.available(i, t)) rows.push_back(t);
    Matrix x(static_cast<Eigen::Index>(rows.size()), 4);
    Vector y(x.rows());
    for (std::size_t a = 0; a < rows.size(); ++a) {
      x.row(static_cast<Eigen::Index>(a)) = path.row(rows[a] + 1);
      y(static_cast<Eigen::Index>(a)) = panel.y(i, rows[a]);
    }
    const Vector ols = x.colPivHouseholderQr().solve(y);
    CHECK(fixture::max_abs_diff(par.loadings.row(i).transpose(), ols) < 1e-10);
    CHECK(par.sigma2_eps(i) == doctest::Approx((y - x * ols).squaredNorm() / x.rows()).epsilon(1e-10));
  }
  const Matrix xl = path.topRows(T);
  for (int j = 0; j < r; ++j) {
    const Vector ols = xl.colPivHouseholderQr().solve(Vector(path.col(j).tail(T)));
    CHECK(fixture::max_abs_diff(par.phi.row(j).transpose(), ols) < 1e-10);
  }
  (void)p;
}

TEST_CASE("EM log-likelihood equals the Gaussian density of the available data") {
  Rng rng(14);
  const int n = 3, T = 5, r = 1, p = 1;
  const Panel panel = fixture::random_panel(rng, n, T, 0.3);
  EmParams par{Matrix::Random(n, 2), Vector::Constant(n, 0.7), Matrix(1, 2)};
  par.phi << 0.5, -0.2;
  par.sigma2_eps(1) = 1.4;
  const CollapsedSystem sys = build_point_system(par.loadings, par.sigma2_eps, par.phi, Vector::Ones(1),
                                                 2.0 * Matrix::Identity(2, 2), panel, r, p);
  const SmootherResult sm = smooth(sys, panel, r);
  const oracle::DenseMoments dm = oracle::dense_conditioning(par.loadings, par.sigma2_eps, par.phi, Vector::Ones(1),
                                                             2.0 * Matrix::Identity(2, 2), panel, r, p);
  CHECK(em_log_likelihood(sm.byproducts, par, panel) == doctest::Approx(dm.log_normalizer).epsilon(1e-10));
}

TEST_CASE("EM log-likelihood never decreases") {
  const ModelDims d(32, 80, 2, 1);
  const SimResult sim = simulate_dfm(SimConfig{d, 0.3, 17, MissingPattern::kExperiment2});
  const EmReport rep = run_em(standardize(sim.panel), d, EmConfig{});
  REQUIRE(rep.loglik.size() > 2);
  for (std::size_t k = 1; k < rep.loglik.size(); ++k)
    CHECK(rep.loglik[k] - rep.loglik[k - 1] >= -1e-8 * (std::abs(rep.loglik[k - 1]) + 1.0));
  CHECK(rep.converged);
}

TEST_CASE("noiseless rank-r panel: common component recovered") {
  Rng rng(5);
  Matrix common;
  const Panel panel = noiseless_panel(rng, 12, 60, 2, &common);
  const ModelDims d(12, 60, 2, 0);
  const EmReport rep = run_em(panel, d, EmConfig{});
  Matrix fit(12, 60);
  for (int t = 1; t <= 60; ++t) fit.col(t - 1) = rep.params.loadings * rep.moments.mean[static_cast<std::size_t>(t)];
  CHECK((fit - common).cwiseAbs().maxCoeff() / common.cwiseAbs().maxCoeff() < 1e-6);
  // variances end on the floor; the likelihood must still be evaluated without cancellation noise
  CHECK(rep.converged);
  for (std::size_t k = 1; k < rep.loglik.size(); ++k)
    CHECK(rep.loglik[k] - rep.loglik[k - 1] >= -1e-10 * std::abs(rep.loglik[k - 1]));
}

TEST_CASE("values under masked cells do not matter") {
  Rng rng(8);
  const Panel a = fixture::random_panel(rng, 8, 30, 0.25);
  Matrix y = a.y();
  for (int i = 0; i < 8; ++i)
    for (int t = 0; t < 30; ++t)
      if (!a.available(i, t)) y(i, t) = 1e6;
  const Panel b(y, a.mask());
  const ModelDims d(8, 30, 1, 1);
  const EmReport ra = run_em(a, d, EmConfig{});
  const EmReport rb = run_em(b, d, EmConfig{});
  CHECK(ra.loglik == rb.loglik);
  CHECK(ra.params.loadings == rb.params.loadings);
}

TEST_CASE("converged EM is a fixed point") {
  const ModelDims d(20, 100, 1, 0);
  const SimResult sim = simulate_dfm(SimConfig{d, 0.5, 4, MissingPattern::kNone});
  const Panel panel = standardize(sim.panel);
  EmConfig cfg;
  cfg.tol = 1e-13;
  cfg.max_iter = 5000;
  const EmReport rep = run_em(panel, d, cfg);
  EmConfig once = cfg;
  once.max_iter = 1;
  const EmReport next = run_em(panel, d, once, rep.params);
  CHECK((next.params.loadings - rep.params.loadings).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((next.params.phi - rep.params.phi).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(next.loglik.back() == doctest::Approx(rep.loglik.back()).epsilon(1e-10));
}
