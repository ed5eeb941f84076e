#include "vidfm/fit.hpp"

#include "vidfm/vi_updates.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <sstream>

namespace vidfm {

namespace {

constexpr double kMonotoneTolerance = 1e-6;

double relative_change(double now, double prev) { return (now - prev) / (std::abs(prev) + 1.0); }

}  // namespace

Panel standardize(const Panel& panel, Standardization* out) {
  const int n = panel.n();
  Standardization st{Vector::Zero(n), Vector::Ones(n)};
  Matrix y = panel.y();
  for (int i = 0; i < n; ++i) {
    const int ti = panel.n_available(i);
    if (ti == 0) continue;
    const double mean = panel.y().row(i).sum() / ti;
    double ss = 0.0;
    for (int t = 0; t < panel.T(); ++t) {
      if (panel.available(i, t)) ss += (panel.y(i, t) - mean) * (panel.y(i, t) - mean);
    }
    const double sd = ti > 1 ? std::sqrt(ss / (ti - 1)) : 0.0;
    st.mean(i) = mean;
    if (sd > 0.0) {
      st.sd(i) = sd;
    } else {
      spdlog::warn("variable {} has no spread over its available entries; left unscaled", i);
    }
    for (int t = 0; t < panel.T(); ++t) y(i, t) = (y(i, t) - mean) / st.sd(i);
  }
  if (out != nullptr) *out = st;
  return Panel(std::move(y), panel.mask());
}

VariationalState prior_state(const ModelContext& ctx) {
  const auto& dims = ctx.dims();
  const auto& prior = ctx.prior();
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();
  VariationalState st;
  st.mu_lambda = Matrix::Zero(n, s);
  st.sigma_lambda = prior.v_lambda;
  st.psi2_eps = prior.tau2_eps;
  st.mu_phi = Matrix::Zero(r, s);
  st.sigma_phi = prior.v_phi;
  st.psi2_u = prior.tau2_u;
  st.b = prior.beta;
  st.g = Matrix::Zero(n, s);
  st.q.assign(static_cast<std::size_t>(n), Matrix::Zero(s, s));
  st.refresh_selector_moments();
  st.refresh_loading_moments();
  return st;
}

VariationalState regression_state(const ModelContext& ctx, const Matrix& path) {
  const auto& dims = ctx.dims();
  const SmoothedMoments mo = SmoothedMoments::point_mass(path, dims.r());
  VariationalState st = prior_state(ctx);
  st.b = Matrix::Ones(dims.n(), dims.s());
  st.refresh_selector_moments();
  accumulate_variable_stats(mo, ctx.panel(), st.g, st.q);
  update_transition(mo, ctx, st);
  update_loadings(ctx, st);
  return st;
}

VariationalState initialize(const ModelContext& ctx, const FitConfig& cfg, const EmReport* em) {
  const auto& dims = ctx.dims();
  if (cfg.init) {
    validate_state(*cfg.init, dims);
    return *cfg.init;
  }
  if (dims.n() < dims.r()) {
    throw ConfigError("cannot initialize " + std::to_string(dims.r()) + " factors from " +
                      std::to_string(dims.n()) + " variables");
  }
  if (ctx.panel().mask().count() == 0) {
    spdlog::warn("panel has no available observations; starting from the prior");
    return prior_state(ctx);
  }
  Matrix path;
  if (em != nullptr) {
    path.resize(dims.T() + 1, dims.s());
    for (int t = 0; t <= dims.T(); ++t) path.row(t) = em->moments.mean[static_cast<std::size_t>(t)].transpose();
  } else if (cfg.em_refine) {
    const EmReport rep = run_em(ctx.panel(), dims, cfg.em);
    path.resize(dims.T() + 1, dims.s());
    for (int t = 0; t <= dims.T(); ++t) path.row(t) = rep.moments.mean[static_cast<std::size_t>(t)].transpose();
  } else {
    path = principal_component_path(ctx.panel(), dims.r(), dims.p());
  }
  return regression_state(ctx, path);
}

FactorUpdate update_factors(const ModelContext& ctx, VariationalState& state) {
  FactorUpdate fu{build_collapsed_system(state, ctx), {}};
  fu.smoothed = smooth(fu.system, ctx.panel(), ctx.dims().r());
  state.g = fu.smoothed.g;
  state.q = fu.smoothed.q;
  return fu;
}

FitReport run_vi(const ModelContext& ctx, const FitConfig& cfg, VariationalState init) {
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1) {
    throw ConfigError("fit config needs tol > 0 and max_iter >= 1");
  }
  const auto start = std::chrono::steady_clock::now();
  validate_state(init, ctx.dims());
  FitReport report;
  report.state = std::move(init);
  VariationalState& st = report.state;
  st.refresh_selector_moments();
  st.refresh_loading_moments();

  FactorUpdate fu = update_factors(ctx, st);
  report.trace.push_back(compute_elbo(st, fu.system, fu.smoothed.byproducts, ctx));

  while (report.sweeps < cfg.max_iter) {
    update_transition(fu.smoothed.moments, ctx, st);
    update_loadings(ctx, st);
    update_selectors(ctx, st);
    fu = update_factors(ctx, st);
    const ElboBreakdown e = compute_elbo(st, fu.system, fu.smoothed.byproducts, ctx);
    const double prev = report.trace.back().total;
    ++report.sweeps;
    report.trace.push_back(e);
    const double change = relative_change(e.total, prev);
    if (change < -kMonotoneTolerance) {
      if (cfg.on_failure) cfg.on_failure(st);
      std::ostringstream os;
      os << "ELBO decreased at sweep " << report.sweeps << ": " << prev << " -> " << e.total;
      throw NumericalError(os.str());
    }
    if (std::abs(change) < cfg.tol) {
      report.converged = true;
      break;
    }
  }
  report.moments = std::move(fu.smoothed.moments);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

FitReport run_with_reruns(const ModelContext& ctx, const FitConfig& cfg, VariationalState init) {
  const auto start = std::chrono::steady_clock::now();
  FitReport best = run_vi(ctx, cfg, std::move(init));
  if (!cfg.rerun) return best;
  double prev = best.elbo();
  VariationalState next = best.state;
  int reruns = 0;
  while (reruns < cfg.max_reruns) {
    next.b.setOnes();
    FitReport rep = run_vi(ctx, cfg, std::move(next));
    ++reruns;
    const double gain = rep.elbo() - prev;
    prev = rep.elbo();
    next = rep.state;
    if (rep.elbo() > best.elbo()) best = std::move(rep);
    if (!(gain > cfg.rerun_criterion)) break;
  }
  best.reruns = reruns;
  best.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return best;
}

FitReport fit(const ModelContext& ctx, const FitConfig& cfg, const EmReport* em) {
  VariationalState init = initialize(ctx, cfg, em);
  return cfg.rerun ? run_with_reruns(ctx, cfg, std::move(init)) : run_vi(ctx, cfg, std::move(init));
}

Matrix dynamic_factor_means(const SmoothedMoments& moments, int r) {
  Matrix f(moments.T, r);
  for (int t = 1; t <= moments.T; ++t) f.row(t - 1) = moments.mean[static_cast<std::size_t>(t)].head(r).transpose();
  return f;
}

}  // namespace vidfm
