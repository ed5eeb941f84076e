// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
// --experiment2-full runs only the full-size experiment-2 comparison (slow).

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vidfm/em.hpp"
#include "vidfm/evaluate.hpp"
#include "vidfm/fit.hpp"
#include "vidfm/kalman.hpp"
#include "vidfm/simulate.hpp"
#include "vidfm/study.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>

using namespace vidfm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
              secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double moments_gap(const SmoothedMoments& mo, const oracle::DenseMoments& ref) {
  double gap = 0.0;
  for (int t = 0; t <= mo.T; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix cov = mo.second[ti] - mo.mean[ti] * mo.mean[ti].transpose();
    gap = std::max({gap, fixture::max_abs_diff(mo.mean[ti], ref.mean[ti]), fixture::max_abs_diff(cov, ref.cov[ti])});
    if (t > 0) {
      const Matrix lag = mo.cross[ti] - mo.mean[ti] * mo.mean[ti - 1].transpose();
      gap = std::max(gap, fixture::max_abs_diff(lag, ref.lag_cov[ti]));
    }
  }
  return gap;
}

Outcome prior_reduction() {
  Rng rng(101);
  const ModelDims d(4, 6, 2, 1);
  PriorSpec pr = PriorSpec::defaults(d, 0.35, 1.7, 2.5, 0.8);
  for (auto& v : pr.v_lambda) v = oracle::random_spd(rng, d.s(), 0.3, 3.0);
  for (int i = 0; i < d.n(); ++i) {
    pr.tau2_eps(i) = rng.uniform(0.2, 2.0);
    for (int k = 0; k < d.s(); ++k) pr.beta(i, k) = rng.uniform(0.05, 0.95);
  }
  const ModelContext ctx =
      ModelContext::validate(d, Panel(Matrix::Zero(4, 6), AvailabilityMask(4, 6, false)), pr);
  const FitReport rep = fit(ctx, FitConfig{});
  double gap = rep.state.mu_lambda.cwiseAbs().maxCoeff();
  gap = std::max(gap, (rep.state.psi2_eps - pr.tau2_eps).cwiseAbs().maxCoeff());
  gap = std::max(gap, (rep.state.b - pr.beta).cwiseAbs().maxCoeff());
  for (int i = 0; i < d.n(); ++i)
    gap = std::max(gap, fixture::max_abs_diff(rep.state.sigma_lambda[static_cast<std::size_t>(i)],
                                              pr.v_lambda[static_cast<std::size_t>(i)]));
  return {gap <= 1e-12, fmt("max deviation from prior %.2e", gap)};
}

Outcome smoother_oracle() {
  Rng rng(202);
  double dense_gap = 0.0, collapse_gap = 0.0;
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(3));
    const int T = 1 + static_cast<int>(rng.below(4));
    const int shape = static_cast<int>(rng.below(3));
    const int r = shape == 1 ? 2 : 1;
    const int p = shape == 2 ? 1 : 0;
    const ModelDims d(n, T, r, p);
    PriorSpec pr = PriorSpec::defaults(d, 0.5);
    pr.v_f0 = oracle::random_spd(rng, d.s(), 0.5, 2.0);
    const Panel panel = fixture::random_panel(rng, n, T, 0.25);
    const ModelContext ctx = ModelContext::validate(d, panel, pr);
    const VariationalState st = fixture::random_state(rng, d);
    const CollapsedSystem sys = build_collapsed_system(st, ctx);
    const SmootherResult res = smooth(sys, panel, r);
    dense_gap = std::max(dense_gap, moments_gap(res.moments, oracle::dense_collapsed(sys, r, p)));
    collapse_gap = std::max(collapse_gap, moments_gap(res.moments, oracle::uncollapsed_kalman(sys, panel, r)));

    // Point-parameter system against covariance-form conditioning.
    Matrix lam(n, d.s()), phi(r, d.s());
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d.s(); ++k) lam(i, k) = rng.normal();
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < d.s(); ++k) phi(j, k) = rng.uniform(-0.4, 0.4);
    Vector s2(n);
    for (int i = 0; i < n; ++i) s2(i) = rng.uniform(0.3, 1.5);
    const Vector su = Vector::Ones(r);
    const CollapsedSystem ps = build_point_system(lam, s2, phi, su, pr.v_f0, panel, r, p);
    dense_gap = std::max(dense_gap, moments_gap(smooth(ps, panel, r).moments,
                                                oracle::dense_conditioning(lam, s2, phi, su, pr.v_f0, panel, r, p)));
  }
  return {dense_gap <= 1e-8 && collapse_gap <= 1e-8,
          fmt("max gap to dense conditioning %.2e", dense_gap) + fmt(", collapsed vs uncollapsed %.2e", collapse_gap)};
}

Outcome elbo_monotone() {
  double worst = 0.0;
  int sweeps = 0, warm_fewer = 0;
  const double omegas[] = {0.05, 0.1, 0.2, 0.5, 1.0};
  for (int k = 0; k < 20; ++k) {
    const ModelDims d(50, 100, 1, 0);
    const SimResult sim = simulate_dfm(SimConfig{d, omegas[k % 5], derive_seed(303, static_cast<std::uint64_t>(k), 0),
                                                 MissingPattern::kNone});
    const ModelContext ctx = ModelContext::validate(d, standardize(sim.panel), PriorSpec::defaults(d, 0.2));
    FitConfig cfg;
    cfg.rerun = false;
    VariationalState init = initialize(ctx, cfg);
    int cold = 0;
    // initial run and the full-inclusion restarts, checking every sweep of each
    for (int run = 0; run < 4; ++run) {
      const FitReport rep = run_vi(ctx, cfg, init);
      if (run == 0) cold = rep.sweeps;
      for (std::size_t s = 1; s < rep.trace.size(); ++s) {
        const double prev = rep.trace[s - 1].total;
        worst = std::min(worst, (rep.trace[s].total - prev) / (std::abs(prev) + 1.0));
      }
      sweeps += rep.sweeps;
      if (run == 0) {
        const FitReport warm = run_vi(ctx, cfg, rep.state);
        if (warm.sweeps < cold) ++warm_fewer;
      }
      init = rep.state;
      init.b.setOnes();
    }
  }
  return {worst >= -1e-6, fmt("largest relative decrease %.2e", std::max(0.0, -worst)) + " over " + std::to_string(sweeps) +
                              " sweeps; warm start faster in " + std::to_string(warm_fewer) + "/20"};
}

Outcome em_noiseless() {
  Rng rng(808);
  const int n = 15, T = 80, r = 2;
  Matrix f(T, r);
  Vector prev = Vector::Zero(r);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < r; ++j) prev(j) = 0.5 * prev(j) + rng.normal();
    f.row(t) = prev.transpose();
  }
  Matrix lam(n, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) lam(i, j) = rng.normal();
  const Matrix common = lam * f.transpose();
  const EmReport rep = run_em(Panel(common, AvailabilityMask(n, T, true)), ModelDims(n, T, r, 0), EmConfig{});
  Matrix fitted(n, T);
  for (int t = 1; t <= T; ++t) fitted.col(t - 1) = rep.params.loadings * rep.moments.mean[static_cast<std::size_t>(t)];
  const double err = (fitted - common).cwiseAbs().maxCoeff() / common.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (std::size_t k = 1; k < rep.loglik.size(); ++k)
    worst = std::min(worst, (rep.loglik[k] - rep.loglik[k - 1]) / (std::abs(rep.loglik[k - 1]) + 1.0));
  return {err < 1e-6 && worst >= -1e-8,
          fmt("relative common-component error %.2e", err) + fmt(", largest relative loglik decrease %.2e", std::max(0.0, -worst)) +
              ", " + std::to_string(rep.iterations) + " iterations"};
}

Outcome evaluate_identities() {
  Rng rng(909);
  Matrix f(60, 3);
  for (int t = 0; t < 60; ++t)
    for (int j = 0; j < 3; ++j) f(t, j) = rng.normal();
  Matrix a(3, 3);
  a << 2.0, 0.5, 0.0, -1.0, 1.0, 0.3, 0.2, 0.0, 4.0;
  const double pf_self = factor_precision(f, f);
  const double pf_rot = factor_precision(f * a, f);
  const double pf_sub = factor_precision(f.leftCols(2), f);
  const double pf_sub_rot = factor_precision(f.leftCols(2) * a.topLeftCorner(2, 2), f);
  Matrix z(4, 3);
  z << 1, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1;
  const Matrix ones = Matrix::Ones(4, 3);
  const double pz_hit = inclusion_accuracy(z, z);
  const double pz_miss = inclusion_accuracy(ones - z, z);
  const Vector sd1 = Vector::Ones(3);
  const Vector ysd = Vector::Ones(4);
  const double el_zero = loading_rmse(z, z, sd1, sd1, ysd);
  Matrix z2 = z;
  z2(2, 1) += 0.6;
  const double el_one = loading_rmse(z2, z, sd1, sd1, ysd);
  const bool ok = std::abs(pf_self - 1.0) < 1e-12 && std::abs(pf_rot - 1.0) < 1e-12 &&
                  std::abs(pf_sub - pf_sub_rot) < 1e-12 && pz_hit == 1.0 && pz_miss == 0.0 && el_zero == 0.0 &&
                  std::abs(el_one - 0.6 / std::sqrt(12.0)) < 1e-15;
  return {ok, fmt("P_F(F,F)=%.15f", pf_self) + fmt(", P_F(FA,F)=%.15f", pf_rot) + fmt(", P_Z hit/miss=%.0f", pz_hit) +
                  fmt("/%.0f", pz_miss) + fmt(", E_Lambda single term=%.6f", el_one)};
}

const StudyRow* find_row(const std::vector<StudyRow>& rows, const std::string& est) {
  for (const auto& row : rows)
    if (row.estimator == est) return &row;
  return nullptr;
}

int run_fast() {
  report(1, "prior reduction", prior_reduction);
  report(2, "smoother oracle", smoother_oracle);
  report(3, "ELBO monotonicity", elbo_monotone);

  std::vector<StudyRow> cell_rows;
  const auto start = std::chrono::steady_clock::now();
  try {
    cell_rows = run_study(study_preset("reference-cell"));
  } catch (const std::exception& e) {
    spdlog::error("reference-cell study failed: {}", e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("reference-cell study: 100 replications in %.1fs\n", secs);
  const StudyRow* vi = find_row(cell_rows, "VI-LS");
  const StudyRow* ml = find_row(cell_rows, "ML");
  report(4, "inclusion accuracy", [&]() -> Outcome {
    if (vi == nullptr) return {false, "no VI-LS results"};
    const double pz = 100.0 * vi->mean_p_z;
    return {std::abs(pz - 97.16) <= 3.0 && vi->failures == 0,
            fmt("mean P_Z %.2f%% (target 97.16 +- 3)", pz) + ", failures " + std::to_string(vi->failures)};
  });
  report(5, "loading error", [&]() -> Outcome {
    if (vi == nullptr || ml == nullptr) return {false, "missing estimator results"};
    return {std::abs(vi->mean_e_lambda - 0.048) <= 0.02 && std::abs(ml->mean_e_lambda - 0.096) <= 0.03 &&
                ml->failures == 0,
            fmt("VI-LS %.4f (target .048 +- .02)", vi->mean_e_lambda) +
                fmt(", ML %.4f (target .096 +- .03)", ml->mean_e_lambda)};
  });
  report(6, "factor precision", [&]() -> Outcome {
    if (vi == nullptr) return {false, "no VI-LS results"};
    const double pf = 100.0 * vi->mean_p_f;
    return {std::abs(pf - 90.65) <= 3.0, fmt("mean P_F %.2f (target 90.65 +- 3)", pf)};
  });

  report(7, "sparsity identification", []() -> Outcome {
    const auto rows = run_study(study_preset("experiment2-small"));
    const StudyRow* v = find_row(rows, "VI-LS");
    const StudyRow* m = find_row(rows, "ML");
    if (v == nullptr || m == nullptr || v->failures + m->failures > 0) return {false, "estimator failed"};
    return {v->mean_e_lambda < m->mean_e_lambda && v->mean_p_f >= 0.95,
            fmt("E_Lambda VI-LS %.4f", v->mean_e_lambda) + fmt(" vs ML %.4f", m->mean_e_lambda) +
                fmt(", P_F VI-LS %.4f", v->mean_p_f) + fmt(" (ML %.4f)", m->mean_p_f)};
  });
  report(8, "EM noiseless recovery", em_noiseless);
  report(9, "evaluation identities", evaluate_identities);
  return failures == 0 ? 0 : 1;
}

bool within_relative(double got, double target, double rel) { return std::abs(got - target) <= rel * target; }

int run_experiment2_full() {
  report(7, "full-size block-missing study", []() -> Outcome {
    const auto rows = run_study(study_preset("experiment2"));
    std::string detail;
    bool ok = true;
    struct Target {
      double omega, vi_e, ml_e, vi_pf, ml_pf;
    };
    const Target targets[] = {{0.1, 0.036, 0.139, 0.993, 0.991}, {0.025, 0.024, 0.111, 0.982, 0.971}};
    for (const auto& tg : targets) {
      const StudyRow* v = nullptr;
      const StudyRow* m = nullptr;
      for (const auto& row : rows) {
        if (std::abs(row.cell.omega - tg.omega) > 1e-12) continue;
        (row.estimator == "VI-LS" ? v : m) = &row;
      }
      if (v == nullptr || m == nullptr) return {false, "missing rows"};
      const bool cell_ok = within_relative(v->mean_e_lambda, tg.vi_e, 0.5) &&
                           within_relative(m->mean_e_lambda, tg.ml_e, 0.5) &&
                           within_relative(v->mean_p_f, tg.vi_pf, 0.5) && within_relative(m->mean_p_f, tg.ml_pf, 0.5);
      ok = ok && cell_ok;
      detail += fmt("omega %.3f: ", tg.omega) + fmt("E_Lambda %.4f", v->mean_e_lambda) +
                fmt("/%.4f", m->mean_e_lambda) + fmt(" (targets %.3f", tg.vi_e) + fmt("/%.3f)", tg.ml_e) +
                fmt(", P_F %.4f", v->mean_p_f) + fmt("/%.4f", m->mean_p_f) + fmt(" (targets %.3f", tg.vi_pf) +
                fmt("/%.3f); ", tg.ml_pf);
    }
    return {ok, detail};
  });
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  if (argc > 1 && std::strcmp(argv[1], "--experiment2-full") == 0) return run_experiment2_full();
  return run_fast();
}
