#include "vidfm/study.hpp"

#include "vidfm/evaluate.hpp"
#include "vidfm/io.hpp"
#include "vidfm/rng.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <limits>

namespace vidfm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Raw standard deviation of each simulated variable over its available entries.
Vector raw_sd(const Panel& panel) {
  Standardization st;
  standardize(panel, &st);
  return st.sd;
}

void evaluate_estimate(EstimatorResult& res, const Matrix& f_hat, const Matrix& lambda_hat, const Matrix* b,
                       const SimTruth& truth, const Vector& y_sd, int p) {
  const Matrix f_true = truth.dynamic_factors();
  const Alignment al = align(f_hat, f_true);
  const Matrix f_aligned = al.apply_factors(f_hat);
  res.e_lambda = loading_rmse(al.apply_loadings(lambda_hat, p), truth.lambda, column_sd(f_aligned),
                              column_sd(f_true), y_sd);
  res.p_f = factor_precision(f_hat, f_true);
  res.p_z = b != nullptr ? inclusion_accuracy(al.apply_columns(*b, p), truth.z) : kNaN;
  res.ok = true;
}

}  // namespace

std::vector<EstimatorResult> run_replication(const StudyCell& cell, const StudyConfig& cfg, std::uint64_t seed) {
  const ModelDims dims(cell.n, cell.T, cell.r, cell.p);
  const SimResult sim = simulate_dfm(SimConfig{dims, cell.omega, seed, cell.pattern});
  const Vector y_sd = raw_sd(sim.panel);
  const Panel panel = standardize(sim.panel);

  std::vector<EstimatorResult> out;
  auto start = std::chrono::steady_clock::now();
  EmReport em;
  EstimatorResult ml{"ML", kNaN, kNaN, kNaN, kNaN, 0.0, false, ""};
  bool em_ok = false;
  try {
    em = run_em(panel, dims, cfg.em);
    em_ok = true;
    ml.seconds = seconds_since(start);
    evaluate_estimate(ml, dynamic_factor_means(em.moments, cell.r), em.params.loadings, nullptr, sim.truth, y_sd,
                      cell.p);
  } catch (const std::exception& e) {
    ml.error = e.what();
  }
  if (cfg.include_em) out.push_back(ml);

  for (double beta : cfg.betas) {
    EstimatorResult vi{"VI-LS", beta, kNaN, kNaN, kNaN, 0.0, false, ""};
    start = std::chrono::steady_clock::now();
    try {
      const ModelContext ctx = ModelContext::validate(dims, panel, PriorSpec::defaults(dims, beta));
      const FitReport rep = fit(ctx, cfg.fit, em_ok ? &em : nullptr);
      vi.seconds = seconds_since(start);
      const Matrix point = rep.state.b.cwiseProduct(rep.state.mu_lambda);
      evaluate_estimate(vi, dynamic_factor_means(rep.moments, cell.r), point, &rep.state.b, sim.truth, y_sd,
                        cell.p);
    } catch (const std::exception& e) {
      vi.error = e.what();
    }
    out.push_back(vi);
  }
  return out;
}

std::vector<StudyRow> run_study(const StudyConfig& cfg) {
  if (cfg.replications < 1) throw ConfigError("study needs at least one replication");
  if (cfg.cells.empty()) throw ConfigError("study grid is empty");
  const std::size_t per_rep = cfg.betas.size() + (cfg.include_em ? 1 : 0);
  spdlog::info("study: {} cell(s) x {} replication(s) x {} estimator(s), root seed {}", cfg.cells.size(),
               cfg.replications, per_rep, cfg.seed);

  std::vector<StudyRow> rows;
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    const StudyCell& cell = cfg.cells[c];
    std::vector<std::vector<EstimatorResult>> results(static_cast<std::size_t>(cfg.replications));
#pragma omp parallel for schedule(dynamic)
    for (int rep = 0; rep < cfg.replications; ++rep) {
      const std::uint64_t seed = derive_seed(cfg.seed, c, static_cast<std::uint64_t>(rep));
      try {
        results[static_cast<std::size_t>(rep)] = run_replication(cell, cfg, seed);
      } catch (const std::exception& e) {
        spdlog::warn("cell {} replication {} failed: {}", c, rep, e.what());
      }
    }
    for (std::size_t e = 0; e < per_rep; ++e) {
      StudyRow row;
      row.cell = cell;
      double pz = 0.0, el = 0.0, pf = 0.0, secs = 0.0;
      for (const auto& rep : results) {
        if (rep.size() != per_rep || !rep[e].ok) {
          ++row.failures;
          if (rep.size() == per_rep) spdlog::warn("{} failed: {}", rep[e].estimator, rep[e].error);
          continue;
        }
        row.estimator = rep[e].estimator;
        row.beta = rep[e].beta;
        ++row.replications;
        pz += rep[e].p_z;
        el += rep[e].e_lambda;
        pf += rep[e].p_f;
        secs += rep[e].seconds;
      }
      if (row.estimator.empty()) {
        const std::size_t beta_index = cfg.include_em ? e - 1 : e;
        row.estimator = (cfg.include_em && e == 0) ? "ML" : "VI-LS";
        row.beta = row.estimator == "ML" ? kNaN : cfg.betas[beta_index];
      }
      const double k = row.replications > 0 ? row.replications : kNaN;
      row.mean_p_z = pz / k;
      row.mean_e_lambda = el / k;
      row.mean_p_f = pf / k;
      row.mean_seconds = secs / k;
      spdlog::info("cell {} {}: mean fit time {:.3f}s", c, row.estimator, row.mean_seconds);
      if (row.failures > 0) {
        spdlog::warn("cell {} {}: {} of {} replications failed and were excluded", c, row.estimator, row.failures,
                     cfg.replications);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

StudyConfig study_preset(const std::string& name) {
  StudyConfig cfg;
  if (name == "reference-cell") {
    cfg.cells = {StudyCell{50, 100, 1, 0, 0.2, MissingPattern::kNone}};
    cfg.betas = {0.2};
    cfg.replications = 100;
  } else if (name == "experiment2") {
    cfg.cells = {StudyCell{800, 250, 4, 2, 0.1, MissingPattern::kExperiment2},
                 StudyCell{800, 250, 4, 2, 0.025, MissingPattern::kExperiment2}};
    cfg.betas = {0.1};
    cfg.replications = 1;
  } else if (name == "experiment2-small") {
    cfg.cells = {StudyCell{200, 150, 2, 1, 0.1, MissingPattern::kExperiment2}};
    cfg.betas = {0.1};
    cfg.replications = 1;
  } else {
    throw ConfigError("unknown study preset '" + name + "'");
  }
  return cfg;
}

std::string format_study_csv(const std::vector<StudyRow>& rows) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  std::string out = "n,T,r,p,omega,pattern,estimator,beta,replications,failures,P_Z,E_Lambda,P_F\n";
  for (const auto& row : rows) {
    const auto& c = row.cell;
    out += std::to_string(c.n) + ',' + std::to_string(c.T) + ',' + std::to_string(c.r) + ',' + std::to_string(c.p) +
           ',' + format_double(c.omega) + ',' + (c.pattern == MissingPattern::kExperiment2 ? "experiment2" : "none") +
           ',' + row.estimator + ',' + num(row.beta) + ',' + std::to_string(row.replications) + ',' +
           std::to_string(row.failures) + ',' + num(row.mean_p_z) + ',' + num(row.mean_e_lambda) + ',' +
           num(row.mean_p_f) + '\n';
  }
  return out;
}

}  // namespace vidfm
