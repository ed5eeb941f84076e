#include "vidfm/em.hpp"
#include "vidfm/evaluate.hpp"
#include "vidfm/fit.hpp"
#include "vidfm/io.hpp"
#include "vidfm/simulate.hpp"
#include "vidfm/study.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace vidfm;

namespace {

struct Options {
  std::string input;
  std::string out = "out";
  std::string prior_file;
  int r = 1;
  int p = 0;
  double beta = 0.2;
  double tol = 1e-6;
  int max_iter = 500;
  bool rerun = true;
  std::uint64_t seed = 1;
  std::string init = "pca";
  std::string init_file;
  int threads = 0;
  int em_max_iter = 1000;

  // simulate
  int n = 50;
  int T = 100;
  double omega = 0.2;
  std::string pattern = "none";

  // study
  std::string preset;
  std::vector<int> grid_n{50}, grid_T{100}, grid_r{1}, grid_p{0};
  std::vector<double> grid_omega{0.2}, grid_beta{0.2};
  int reps = 0;  // 0: preset default, or 1 for a grid
  bool no_em = false;

  // export
  std::string state_file;
  std::string truth_file;
};

void set_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("VIDFM_THREADS")) threads = std::atoi(env);
  }
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

MissingPattern parse_pattern(const std::string& s) {
  if (s == "none") return MissingPattern::kNone;
  if (s == "experiment2") return MissingPattern::kExperiment2;
  throw ConfigError("unknown missing pattern '" + s + "' (none | experiment2)");
}

std::string path_in(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

int cmd_fit(const Options& o) {
  const CsvPanel csv = read_panel_csv(o.input);
  const ModelDims dims(csv.panel.n(), csv.panel.T(), o.r, o.p);
  Standardization scaling;
  const Panel panel = standardize(csv.panel, &scaling);
  const PriorSpec prior = o.prior_file.empty() ? PriorSpec::defaults(dims, o.beta) : load_prior(o.prior_file, dims);
  const ModelContext ctx = ModelContext::validate(dims, panel, prior);

  FitConfig cfg;
  cfg.tol = o.tol;
  cfg.max_iter = o.max_iter;
  cfg.rerun = o.rerun;
  if (o.init == "file") {
    if (o.init_file.empty()) throw ConfigError("--init file requires --init-file");
    SavedModel start = load_model(o.init_file);
    if (!(start.dims == dims)) throw ConfigError("dimension mismatch: --init-file was fitted with other dims");
    cfg.init = std::move(start.state);
  } else if (o.init != "pca") {
    throw ConfigError("unknown --init '" + o.init + "' (pca | file)");
  }
  cfg.on_failure = [&](const VariationalState& st) {
    SavedModel dump{dims, prior, scaling, st, {}, csv.names};
    save_model(path_in(o.out, "failed_state.json"), dump);
    spdlog::error("state at failure written to {}", path_in(o.out, "failed_state.json"));
  };

  spdlog::info("fit: n={} T={} r={} p={} seed={}", dims.n(), dims.T(), dims.r(), dims.p(), o.seed);
  const FitReport rep = fit(ctx, cfg);
  spdlog::info("ELBO {:.6f} after {} sweep(s), {} rerun(s), converged={}, {:.2f}s", rep.elbo(), rep.sweeps,
               rep.reruns, rep.converged, rep.wall_seconds);

  save_model(path_in(o.out, "state.json"), SavedModel{dims, prior, scaling, rep.state, rep.trace, csv.names});
  write_file_atomic(path_in(o.out, "elbo_trace.csv"), format_elbo_trace(rep.trace));
  write_file_atomic(path_in(o.out, "factors.csv"), format_factors(dynamic_factor_means(rep.moments, o.r)));

  std::string loadings = "variable,k,b,mu_lambda,loading_standardized,loading_original_units\n";
  for (int i = 0; i < dims.n(); ++i) {
    for (int k = 0; k < dims.s(); ++k) {
      const double pt = rep.state.b(i, k) * rep.state.mu_lambda(i, k);
      loadings += csv.names[static_cast<std::size_t>(i)] + ',' + std::to_string(k + 1) + ',' +
                  format_double(rep.state.b(i, k)) + ',' + format_double(rep.state.mu_lambda(i, k)) + ',' +
                  format_double(pt) + ',' + format_double(pt * scaling.sd(i)) + '\n';
    }
  }
  write_file_atomic(path_in(o.out, "loadings.csv"), loadings);
  return 0;
}

int cmd_em(const Options& o) {
  const CsvPanel csv = read_panel_csv(o.input);
  const ModelDims dims(csv.panel.n(), csv.panel.T(), o.r, o.p);
  Standardization scaling;
  const Panel panel = standardize(csv.panel, &scaling);
  EmConfig cfg;
  cfg.max_iter = o.em_max_iter;
  const EmReport rep = run_em(panel, dims, cfg);
  spdlog::info("EM log-likelihood {:.6f} after {} iteration(s), converged={}", rep.loglik.back(), rep.iterations,
               rep.converged);
  std::string loadings = "variable,k,loading_standardized,loading_original_units\n";
  for (int i = 0; i < dims.n(); ++i) {
    for (int k = 0; k < dims.s(); ++k) {
      const double l = rep.params.loadings(i, k);
      loadings += csv.names[static_cast<std::size_t>(i)] + ',' + std::to_string(k + 1) + ',' + format_double(l) +
                  ',' + format_double(l * scaling.sd(i)) + '\n';
    }
  }
  write_file_atomic(path_in(o.out, "em_loadings.csv"), loadings);
  std::string trace = "iteration,loglik\n";
  for (std::size_t k = 0; k < rep.loglik.size(); ++k) {
    trace += std::to_string(k) + ',' + format_double(rep.loglik[k]) + '\n';
  }
  write_file_atomic(path_in(o.out, "em_loglik.csv"), trace);
  write_file_atomic(path_in(o.out, "em_factors.csv"), format_factors(dynamic_factor_means(rep.moments, o.r)));
  return 0;
}

int cmd_simulate(const Options& o) {
  const ModelDims dims(o.n, o.T, o.r, o.p);
  spdlog::info("simulate: n={} T={} r={} p={} omega={} seed={}", o.n, o.T, o.r, o.p, o.omega, o.seed);
  const SimResult sim = simulate_dfm(SimConfig{dims, o.omega, o.seed, parse_pattern(o.pattern)});
  write_file_atomic(path_in(o.out, "panel.csv"), format_panel_csv(sim.panel));
  write_file_atomic(path_in(o.out, "truth.json"), serialize_truth(sim.truth));
  return 0;
}

int cmd_study(const Options& o) {
  StudyConfig cfg;
  if (!o.preset.empty()) {
    cfg = study_preset(o.preset);
  } else {
    for (int n : o.grid_n)
      for (int T : o.grid_T)
        for (int r : o.grid_r)
          for (int p : o.grid_p)
            for (double w : o.grid_omega) cfg.cells.push_back(StudyCell{n, T, r, p, w, parse_pattern(o.pattern)});
    cfg.betas = o.grid_beta;
    cfg.replications = std::max(o.reps, 1);
  }
  if (o.reps > 0) cfg.replications = o.reps;
  cfg.seed = o.seed;
  cfg.include_em = !o.no_em;
  cfg.fit.tol = o.tol;
  cfg.fit.max_iter = o.max_iter;
  cfg.fit.rerun = o.rerun;
  constexpr std::size_t kMaxFits = 1000000;
  const std::size_t fits = cfg.cells.size() * static_cast<std::size_t>(cfg.replications) *
                           (cfg.betas.size() + (cfg.include_em ? 1 : 0));
  if (fits > kMaxFits) throw ConfigError("study grid too large: " + std::to_string(fits) + " fits");
  const auto rows = run_study(cfg);
  const std::string out = path_in(o.out, "summary.csv");
  write_file_atomic(out, format_study_csv(rows));
  spdlog::info("summary written to {}", out);
  return 0;
}

int cmd_export(const Options& o) {
  const SavedModel m = load_model(o.state_file);
  Matrix z;
  if (!o.truth_file.empty()) {
    const SimTruth t = deserialize_truth(read_file(o.truth_file));
    if (t.z.rows() != m.state.b.rows() || t.z.cols() != m.state.b.cols()) {
      throw ConfigError("dimension mismatch: truth selectors do not match the fitted state");
    }
    z = t.z;
  }
  const std::string out = path_in(o.out, "inclusion_long.csv");
  write_file_atomic(out, format_inclusion_long(m.state.b, o.truth_file.empty() ? nullptr : &z));
  write_file_atomic(path_in(o.out, "elbo_trace.csv"), format_elbo_trace(m.trace));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational inference for sparse dynamic factor models"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out,-o", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Worker threads (default: VIDFM_THREADS or all cores)");
    sub->add_option("--seed", o.seed, "Root random seed");
  };
  auto add_fit_flags = [&](CLI::App* sub) {
    sub->add_option("--tol", o.tol, "Relative ELBO convergence tolerance");
    sub->add_option("--max-iter", o.max_iter, "Sweep cap per run");
    sub->add_flag("--rerun,!--no-rerun", o.rerun, "Rerun with full inclusion while the ELBO improves");
  };

  auto* fit_cmd = app.add_subcommand("fit", "Fit VI-LS to a panel CSV");
  fit_cmd->add_option("--input,-i", o.input, "Panel CSV")->required();
  fit_cmd->add_option("--r", o.r, "Number of dynamic factors");
  fit_cmd->add_option("--p", o.p, "Number of loading lags");
  fit_cmd->add_option("--beta", o.beta, "Prior inclusion probability (ignored with --prior)");
  fit_cmd->add_option("--prior", o.prior_file, "Prior JSON file");
  fit_cmd->add_option("--init", o.init, "pca | file");
  fit_cmd->add_option("--init-file", o.init_file, "State JSON used with --init file");
  add_fit_flags(fit_cmd);
  add_common(fit_cmd);

  auto* em_cmd = app.add_subcommand("em", "Maximum-likelihood fit by EM");
  em_cmd->add_option("--input,-i", o.input, "Panel CSV")->required();
  em_cmd->add_option("--r", o.r, "Number of dynamic factors");
  em_cmd->add_option("--p", o.p, "Number of loading lags");
  em_cmd->add_option("--max-iter", o.em_max_iter, "Iteration cap");
  add_common(em_cmd);

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a sparse DFM panel");
  sim_cmd->add_option("--n", o.n);
  sim_cmd->add_option("--T", o.T);
  sim_cmd->add_option("--r", o.r);
  sim_cmd->add_option("--p", o.p);
  sim_cmd->add_option("--omega", o.omega, "Share of included loadings");
  sim_cmd->add_option("--pattern", o.pattern, "none | experiment2");
  add_common(sim_cmd);

  auto* study_cmd = app.add_subcommand("study", "Monte Carlo simulation study");
  study_cmd->add_option("--preset", o.preset, "reference-cell | experiment2 | experiment2-small");
  study_cmd->add_option("--n", o.grid_n)->delimiter(',');
  study_cmd->add_option("--T", o.grid_T)->delimiter(',');
  study_cmd->add_option("--r", o.grid_r)->delimiter(',');
  study_cmd->add_option("--p", o.grid_p)->delimiter(',');
  study_cmd->add_option("--omega", o.grid_omega)->delimiter(',');
  study_cmd->add_option("--beta", o.grid_beta)->delimiter(',');
  study_cmd->add_option("--pattern", o.pattern, "none | experiment2");
  study_cmd->add_option("--reps", o.reps, "Replications per cell");
  study_cmd->add_flag("--no-em", o.no_em, "Skip the ML baseline");
  add_fit_flags(study_cmd);
  add_common(study_cmd);

  auto* export_cmd = app.add_subcommand("export", "Export inclusion probabilities and ELBO trace as CSV");
  export_cmd->add_option("--state", o.state_file, "State JSON from fit")->required();
  export_cmd->add_option("--truth", o.truth_file, "Truth JSON from simulate");
  add_common(export_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_threads(o.threads);
    if (*fit_cmd) return cmd_fit(o);
    if (*em_cmd) return cmd_em(o);
    if (*sim_cmd) return cmd_simulate(o);
    if (*study_cmd) return cmd_study(o);
    if (*export_cmd) return cmd_export(o);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
