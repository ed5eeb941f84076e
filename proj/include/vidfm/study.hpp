#pragma once

#include "vidfm/em.hpp"
#include "vidfm/fit.hpp"
#include "vidfm/simulate.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vidfm {

struct StudyCell {
  int n = 50;
  int T = 100;
  int r = 1;
  int p = 0;
  double omega = 0.2;
  MissingPattern pattern = MissingPattern::kNone;
};

struct StudyConfig {
  std::vector<StudyCell> cells;
  std::vector<double> betas{0.2};
  int replications = 1;
  std::uint64_t seed = 1;
  bool include_em = true;
  FitConfig fit;
  EmConfig em;
};

// Metrics of one estimator on one replication. p_z is NaN for estimators without selection.
struct EstimatorResult {
  std::string estimator;  // "VI-LS" or "ML"
  double beta = 0.0;      // NaN for ML
  double p_z = 0.0;
  double e_lambda = 0.0;
  double p_f = 0.0;
  double seconds = 0.0;
  bool ok = false;
  std::string error;
};

struct StudyRow {
  StudyCell cell;
  std::string estimator;
  double beta = 0.0;
  int replications = 0;
  int failures = 0;
  double mean_p_z = 0.0;
  double mean_e_lambda = 0.0;
  double mean_p_f = 0.0;
  double mean_seconds = 0.0;
};

// Simulate with `seed`, standardize, fit EM and VI-LS for each beta, evaluate against truth.
std::vector<EstimatorResult> run_replication(const StudyCell& cell, const StudyConfig& cfg, std::uint64_t seed);

// Replication seed: derive_seed(cfg.seed, cell index, replication index).
std::vector<StudyRow> run_study(const StudyConfig& cfg);

// "reference-cell": n=50, T=100, r=1, p=0, omega=0.2, beta=0.2, 100 replications.
// "experiment2": n=800, T=250, r=4, p=2, omega in {0.1, 0.025}, beta=0.1, block missing pattern.
// "experiment2-small": n=200, T=150, r=2, p=1, omega=0.1, beta=0.1, block missing pattern.
StudyConfig study_preset(const std::string& name);

std::string format_study_csv(const std::vector<StudyRow>& rows);

}  // namespace vidfm
