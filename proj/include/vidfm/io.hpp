#pragma once

#include "vidfm/elbo.hpp"
#include "vidfm/fit.hpp"
#include "vidfm/simulate.hpp"
#include "vidfm/types.hpp"

#include <string>
#include <vector>

namespace vidfm {

inline constexpr int kStateFormatVersion = 1;

// Writes to `path` through a temporary file in the same directory and a rename.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Shortest decimal form that parses back to the same double.
std::string format_double(double x);

// Panel CSV: header "time,<name_1>,...,<name_n>", one row per period, empty cell = missing.
struct CsvPanel {
  Panel panel;
  std::vector<std::string> names;
  std::vector<std::string> time_index;
};
CsvPanel read_panel_csv(const std::string& path);
CsvPanel parse_panel_csv(const std::string& text, const std::string& source = "<memory>");
std::string format_panel_csv(const Panel& panel, const std::vector<std::string>& names = {},
                             const std::vector<std::string>& time_index = {});

// Persisted fit: dims, prior, standardization, variational state and ELBO trace.
struct SavedModel {
  ModelDims dims{1, 1, 1, 0};
  PriorSpec prior;
  Standardization scaling;
  VariationalState state;
  std::vector<ElboBreakdown> trace;
  std::vector<std::string> names;
};
std::string serialize_model(const SavedModel& model);
SavedModel deserialize_model(const std::string& text);
void save_model(const std::string& path, const SavedModel& model);
SavedModel load_model(const std::string& path);

// Prior file. Scalars "beta", "shrinkage", "nu", "tau2" fill PriorSpec::defaults; any of
// "v_f0", "v_lambda", "nu_eps", "tau2_eps", "v_phi", "nu_u", "tau2_u", "beta_matrix" then
// override individual pieces.
PriorSpec parse_prior(const std::string& text, const ModelDims& dims);
PriorSpec load_prior(const std::string& path, const ModelDims& dims);

std::string serialize_truth(const SimTruth& truth);
SimTruth deserialize_truth(const std::string& text);

// iteration,total,f_terms,lambda_terms,phi_terms,sigma_eps_terms,sigma_u_terms,z_terms
std::string format_elbo_trace(const std::vector<ElboBreakdown>& trace);

// Long format i,k,b[,z_true] (1-based indices).
std::string format_inclusion_long(const Matrix& b, const Matrix* z_true = nullptr);

// time,f_1..f_r
std::string format_factors(const Matrix& f);

}  // namespace vidfm
