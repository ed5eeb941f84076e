#pragma once

#include "vidfm/types.hpp"

#include <vector>

namespace vidfm {

// Estimated column k corresponds to true column perm[k], with sign signs[k]:
// truth.col(perm[k]) ~ signs[k] * estimate.col(k).
struct Alignment {
  std::vector<int> perm;
  std::vector<int> signs;

  // Reorders and flips the columns of an estimated T x r factor matrix onto the truth.
  Matrix apply_factors(const Matrix& f_hat) const;
  // Same for an n x s loading (or selector-weighted loading) matrix with p lag blocks.
  Matrix apply_loadings(const Matrix& lambda_hat, int p) const;
  // Reorders columns of an n x s matrix without flipping signs (for probabilities).
  Matrix apply_columns(const Matrix& m, int p) const;
  Alignment inverse() const;
};

// Pearson correlations between columns, r_hat x r_true.
Matrix column_correlations(const Matrix& f_hat, const Matrix& f_true);

// Greedy matching on descending |correlation|.
Alignment align(const Matrix& f_hat, const Matrix& f_true);
// Assignment maximizing the summed |correlation| over all r! permutations (r <= 8).
Alignment align_exhaustive(const Matrix& f_hat, const Matrix& f_true);

// Share of (i, k) with z*_ik == 1{b_ik > 0.5}.
double inclusion_accuracy(const Matrix& b, const Matrix& z_true);

// Scaled loading RMSE. `lambda_hat` is the aligned point estimate on standardized data,
// `f_hat_sd` the sd of each aligned estimated dynamic factor, `f_true_sd` the sd of each
// true factor and `y_sd` the sd of each raw variable.
double loading_rmse(const Matrix& lambda_hat, const Matrix& lambda_true, const Vector& f_hat_sd,
                    const Vector& f_true_sd, const Vector& y_sd);

// Tr(F*' P F*) / Tr(F*' F*) with P the orthogonal projection onto span(F_hat).
double factor_precision(const Matrix& f_hat, const Matrix& f_true);

// Column standard deviations (divisor T - 1).
Vector column_sd(const Matrix& m);

}  // namespace vidfm
