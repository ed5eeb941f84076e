#include "vidfm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vidfm {

namespace {

void require_same_rows(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError("dimension mismatch: estimated and true factors differ in shape");
  }
}

}  // namespace

Vector column_sd(const Matrix& m) {
  Vector sd(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const double ss = (m.col(j).array() - mean).square().sum();
    sd(j) = m.rows() > 1 ? std::sqrt(ss / static_cast<double>(m.rows() - 1)) : 0.0;
  }
  return sd;
}

Matrix column_correlations(const Matrix& f_hat, const Matrix& f_true) {
  require_same_rows(f_hat, f_true);
  const Matrix a = f_hat.rowwise() - f_hat.colwise().mean();
  const Matrix b = f_true.rowwise() - f_true.colwise().mean();
  const Vector na = a.colwise().norm();
  const Vector nb = b.colwise().norm();
  for (Eigen::Index k = 0; k < na.size(); ++k) {
    if (!(na(k) > 0.0)) throw NumericalError("alignment undefined: estimated factor " + std::to_string(k) + " has zero variance");
    if (!(nb(k) > 0.0)) throw NumericalError("alignment undefined: true factor " + std::to_string(k) + " has zero variance");
  }
  return (a.transpose() * b).cwiseQuotient(na * nb.transpose());
}

Alignment align(const Matrix& f_hat, const Matrix& f_true) {
  const Matrix c = column_correlations(f_hat, f_true);
  const int r = static_cast<int>(c.rows());
  std::vector<std::pair<int, int>> pairs;
  for (int k = 0; k < r; ++k) {
    for (int j = 0; j < r; ++j) pairs.emplace_back(k, j);
  }
  std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& x, const auto& y) {
    return std::abs(c(x.first, x.second)) > std::abs(c(y.first, y.second));
  });
  Alignment al{std::vector<int>(static_cast<std::size_t>(r), -1), std::vector<int>(static_cast<std::size_t>(r), 1)};
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (const auto& [k, j] : pairs) {
    if (al.perm[static_cast<std::size_t>(k)] >= 0 || used[static_cast<std::size_t>(j)]) continue;
    al.perm[static_cast<std::size_t>(k)] = j;
    al.signs[static_cast<std::size_t>(k)] = c(k, j) < 0.0 ? -1 : 1;
    used[static_cast<std::size_t>(j)] = true;
  }
  return al;
}

Alignment align_exhaustive(const Matrix& f_hat, const Matrix& f_true) {
  const Matrix c = column_correlations(f_hat, f_true);
  const int r = static_cast<int>(c.rows());
  if (r > 8) throw ConfigError("exhaustive alignment is limited to r <= 8");
  std::vector<int> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int k = 0; k < r; ++k) score += std::abs(c(k, perm[static_cast<std::size_t>(k)]));
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Alignment al{best, std::vector<int>(static_cast<std::size_t>(r), 1)};
  for (int k = 0; k < r; ++k) al.signs[static_cast<std::size_t>(k)] = c(k, best[static_cast<std::size_t>(k)]) < 0.0 ? -1 : 1;
  return al;
}

Matrix Alignment::apply_factors(const Matrix& f_hat) const {
  Matrix out(f_hat.rows(), f_hat.cols());
  for (std::size_t k = 0; k < perm.size(); ++k) out.col(perm[k]) = signs[k] * f_hat.col(static_cast<Eigen::Index>(k));
  return out;
}

Matrix Alignment::apply_columns(const Matrix& m, int p) const {
  const auto r = static_cast<Eigen::Index>(perm.size());
  Matrix out(m.rows(), m.cols());
  for (int l = 0; l <= p; ++l) {
    for (Eigen::Index k = 0; k < r; ++k) out.col(l * r + perm[static_cast<std::size_t>(k)]) = m.col(l * r + k);
  }
  return out;
}

Matrix Alignment::apply_loadings(const Matrix& lambda_hat, int p) const {
  const auto r = static_cast<Eigen::Index>(perm.size());
  Matrix out = apply_columns(lambda_hat, p);
  for (int l = 0; l <= p; ++l) {
    for (Eigen::Index k = 0; k < r; ++k) {
      out.col(l * r + perm[static_cast<std::size_t>(k)]) *= signs[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

Alignment Alignment::inverse() const {
  Alignment inv{std::vector<int>(perm.size()), std::vector<int>(perm.size())};
  for (std::size_t k = 0; k < perm.size(); ++k) {
    inv.perm[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
    inv.signs[static_cast<std::size_t>(perm[k])] = signs[k];
  }
  return inv;
}

double inclusion_accuracy(const Matrix& b, const Matrix& z_true) {
  if (b.rows() != z_true.rows() || b.cols() != z_true.cols()) {
    throw ConfigError("dimension mismatch: inclusion probabilities and true selectors differ in shape");
  }
  double hits = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.cols(); ++k) {
      const double est = b(i, k) > 0.5 ? 1.0 : 0.0;
      hits += (z_true(i, k) == est) ? 1.0 : 0.0;
    }
  }
  return hits / static_cast<double>(b.size());
}

double loading_rmse(const Matrix& lambda_hat, const Matrix& lambda_true, const Vector& f_hat_sd,
                    const Vector& f_true_sd, const Vector& y_sd) {
  if (lambda_hat.rows() != lambda_true.rows() || lambda_hat.cols() != lambda_true.cols()) {
    throw ConfigError("dimension mismatch: estimated and true loadings differ in shape");
  }
  const auto n = lambda_true.rows();
  const auto s = lambda_true.cols();
  const auto r = f_true_sd.size();
  if (f_hat_sd.size() != r || y_sd.size() != n || s % r != 0) {
    throw ConfigError("dimension mismatch: scale vectors do not fit the loading matrices");
  }
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(y_sd(i) > 0.0)) throw ConfigError("zero standard deviation for variable " + std::to_string(i));
    for (Eigen::Index k = 0; k < s; ++k) {
      const Eigen::Index j = k % r;
      const double d = lambda_true(i, k) * f_true_sd(j) / y_sd(i) - lambda_hat(i, k) * f_hat_sd(j);
      ss += d * d;
    }
  }
  return std::sqrt(ss / static_cast<double>(n * s));
}

double factor_precision(const Matrix& f_hat, const Matrix& f_true) {
  if (f_hat.rows() != f_true.rows()) throw ConfigError("dimension mismatch: factor paths differ in length");
  Eigen::ColPivHouseholderQR<Matrix> qr(f_hat);
  if (qr.rank() < f_hat.cols()) throw NumericalError("rank-deficient estimated factors");
  const Matrix q = qr.householderQ() * Matrix::Identity(f_hat.rows(), f_hat.cols());
  const Matrix proj = q.transpose() * f_true;
  return proj.squaredNorm() / f_true.squaredNorm();
}

}  // namespace vidfm
