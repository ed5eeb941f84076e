#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Bad input: shapes, ranges, file contents. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, lost definiteness, monotonicity traps. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problem sizes. The state dimension s = r(p+1) is fixed here and only read elsewhere.
class ModelDims {
 public:
  ModelDims(int n, int T, int r, int p);

  int n() const { return n_; }
  int T() const { return T_; }
  int r() const { return r_; }
  int p() const { return p_; }
  int s() const { return s_; }

  bool operator==(const ModelDims&) const = default;

 private:
  int n_;
  int T_;
  int r_;
  int p_;
  int s_;
};

// Row-wise bit-packed availability mask a_{i,t}.
class AvailabilityMask {
 public:
  AvailabilityMask() = default;
  AvailabilityMask(int n, int T, bool value);

  int n() const { return n_; }
  int T() const { return T_; }
  bool get(int i, int t) const {
    return (bits_[word_index(i, t)] >> (t & 63)) & 1u;
  }
  void set(int i, int t, bool value);
  int count_row(int i) const;
  int count() const;

  bool operator==(const AvailabilityMask&) const = default;

 private:
  std::size_t word_index(int i, int t) const {
    return static_cast<std::size_t>(i) * words_per_row_ + static_cast<std::size_t>(t >> 6);
  }

  int n_ = 0;
  int T_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> bits_;
};

// n x T observations with availability mask. Unavailable cells of y are stored as 0.
class Panel {
 public:
  Panel() = default;
  Panel(Matrix y, AvailabilityMask mask);

  // NaN cells are treated as missing.
  static Panel from_dense(const Matrix& y_with_nan);
  // `a` must contain only 0 and 1.
  static Panel from_matrices(const Matrix& y, const Matrix& a);

  int n() const { return static_cast<int>(y_.rows()); }
  int T() const { return static_cast<int>(y_.cols()); }
  const Matrix& y() const { return y_; }
  double y(int i, int t) const { return y_(i, t); }
  bool available(int i, int t) const { return mask_.get(i, t); }
  const AvailabilityMask& mask() const { return mask_; }
  int n_available(int i) const { return counts_[static_cast<std::size_t>(i)]; }
  int n_available_at(int t) const;

  // Same data, new mask. Cells unavailable in either mask become unavailable.
  Panel restricted(const AvailabilityMask& mask) const;

  bool operator==(const Panel&) const;

 private:
  Matrix y_;
  AvailabilityMask mask_;
  std::vector<int> counts_;
};

struct PriorSpec {
  Matrix v_f0;                     // s x s
  std::vector<Matrix> v_lambda;    // n of s x s
  Vector nu_eps;                   // n
  Vector tau2_eps;                 // n
  std::vector<Matrix> v_phi;       // r of s x s
  Vector nu_u;                     // r
  Vector tau2_u;                   // r
  Matrix beta;                     // n x s, prior inclusion probabilities

  // Heuristic defaults for standardized data: nu = 1, tau^2 = 1, diagonal shrinkage 2.
  static PriorSpec defaults(const ModelDims& dims, double beta = 0.2, double shrinkage = 2.0,
                            double nu = 1.0, double tau2 = 1.0);
};

// Parameters of the mean-field density q.
struct VariationalState {
  Matrix mu_lambda;                  // n x s
  std::vector<Matrix> sigma_lambda;  // n of s x s
  Vector psi2_eps;                   // n
  Matrix mu_phi;                     // r x s
  std::vector<Matrix> sigma_phi;     // r of s x s
  Vector psi2_u;                     // r
  Matrix b;                          // n x s posterior inclusion probabilities
  std::vector<Matrix> p_sel;         // n of s x s, E[z_i z_i']
  std::vector<Matrix> r_lambda;      // n of s x s, E[lambda_i lambda_i' / sigma^2_i]
  Matrix g;                          // n x s, sum_t a_{i,t} y_{i,t} E[F_t]
  std::vector<Matrix> q;             // n of s x s, sum_t a_{i,t} E[F_t F_t']

  // Rebuild every P_i from the rows of b.
  void refresh_selector_moments();
  // Rebuild every R_i from mu_lambda, sigma_lambda, psi2_eps.
  void refresh_loading_moments();
};

// E[z z'] for independent Bernoulli(b_k).
Matrix selector_second_moment(const Eigen::Ref<const Vector>& b);

// Smoothed moments of q(F) and the time sums used by the block updates.
struct SmoothedMoments {
  int T = 0;
  std::vector<Vector> mean;    // E[F_t], t = 0..T
  std::vector<Matrix> second;  // E[F_t F_t'], t = 0..T
  std::vector<Matrix> cross;   // E[F_t F_{t-1}'], t = 1..T (index 0 unused)
  Matrix sum_lag_second;       // sum_{t=1}^T E[F_{t-1} F_{t-1}']
  Matrix sum_cross;            // r x s, row j = sum_t E[f_{j,t} F_{t-1}']
  Vector sum_f2;               // r, sum_t E[f_{j,t}^2]

  // Recompute the three sums from mean/second/cross.
  void accumulate_sums(int r);
  // Moments of a known factor path (point mass); `path` has T+1 rows of F_t'.
  static SmoothedMoments point_mass(const Matrix& path, int r);
};

// Validated, immutable bundle of dims, data and prior plus prior-derived caches.
class ModelContext {
 public:
  static ModelContext validate(const ModelDims& dims, const Panel& panel, const PriorSpec& prior);
  static ModelContext validate(const ModelContext& ctx);

  const ModelDims& dims() const { return data_->dims; }
  const Panel& panel() const { return data_->panel; }
  const PriorSpec& prior() const { return data_->prior; }

  const Matrix& v_lambda_inv(int i) const { return data_->v_lambda_inv[static_cast<std::size_t>(i)]; }
  double v_lambda_logdet(int i) const { return data_->v_lambda_logdet[static_cast<std::size_t>(i)]; }
  const Matrix& v_phi_inv(int j) const { return data_->v_phi_inv[static_cast<std::size_t>(j)]; }
  double v_phi_logdet(int j) const { return data_->v_phi_logdet[static_cast<std::size_t>(j)]; }
  const Matrix& v_f0_inv() const { return data_->v_f0_inv; }
  double v_f0_logdet() const { return data_->v_f0_logdet; }
  // logit(beta) clamped to +-700 so that beta in {0, 1} stays finite.
  double logit_beta(int i, int k) const { return data_->logit_beta(i, k); }
  // sum_t a_{i,t} y_{i,t}^2
  double sum_y2(int i) const { return data_->sum_y2(i); }

 private:
  struct Data {
    ModelDims dims;
    Panel panel;
    PriorSpec prior;
    std::vector<Matrix> v_lambda_inv;
    std::vector<double> v_lambda_logdet;
    std::vector<Matrix> v_phi_inv;
    std::vector<double> v_phi_logdet;
    Matrix v_f0_inv;
    double v_f0_logdet = 0.0;
    Matrix logit_beta;
    Vector sum_y2;
  };
  explicit ModelContext(std::shared_ptr<const Data> data) : data_(std::move(data)) {}
  std::shared_ptr<const Data> data_;
};

// Throws ConfigError unless `m` is symmetric and admits a Cholesky factor with diagonal > 1e-10.
void require_spd(const Matrix& m, const std::string& what);
bool is_spd(const Matrix& m);

// Shape and invariant checks on a state against dims (used after loading from disk).
void validate_state(const VariationalState& state, const ModelDims& dims);

// log det of an SPD matrix via Cholesky.
double logdet_spd(const Matrix& m);
// Inverse of an SPD matrix via Cholesky.
Matrix inverse_spd(const Matrix& m);

}  // namespace vidfm
