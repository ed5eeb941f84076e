#include "vidfm/types.hpp"

#include "vidfm/special.hpp"

#include <bit>
#include <cmath>
#include <sstream>

namespace vidfm {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << "dimension mismatch: " << what << " is " << shape(m) << ", expected " << rows << "x" << cols;
    throw ConfigError(os.str());
  }
}

void require_length(const Vector& v, Eigen::Index len, const std::string& what) {
  if (v.size() != len) {
    std::ostringstream os;
    os << "dimension mismatch: " << what << " has length " << v.size() << ", expected " << len;
    throw ConfigError(os.str());
  }
}

void require_positive(const Vector& v, const std::string& what) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!(v(k) > 0.0) || !std::isfinite(v(k))) {
      std::ostringstream os;
      os << what << "[" << k << "] must be finite and > 0, got " << v(k);
      throw ConfigError(os.str());
    }
  }
}

}  // namespace

ModelDims::ModelDims(int n, int T, int r, int p) : n_(n), T_(T), r_(r), p_(p), s_(0) {
  if (n < 1 || T < 1 || r < 1 || p < 0) {
    std::ostringstream os;
    os << "invalid model dimensions n=" << n << " T=" << T << " r=" << r << " p=" << p
       << " (need n>=1, T>=1, r>=1, p>=0)";
    throw ConfigError(os.str());
  }
  s_ = r * (p + 1);
}

AvailabilityMask::AvailabilityMask(int n, int T, bool value)
    : n_(n), T_(T), words_per_row_(static_cast<std::size_t>((T + 63) / 64)),
      bits_(static_cast<std::size_t>(n) * words_per_row_, 0u) {
  if (value) {
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < T; ++t) set(i, t, true);
    }
  }
}

void AvailabilityMask::set(int i, int t, bool value) {
  const std::uint64_t bit = std::uint64_t{1} << (t & 63);
  auto& word = bits_[word_index(i, t)];
  word = value ? (word | bit) : (word & ~bit);
}

int AvailabilityMask::count_row(int i) const {
  int total = 0;
  for (std::size_t w = 0; w < words_per_row_; ++w) {
    total += std::popcount(bits_[static_cast<std::size_t>(i) * words_per_row_ + w]);
  }
  return total;
}

int AvailabilityMask::count() const {
  int total = 0;
  for (auto w : bits_) total += std::popcount(w);
  return total;
}

Panel::Panel(Matrix y, AvailabilityMask mask) : y_(std::move(y)), mask_(std::move(mask)) {
  if (mask_.n() != y_.rows() || mask_.T() != y_.cols()) {
    throw ConfigError("dimension mismatch: mask " + std::to_string(mask_.n()) + "x" +
                      std::to_string(mask_.T()) + " vs data " + shape(y_));
  }
  counts_.resize(static_cast<std::size_t>(y_.rows()));
  for (int i = 0; i < n(); ++i) {
    for (int t = 0; t < T(); ++t) {
      if (!mask_.get(i, t)) {
        y_(i, t) = 0.0;
      } else if (!std::isfinite(y_(i, t))) {
        throw ConfigError("non-finite available observation at variable " + std::to_string(i) +
                          ", time " + std::to_string(t));
      }
    }
    counts_[static_cast<std::size_t>(i)] = mask_.count_row(i);
  }
}

Panel Panel::from_dense(const Matrix& y_with_nan) {
  AvailabilityMask mask(static_cast<int>(y_with_nan.rows()), static_cast<int>(y_with_nan.cols()), false);
  for (Eigen::Index i = 0; i < y_with_nan.rows(); ++i) {
    for (Eigen::Index t = 0; t < y_with_nan.cols(); ++t) {
      if (!std::isnan(y_with_nan(i, t))) mask.set(static_cast<int>(i), static_cast<int>(t), true);
    }
  }
  return Panel(y_with_nan, std::move(mask));
}

Panel Panel::from_matrices(const Matrix& y, const Matrix& a) {
  require_shape(a, y.rows(), y.cols(), "availability mask");
  AvailabilityMask mask(static_cast<int>(y.rows()), static_cast<int>(y.cols()), false);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index t = 0; t < a.cols(); ++t) {
      const double v = a(i, t);
      if (v != 0.0 && v != 1.0) {
        std::ostringstream os;
        os << "mask not binary: a(" << i << "," << t << ") = " << v;
        throw ConfigError(os.str());
      }
      mask.set(static_cast<int>(i), static_cast<int>(t), v == 1.0);
    }
  }
  return Panel(y, std::move(mask));
}

int Panel::n_available_at(int t) const {
  int total = 0;
  for (int i = 0; i < n(); ++i) total += mask_.get(i, t) ? 1 : 0;
  return total;
}

Panel Panel::restricted(const AvailabilityMask& mask) const {
  if (mask.n() != n() || mask.T() != T()) {
    throw ConfigError("dimension mismatch: restriction mask does not match panel");
  }
  AvailabilityMask combined(n(), T(), false);
  for (int i = 0; i < n(); ++i) {
    for (int t = 0; t < T(); ++t) combined.set(i, t, mask_.get(i, t) && mask.get(i, t));
  }
  return Panel(y_, std::move(combined));
}

bool Panel::operator==(const Panel& other) const {
  return y_.rows() == other.y_.rows() && y_.cols() == other.y_.cols() && y_ == other.y_ &&
         mask_ == other.mask_;
}

PriorSpec PriorSpec::defaults(const ModelDims& dims, double beta, double shrinkage, double nu,
                              double tau2) {
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();
  PriorSpec prior;
  const Matrix diag = shrinkage * Matrix::Identity(s, s);
  prior.v_f0 = diag;
  prior.v_lambda.assign(static_cast<std::size_t>(n), diag);
  prior.nu_eps = Vector::Constant(n, nu);
  prior.tau2_eps = Vector::Constant(n, tau2);
  prior.v_phi.assign(static_cast<std::size_t>(r), diag);
  prior.nu_u = Vector::Constant(r, nu);
  prior.tau2_u = Vector::Constant(r, tau2);
  prior.beta = Matrix::Constant(n, s, beta);
  return prior;
}

Matrix selector_second_moment(const Eigen::Ref<const Vector>& b) {
  Matrix p = b * b.transpose();
  p.diagonal() = b;
  return p;
}

void VariationalState::refresh_selector_moments() {
  p_sel.resize(static_cast<std::size_t>(b.rows()));
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    p_sel[static_cast<std::size_t>(i)] = selector_second_moment(b.row(i).transpose());
  }
}

void VariationalState::refresh_loading_moments() {
  r_lambda.resize(static_cast<std::size_t>(mu_lambda.rows()));
  for (Eigen::Index i = 0; i < mu_lambda.rows(); ++i) {
    const Vector mu = mu_lambda.row(i).transpose();
    r_lambda[static_cast<std::size_t>(i)] =
        sigma_lambda[static_cast<std::size_t>(i)] + mu * mu.transpose() / psi2_eps(i);
  }
}

void SmoothedMoments::accumulate_sums(int r) {
  const Eigen::Index s = mean.empty() ? 0 : mean.front().size();
  sum_lag_second = Matrix::Zero(s, s);
  sum_cross = Matrix::Zero(r, s);
  sum_f2 = Vector::Zero(r);
  for (int t = 1; t <= T; ++t) {
    sum_lag_second += second[static_cast<std::size_t>(t - 1)];
    sum_cross += cross[static_cast<std::size_t>(t)].topRows(r);
    sum_f2 += second[static_cast<std::size_t>(t)].diagonal().head(r);
  }
}

SmoothedMoments SmoothedMoments::point_mass(const Matrix& path, int r) {
  SmoothedMoments m;
  m.T = static_cast<int>(path.rows()) - 1;
  const Eigen::Index s = path.cols();
  m.mean.resize(static_cast<std::size_t>(m.T + 1));
  m.second.resize(static_cast<std::size_t>(m.T + 1));
  m.cross.assign(static_cast<std::size_t>(m.T + 1), Matrix::Zero(s, s));
  for (int t = 0; t <= m.T; ++t) {
    const Vector f = path.row(t).transpose();
    m.mean[static_cast<std::size_t>(t)] = f;
    m.second[static_cast<std::size_t>(t)] = f * f.transpose();
    if (t > 0) {
      m.cross[static_cast<std::size_t>(t)] = f * path.row(t - 1);
    }
  }
  m.accumulate_sums(r);
  return m;
}

bool is_spd(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::LLT<Matrix> llt(0.5 * (m + m.transpose()));
  if (llt.info() != Eigen::Success) return false;
  const Matrix l = llt.matrixL();
  return l.diagonal().minCoeff() > 1e-10;
}

void require_spd(const Matrix& m, const std::string& what) {
  if (!is_spd(m)) {
    throw ConfigError("non-SPD prior: " + what);
  }
}

double logdet_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("log-determinant of a matrix that is not positive definite");
  }
  const Matrix l = llt.matrixL();
  return 2.0 * l.diagonal().array().log().sum();
}

Matrix inverse_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("inverse of a matrix that is not positive definite");
  }
  Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

ModelContext ModelContext::validate(const ModelDims& dims, const Panel& panel, const PriorSpec& prior) {
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();
  if (panel.n() != n || panel.T() != dims.T()) {
    std::ostringstream os;
    os << "dimension mismatch: panel is " << panel.n() << "x" << panel.T() << ", dims say n=" << n
       << " T=" << dims.T();
    throw ConfigError(os.str());
  }
  require_shape(prior.v_f0, s, s, "V_F0");
  require_spd(prior.v_f0, "V_F0");
  if (static_cast<int>(prior.v_lambda.size()) != n) {
    throw ConfigError("dimension mismatch: expected " + std::to_string(n) + " V_lambda matrices");
  }
  if (static_cast<int>(prior.v_phi.size()) != r) {
    throw ConfigError("dimension mismatch: expected " + std::to_string(r) + " V_phi matrices");
  }
  require_length(prior.nu_eps, n, "nu_eps");
  require_length(prior.tau2_eps, n, "tau2_eps");
  require_length(prior.nu_u, r, "nu_u");
  require_length(prior.tau2_u, r, "tau2_u");
  require_positive(prior.nu_eps, "nu_eps");
  require_positive(prior.tau2_eps, "tau2_eps");
  require_positive(prior.nu_u, "nu_u");
  require_positive(prior.tau2_u, "tau2_u");
  require_shape(prior.beta, n, s, "beta");
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < s; ++k) {
      const double b = prior.beta(i, k);
      if (!(b >= 0.0 && b <= 1.0)) {
        std::ostringstream os;
        os << "inclusion probability out of range: beta(" << i << "," << k << ") = " << b;
        throw ConfigError(os.str());
      }
    }
  }

  auto data = std::make_shared<Data>(Data{dims, panel, prior, {}, {}, {}, {}, {}, 0.0, {}, {}});
  data->v_lambda_inv.resize(static_cast<std::size_t>(n));
  data->v_lambda_logdet.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& v = prior.v_lambda[static_cast<std::size_t>(i)];
    require_shape(v, s, s, "V_lambda[" + std::to_string(i) + "]");
    require_spd(v, "V_lambda[" + std::to_string(i) + "]");
    data->v_lambda_inv[static_cast<std::size_t>(i)] = inverse_spd(v);
    data->v_lambda_logdet[static_cast<std::size_t>(i)] = logdet_spd(v);
  }
  data->v_phi_inv.resize(static_cast<std::size_t>(r));
  data->v_phi_logdet.resize(static_cast<std::size_t>(r));
  for (int j = 0; j < r; ++j) {
    const auto& v = prior.v_phi[static_cast<std::size_t>(j)];
    require_shape(v, s, s, "V_phi[" + std::to_string(j) + "]");
    require_spd(v, "V_phi[" + std::to_string(j) + "]");
    data->v_phi_inv[static_cast<std::size_t>(j)] = inverse_spd(v);
    data->v_phi_logdet[static_cast<std::size_t>(j)] = logdet_spd(v);
  }
  data->v_f0_inv = inverse_spd(prior.v_f0);
  data->v_f0_logdet = logdet_spd(prior.v_f0);
  data->logit_beta.resize(n, s);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < s; ++k) data->logit_beta(i, k) = clamped_logit(prior.beta(i, k));
  }
  data->sum_y2 = panel.y().rowwise().squaredNorm();
  return ModelContext(std::move(data));
}

ModelContext ModelContext::validate(const ModelContext& ctx) {
  return validate(ctx.dims(), ctx.panel(), ctx.prior());
}

void validate_state(const VariationalState& state, const ModelDims& dims) {
  const int n = dims.n();
  const int s = dims.s();
  const int r = dims.r();
  require_shape(state.mu_lambda, n, s, "mu_lambda");
  require_shape(state.mu_phi, r, s, "mu_phi");
  require_shape(state.b, n, s, "b");
  require_length(state.psi2_eps, n, "psi2_eps");
  require_length(state.psi2_u, r, "psi2_u");
  require_positive(state.psi2_eps, "psi2_eps");
  require_positive(state.psi2_u, "psi2_u");
  if (static_cast<int>(state.sigma_lambda.size()) != n || static_cast<int>(state.sigma_phi.size()) != r) {
    throw ConfigError("dimension mismatch: covariance list sizes do not match dims");
  }
  for (int i = 0; i < n; ++i) {
    const auto& m = state.sigma_lambda[static_cast<std::size_t>(i)];
    require_shape(m, s, s, "sigma_lambda[" + std::to_string(i) + "]");
    if (!is_spd(m)) throw ConfigError("sigma_lambda[" + std::to_string(i) + "] is not SPD");
  }
  for (int j = 0; j < r; ++j) {
    const auto& m = state.sigma_phi[static_cast<std::size_t>(j)];
    require_shape(m, s, s, "sigma_phi[" + std::to_string(j) + "]");
    if (!is_spd(m)) throw ConfigError("sigma_phi[" + std::to_string(j) + "] is not SPD");
  }
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < s; ++k) {
      const double v = state.b(i, k);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("inclusion probability out of range in state: b(" + std::to_string(i) + "," +
                          std::to_string(k) + ")");
      }
    }
  }
  if (!state.mu_lambda.allFinite() || !state.mu_phi.allFinite()) {
    throw ConfigError("non-finite mean in state");
  }
}

}  // namespace vidfm
