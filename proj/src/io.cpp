#include "vidfm/io.hpp"

#include "json.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace vidfm {

using nlohmann::json;

namespace {

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json to_json(const std::vector<Matrix>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(to_json(m));
  return out;
}

Matrix matrix_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

Vector vector_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
  return v;
}

std::vector<Matrix> matrices_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of matrices");
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(matrix_from(j.at(k), what + "[" + std::to_string(k) + "]"));
  return out;
}

json prior_to_json(const PriorSpec& p) {
  return json{{"v_f0", to_json(p.v_f0)},     {"v_lambda", to_json(p.v_lambda)}, {"nu_eps", to_json(p.nu_eps)},
              {"tau2_eps", to_json(p.tau2_eps)}, {"v_phi", to_json(p.v_phi)},       {"nu_u", to_json(p.nu_u)},
              {"tau2_u", to_json(p.tau2_u)},   {"beta_matrix", to_json(p.beta)}};
}

void apply_prior_overrides(const json& j, PriorSpec& p) {
  if (j.contains("v_f0")) p.v_f0 = matrix_from(j["v_f0"], "v_f0");
  if (j.contains("v_lambda")) p.v_lambda = matrices_from(j["v_lambda"], "v_lambda");
  if (j.contains("nu_eps")) p.nu_eps = vector_from(j["nu_eps"], "nu_eps");
  if (j.contains("tau2_eps")) p.tau2_eps = vector_from(j["tau2_eps"], "tau2_eps");
  if (j.contains("v_phi")) p.v_phi = matrices_from(j["v_phi"], "v_phi");
  if (j.contains("nu_u")) p.nu_u = vector_from(j["nu_u"], "nu_u");
  if (j.contains("tau2_u")) p.tau2_u = vector_from(j["tau2_u"], "tau2_u");
  if (j.contains("beta_matrix")) p.beta = matrix_from(j["beta_matrix"], "beta_matrix");
}

json elbo_to_json(const ElboBreakdown& e) {
  return json{{"total", e.total},
              {"f_terms", e.f_terms},
              {"lambda_terms", e.lambda_terms},
              {"phi_terms", e.phi_terms},
              {"sigma_eps_terms", e.sigma_eps_terms},
              {"sigma_u_terms", e.sigma_u_terms},
              {"z_terms", e.z_terms}};
}

ElboBreakdown elbo_from_json(const json& j) {
  ElboBreakdown e;
  e.total = j.at("total").get<double>();
  e.f_terms = j.at("f_terms").get<double>();
  e.lambda_terms = j.at("lambda_terms").get<double>();
  e.phi_terms = j.at("phi_terms").get<double>();
  e.sigma_eps_terms = j.at("sigma_eps_terms").get<double>();
  e.sigma_u_terms = j.at("sigma_u_terms").get<double>();
  e.z_terms = j.at("z_terms").get<double>();
  return e;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": malformed file (" + e.what() + ")");
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw ConfigError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw ConfigError("cannot move output into place at " + path + ": " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

CsvPanel parse_panel_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(source + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2) throw ConfigError(source + ": header needs a time column and at least one variable");
  CsvPanel out;
  out.names.assign(header.begin() + 1, header.end());
  for (auto& name : out.names) name = trim(name);
  const std::size_t n = out.names.size();

  std::vector<std::vector<double>> cols(n);
  std::vector<std::vector<bool>> avail(n);
  std::set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ConfigError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " fields, header has " + std::to_string(header.size()));
    }
    const std::string time = trim(cells[0]);
    if (!seen.insert(time).second) {
      throw ConfigError(source + ": duplicate time index '" + time + "' at row " + std::to_string(row));
    }
    out.time_index.push_back(time);
    for (std::size_t c = 0; c < n; ++c) {
      const std::string cell = trim(cells[c + 1]);
      if (cell.empty()) {
        cols[c].push_back(0.0);
        avail[c].push_back(false);
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ConfigError(source + ": non-numeric value '" + cell + "' at row " + std::to_string(row) +
                          ", column '" + out.names[c] + "'");
      }
      cols[c].push_back(v);
      avail[c].push_back(true);
    }
  }
  const int T = static_cast<int>(out.time_index.size());
  if (T == 0) throw ConfigError(source + ": no data rows");
  Matrix y(static_cast<Eigen::Index>(n), T);
  AvailabilityMask mask(static_cast<int>(n), T, false);
  for (std::size_t c = 0; c < n; ++c) {
    int count = 0;
    for (int t = 0; t < T; ++t) {
      y(static_cast<Eigen::Index>(c), t) = cols[c][static_cast<std::size_t>(t)];
      const bool a = avail[c][static_cast<std::size_t>(t)];
      mask.set(static_cast<int>(c), t, a);
      count += a ? 1 : 0;
    }
    if (count == 0) spdlog::warn("{}: variable '{}' has no observations", source, out.names[c]);
  }
  out.panel = Panel(std::move(y), std::move(mask));
  return out;
}

CsvPanel read_panel_csv(const std::string& path) { return parse_panel_csv(read_file(path), path); }

std::string format_panel_csv(const Panel& panel, const std::vector<std::string>& names,
                             const std::vector<std::string>& time_index) {
  std::string out = "time";
  for (int i = 0; i < panel.n(); ++i) {
    out += ',';
    out += names.empty() ? "y" + std::to_string(i + 1) : names[static_cast<std::size_t>(i)];
  }
  out += '\n';
  for (int t = 0; t < panel.T(); ++t) {
    out += time_index.empty() ? std::to_string(t + 1) : time_index[static_cast<std::size_t>(t)];
    for (int i = 0; i < panel.n(); ++i) {
      out += ',';
      if (panel.available(i, t)) out += format_double(panel.y(i, t));
    }
    out += '\n';
  }
  return out;
}

std::string serialize_model(const SavedModel& m) {
  const auto& st = m.state;
  json j;
  j["format"] = "vidfm-state";
  j["version"] = kStateFormatVersion;
  j["dims"] = {{"n", m.dims.n()}, {"T", m.dims.T()}, {"r", m.dims.r()}, {"p", m.dims.p()}};
  j["names"] = m.names;
  j["prior"] = prior_to_json(m.prior);
  j["scaling"] = {{"mean", to_json(m.scaling.mean)}, {"sd", to_json(m.scaling.sd)}};
  j["state"] = {{"mu_lambda", to_json(st.mu_lambda)}, {"sigma_lambda", to_json(st.sigma_lambda)},
                {"psi2_eps", to_json(st.psi2_eps)},   {"mu_phi", to_json(st.mu_phi)},
                {"sigma_phi", to_json(st.sigma_phi)}, {"psi2_u", to_json(st.psi2_u)},
                {"b", to_json(st.b)}};
  json trace = json::array();
  for (const auto& e : m.trace) trace.push_back(elbo_to_json(e));
  j["elbo_trace"] = std::move(trace);
  return j.dump(1) + "\n";
}

SavedModel deserialize_model(const std::string& text) {
  const json j = parse_json(text, "state file");
  try {
    if (j.value("format", "") != "vidfm-state") throw ConfigError("state file: unknown format");
    const int version = j.at("version").get<int>();
    if (version != kStateFormatVersion) {
      throw ConfigError("state file: version mismatch (file " + std::to_string(version) + ", expected " +
                        std::to_string(kStateFormatVersion) + ")");
    }
    const auto& d = j.at("dims");
    SavedModel m;
    m.dims = ModelDims(d.at("n").get<int>(), d.at("T").get<int>(), d.at("r").get<int>(), d.at("p").get<int>());
    m.names = j.at("names").get<std::vector<std::string>>();
    m.prior = PriorSpec::defaults(m.dims);
    apply_prior_overrides(j.at("prior"), m.prior);
    m.scaling.mean = vector_from(j.at("scaling").at("mean"), "scaling.mean");
    m.scaling.sd = vector_from(j.at("scaling").at("sd"), "scaling.sd");
    const auto& s = j.at("state");
    auto& st = m.state;
    st.mu_lambda = matrix_from(s.at("mu_lambda"), "mu_lambda");
    st.sigma_lambda = matrices_from(s.at("sigma_lambda"), "sigma_lambda");
    st.psi2_eps = vector_from(s.at("psi2_eps"), "psi2_eps");
    st.mu_phi = matrix_from(s.at("mu_phi"), "mu_phi");
    st.sigma_phi = matrices_from(s.at("sigma_phi"), "sigma_phi");
    st.psi2_u = vector_from(s.at("psi2_u"), "psi2_u");
    st.b = matrix_from(s.at("b"), "b");
    validate_state(st, m.dims);
    st.refresh_selector_moments();
    st.refresh_loading_moments();
    st.g = Matrix::Zero(m.dims.n(), m.dims.s());
    st.q.assign(static_cast<std::size_t>(m.dims.n()), Matrix::Zero(m.dims.s(), m.dims.s()));
    for (const auto& e : j.at("elbo_trace")) m.trace.push_back(elbo_from_json(e));
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("state file: missing or malformed field (") + e.what() + ")");
  }
}

void save_model(const std::string& path, const SavedModel& model) { write_file_atomic(path, serialize_model(model)); }

SavedModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

namespace {

void require_prior_shapes(const PriorSpec& p, const ModelDims& dims) {
  const auto n = static_cast<Eigen::Index>(dims.n());
  const auto r = static_cast<Eigen::Index>(dims.r());
  const auto s = static_cast<Eigen::Index>(dims.s());
  auto square = [s](const Matrix& m) { return m.rows() == s && m.cols() == s; };
  bool ok = square(p.v_f0) && p.v_lambda.size() == static_cast<std::size_t>(n) &&
            p.v_phi.size() == static_cast<std::size_t>(r) && p.nu_eps.size() == n && p.tau2_eps.size() == n &&
            p.nu_u.size() == r && p.tau2_u.size() == r && p.beta.rows() == n && p.beta.cols() == s;
  for (const auto& m : p.v_lambda) ok = ok && square(m);
  for (const auto& m : p.v_phi) ok = ok && square(m);
  if (!ok) throw ConfigError("prior file: dimension mismatch with n, r, p of the model");
}

}  // namespace

PriorSpec parse_prior(const std::string& text, const ModelDims& dims) {
  const json j = parse_json(text, "prior file");
  try {
    PriorSpec p = PriorSpec::defaults(dims, j.value("beta", 0.2), j.value("shrinkage", 2.0), j.value("nu", 1.0),
                                      j.value("tau2", 1.0));
    apply_prior_overrides(j, p);
    require_prior_shapes(p, dims);
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("prior file: malformed field (") + e.what() + ")");
  }
}

PriorSpec load_prior(const std::string& path, const ModelDims& dims) { return parse_prior(read_file(path), dims); }

std::string serialize_truth(const SimTruth& t) {
  json j{{"lambda", to_json(t.lambda)},       {"z", to_json(t.z)},   {"alpha", to_json(t.alpha)},
         {"xi", to_json(t.xi)},               {"sigma_eps", to_json(t.sigma_eps)},
         {"factors", to_json(t.factors)}};
  return j.dump(1) + "\n";
}

SimTruth deserialize_truth(const std::string& text) {
  const json j = parse_json(text, "truth file");
  try {
    SimTruth t;
    t.lambda = matrix_from(j.at("lambda"), "lambda");
    t.z = matrix_from(j.at("z"), "z");
    t.alpha = vector_from(j.at("alpha"), "alpha");
    t.xi = vector_from(j.at("xi"), "xi");
    t.sigma_eps = vector_from(j.at("sigma_eps"), "sigma_eps");
    t.factors = matrix_from(j.at("factors"), "factors");
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("truth file: malformed field (") + e.what() + ")");
  }
}

std::string format_elbo_trace(const std::vector<ElboBreakdown>& trace) {
  std::string out = "iteration,total,f_terms,lambda_terms,phi_terms,sigma_eps_terms,sigma_u_terms,z_terms\n";
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const auto& e = trace[k];
    out += std::to_string(k);
    for (double v : {e.total, e.f_terms, e.lambda_terms, e.phi_terms, e.sigma_eps_terms, e.sigma_u_terms, e.z_terms}) {
      out += ',' + format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string format_inclusion_long(const Matrix& b, const Matrix* z_true) {
  std::string out = z_true != nullptr ? "i,k,b,z_true\n" : "i,k,b\n";
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.cols(); ++k) {
      out += std::to_string(i + 1) + ',' + std::to_string(k + 1) + ',' + format_double(b(i, k));
      if (z_true != nullptr) out += ',' + std::to_string(static_cast<int>((*z_true)(i, k)));
      out += '\n';
    }
  }
  return out;
}

std::string format_factors(const Matrix& f) {
  std::string out = "time";
  for (Eigen::Index j = 0; j < f.cols(); ++j) out += ",f" + std::to_string(j + 1);
  out += '\n';
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    out += std::to_string(t + 1);
    for (Eigen::Index j = 0; j < f.cols(); ++j) out += ',' + format_double(f(t, j));
    out += '\n';
  }
  return out;
}

}  // namespace vidfm
