#ifndef SMPBSDE_CONFIG_HPP
#define SMPBSDE_CONFIG_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"

namespace smpbsde {

// Sectioned key/value configuration:
//   [section]
//   key = value            # full-line comments start with '#' or ';'
// Values may be scalars, words, or whitespace/comma separated number lists;
// matrices are flat row-major lists.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cm;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      require(t.back() == ']' && t.size() > 2, ErrorCategory::config,
              "line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      require(!section.empty(), ErrorCategory::config,
              "line " + std::to_string(lineno) + ": empty section name");
      cm[section];
      continue;
    }
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorCategory::config,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    require(!key.empty(), ErrorCategory::config,
            "line " + std::to_string(lineno) + ": empty key");
    require(!section.empty(), ErrorCategory::config,
            "line " + std::to_string(lineno) + ": key outside any section");
    cm[section][key] = value;
  }
  return cm;
}

inline ConfigMap load_config(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrorCategory::io, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string format_config(const ConfigMap& cm) {
  std::string out;
  for (const auto& [section, kv] : cm) {
    out += "[" + section + "]\n";
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    out += "\n";
  }
  return out;
}

inline bool config_has(const ConfigMap& cm, const std::string& section,
                       const std::string& key) {
  const auto s = cm.find(section);
  return s != cm.end() && s->second.count(key) > 0;
}

inline const std::string& config_string(const ConfigMap& cm,
                                        const std::string& section,
                                        const std::string& key) {
  const auto s = cm.find(section);
  require(s != cm.end(), ErrorCategory::config, "missing section [" + section + "]");
  const auto k = s->second.find(key);
  require(k != s->second.end(), ErrorCategory::config,
          "missing key '" + key + "' in [" + section + "]");
  return k->second;
}

inline std::string config_string_or(const ConfigMap& cm, const std::string& section,
                                    const std::string& key, std::string fallback) {
  return config_has(cm, section, key) ? config_string(cm, section, key)
                                      : std::move(fallback);
}

inline std::vector<double> config_doubles(const ConfigMap& cm,
                                          const std::string& section,
                                          const std::string& key) {
  std::string v = config_string(cm, section, key);
  for (auto& ch : v)
    if (ch == ',') ch = ' ';
  std::istringstream is(v);
  std::vector<double> out;
  double x;
  while (is >> x) out.push_back(x);
  is.clear();
  std::string rest;
  is >> rest;
  require(rest.empty(), ErrorCategory::config,
          "key '" + key + "' in [" + section + "]: not a number list");
  return out;
}

inline double config_double(const ConfigMap& cm, const std::string& section,
                            const std::string& key) {
  const auto v = config_doubles(cm, section, key);
  require(v.size() == 1, ErrorCategory::config,
          "key '" + key + "' in [" + section + "]: expected one number");
  return v[0];
}

inline double config_double_or(const ConfigMap& cm, const std::string& section,
                               const std::string& key, double fallback) {
  return config_has(cm, section, key) ? config_double(cm, section, key) : fallback;
}

inline std::int64_t config_int(const ConfigMap& cm, const std::string& section,
                               const std::string& key) {
  const double v = config_double(cm, section, key);
  const auto i = static_cast<std::int64_t>(v);
  require(static_cast<double>(i) == v, ErrorCategory::config,
          "key '" + key + "' in [" + section + "]: expected an integer");
  return i;
}

inline std::int64_t config_int_or(const ConfigMap& cm, const std::string& section,
                                  const std::string& key, std::int64_t fallback) {
  return config_has(cm, section, key) ? config_int(cm, section, key) : fallback;
}

inline std::vector<int> config_ints(const ConfigMap& cm, const std::string& section,
                                    const std::string& key) {
  std::vector<int> out;
  for (double v : config_doubles(cm, section, key)) {
    const int i = static_cast<int>(v);
    require(static_cast<double>(i) == v, ErrorCategory::config,
            "key '" + key + "' in [" + section + "]: expected integers");
    out.push_back(i);
  }
  return out;
}

inline Eigen::MatrixXd config_matrix(const ConfigMap& cm, const std::string& section,
                                     const std::string& key, Eigen::Index rows,
                                     Eigen::Index cols) {
  const auto v = config_doubles(cm, section, key);
  require(static_cast<Eigen::Index>(v.size()) == rows * cols,
          ErrorCategory::config,
          "key '" + key + "' in [" + section + "]: expected " +
              std::to_string(rows * cols) + " entries, got " +
              std::to_string(v.size()));
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index cc = 0; cc < cols; ++cc)
      out(r, cc) = v[static_cast<std::size_t>(r * cols + cc)];
  return out;
}

inline Eigen::VectorXd config_vector(const ConfigMap& cm, const std::string& section,
                                     const std::string& key, Eigen::Index size) {
  return config_matrix(cm, section, key, size, 1);
}

// [problem] either names a preset or spells out every coefficient:
//   preset = example1
// or d, ell, m, T, x0, A, B, beta, R_x, R_u, G and optionally R_xu,
// Sigma (d x m, column j the additive noise load of channel j) and the
// states-first row-major blocks C_1..C_m, D_1..D_m.
inline LqCoefficients problem_from_config(const ConfigMap& cm) {
  if (config_has(cm, "problem", "preset"))
    return preset_problem(config_string(cm, "problem", "preset"));

  LqCoefficients c;
  c.d = static_cast<int>(config_int(cm, "problem", "d"));
  c.ell = static_cast<int>(config_int(cm, "problem", "ell"));
  c.m = static_cast<int>(config_int(cm, "problem", "m"));
  c.T = config_double(cm, "problem", "T");
  require(c.d >= 1 && c.ell >= 1 && c.m >= 1, ErrorCategory::config,
          "problem dimensions must be positive");
  c.x0 = config_vector(cm, "problem", "x0", c.d);
  c.A = config_matrix(cm, "problem", "A", c.d, c.d);
  c.B = config_matrix(cm, "problem", "B", c.d, c.ell);
  c.beta = config_has(cm, "problem", "beta")
               ? Eigen::VectorXd(config_vector(cm, "problem", "beta", c.d))
               : Eigen::VectorXd(Eigen::VectorXd::Zero(c.d));
  c.R_x = config_matrix(cm, "problem", "R_x", c.d, c.d);
  c.R_xu = config_has(cm, "problem", "R_xu")
               ? Eigen::MatrixXd(config_matrix(cm, "problem", "R_xu", c.ell, c.d))
               : Eigen::MatrixXd(Eigen::MatrixXd::Zero(c.ell, c.d));
  c.R_u = config_matrix(cm, "problem", "R_u", c.ell, c.ell);
  c.G = config_matrix(cm, "problem", "G", c.d, c.d);

  const Eigen::MatrixXd Sigma =
      config_has(cm, "problem", "Sigma")
          ? Eigen::MatrixXd(config_matrix(cm, "problem", "Sigma", c.d, c.m))
          : Eigen::MatrixXd(Eigen::MatrixXd::Zero(c.d, c.m));
  c.C.resize(c.m);
  c.D.resize(c.m);
  c.Sigma.resize(c.m);
  for (int j = 0; j < c.m; ++j) {
    const std::string cj = "C_" + std::to_string(j + 1);
    const std::string dj = "D_" + std::to_string(j + 1);
    c.C[j] = config_has(cm, "problem", cj)
                 ? Eigen::MatrixXd(config_matrix(cm, "problem", cj, c.d, c.d))
                 : Eigen::MatrixXd(Eigen::MatrixXd::Zero(c.d, c.d));
    c.D[j] = config_has(cm, "problem", dj)
                 ? Eigen::MatrixXd(config_matrix(cm, "problem", dj, c.d, c.ell))
                 : Eigen::MatrixXd(Eigen::MatrixXd::Zero(c.d, c.ell));
    c.Sigma[j] = Sigma.col(j);
  }
  validate_coefficients(c);
  return c;
}

// Echo of the resolved coefficients, loadable by problem_from_config.
inline std::string echo_problem(const LqCoefficients& c) {
  std::ostringstream os;
  os.precision(17);
  auto list = [&os](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index cc = 0; cc < m.cols(); ++cc)
        os << (r + cc == 0 ? "" : " ") << m(r, cc);
    os << "\n";
  };
  os << "[problem]\n";
  os << "d = " << c.d << "\nell = " << c.ell << "\nm = " << c.m << "\n";
  os << "T = " << c.T << "\n";
  os << "x0 = ";
  list(c.x0);
  os << "A = ";
  list(c.A);
  os << "B = ";
  list(c.B);
  os << "beta = ";
  list(c.beta);
  os << "R_x = ";
  list(c.R_x);
  os << "R_xu = ";
  list(c.R_xu);
  os << "R_u = ";
  list(c.R_u);
  os << "G = ";
  list(c.G);
  Eigen::MatrixXd Sigma(c.d, c.m);
  for (int j = 0; j < c.m; ++j) Sigma.col(j) = c.Sigma[j];
  os << "Sigma = ";
  list(Sigma);
  for (int j = 0; j < c.m; ++j) {
    if (!c.C[j].isZero(0.0)) {
      os << "C_" << (j + 1) << " = ";
      list(c.C[j]);
    }
    if (!c.D[j].isZero(0.0)) {
      os << "D_" << (j + 1) << " = ";
      list(c.D[j]);
    }
  }
  return os.str();
}

}  // namespace smpbsde

#endif  // SMPBSDE_CONFIG_HPP
