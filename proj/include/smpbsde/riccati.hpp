#ifndef SMPBSDE_RICCATI_HPP
#define SMPBSDE_RICCATI_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"

namespace smpbsde {

// Backward quadratic value expansion V(t,x) = x'Gamma(t)x/2 + x'gamma(t) +
// kappa(t), tabulated on a uniform grid over [0, T].
struct RiccatiSolution {
  double T = 0.0;
  int d = 0;
  std::int64_t n_steps = 0;  // grid nodes are 0 ... n_steps
  std::vector<Eigen::MatrixXd> Gamma;
  std::vector<Eigen::VectorXd> gamma;
  std::vector<double> kappa;

  double step() const { return T / static_cast<double>(n_steps); }

  // Nearest-node snap; queries outside [0, T] (up to round-off slack) fail.
  std::int64_t node_index(double t) const {
    const double h = step();
    const double slack = 1e-9 * T;
    if (t < -slack || t > T + slack)
      fail_at_time(ErrorCategory::domain, "time outside [0, T]", t);
    std::int64_t idx = std::llround(t / h);
    if (idx < 0) idx = 0;
    if (idx > n_steps) idx = n_steps;
    return idx;
  }
};

struct RiccatiRhs {
  Eigen::MatrixXd dGamma;
  Eigen::VectorXd dgamma;
  double dkappa = 0.0;
};

// Time derivative of (Gamma, gamma, kappa) at state value Gamma, gamma.
inline RiccatiRhs riccati_rhs(const LqCoefficients& c,
                              const Eigen::MatrixXd& Gamma,
                              const Eigen::VectorXd& gamma, double t_for_error) {
  Eigen::MatrixXd R_hat = c.R_u;
  for (int j = 0; j < c.m; ++j)
    R_hat += c.D[j].transpose() * Gamma * c.D[j];
  Eigen::LLT<Eigen::MatrixXd> llt(R_hat);
  if (llt.info() != Eigen::Success)
    fail_at_time(ErrorCategory::singular_control,
                 "R_u + sum_j D_j' Gamma D_j is not positive definite",
                 t_for_error);

  Eigen::MatrixXd S_hat = c.B.transpose() * Gamma + c.R_xu;
  for (int j = 0; j < c.m; ++j)
    S_hat += c.D[j].transpose() * Gamma * c.C[j];

  Eigen::VectorXd r_vec = c.B.transpose() * gamma;
  for (int j = 0; j < c.m; ++j)
    r_vec += c.D[j].transpose() * Gamma * c.Sigma[j];

  const Eigen::MatrixXd Psi = llt.solve(S_hat);      // ell x d
  const Eigen::VectorXd psi = llt.solve(r_vec);      // ell

  RiccatiRhs out;
  out.dGamma = Gamma * c.A + c.A.transpose() * Gamma + c.R_x;
  for (int j = 0; j < c.m; ++j)
    out.dGamma += c.C[j].transpose() * Gamma * c.C[j];
  out.dGamma -= S_hat.transpose() * Psi;
  out.dGamma = (-0.5 * (out.dGamma + out.dGamma.transpose())).eval();

  out.dgamma = c.A.transpose() * gamma + Gamma * c.beta - S_hat.transpose() * psi;
  for (int j = 0; j < c.m; ++j)
    out.dgamma += c.C[j].transpose() * Gamma * c.Sigma[j];
  out.dgamma = -out.dgamma;

  double quad = psi.dot(R_hat * psi);
  double noise = 0.0;
  for (int j = 0; j < c.m; ++j)
    noise += c.Sigma[j].dot(Gamma * c.Sigma[j]);
  out.dkappa = 0.5 * quad - c.beta.dot(gamma) - 0.5 * noise;
  return out;
}

// Classic RK4 from the terminal condition Gamma(T) = G, gamma(T) = 0,
// kappa(T) = 0, integrating backward on n_steps uniform steps.
inline RiccatiSolution integrate_riccati(const LqCoefficients& c,
                                         std::int64_t n_steps) {
  require(n_steps >= 1, ErrorCategory::config,
          "Riccati grid needs at least one step");
  RiccatiSolution sol;
  sol.T = c.T;
  sol.d = c.d;
  sol.n_steps = n_steps;
  sol.Gamma.resize(n_steps + 1);
  sol.gamma.resize(n_steps + 1);
  sol.kappa.resize(n_steps + 1);

  const double h = c.T / static_cast<double>(n_steps);
  sol.Gamma[n_steps] = c.G;
  sol.gamma[n_steps] = Eigen::VectorXd::Zero(c.d);
  sol.kappa[n_steps] = 0.0;

  for (std::int64_t i = n_steps; i > 0; --i) {
    const double t = static_cast<double>(i) * h;
    const Eigen::MatrixXd& Gm = sol.Gamma[i];
    const Eigen::VectorXd& gm = sol.gamma[i];
    const double km = sol.kappa[i];

    const RiccatiRhs k1 = riccati_rhs(c, Gm, gm, t);
    const RiccatiRhs k2 = riccati_rhs(c, Gm - 0.5 * h * k1.dGamma,
                                      gm - 0.5 * h * k1.dgamma, t - 0.5 * h);
    const RiccatiRhs k3 = riccati_rhs(c, Gm - 0.5 * h * k2.dGamma,
                                      gm - 0.5 * h * k2.dgamma, t - 0.5 * h);
    const RiccatiRhs k4 =
        riccati_rhs(c, Gm - h * k3.dGamma, gm - h * k3.dgamma, t - h);

    Eigen::MatrixXd Gn =
        Gm - (h / 6.0) * (k1.dGamma + 2.0 * k2.dGamma + 2.0 * k3.dGamma +
                          k4.dGamma);
    sol.Gamma[i - 1] = 0.5 * (Gn + Gn.transpose());
    sol.gamma[i - 1] =
        gm - (h / 6.0) * (k1.dgamma + 2.0 * k2.dgamma + 2.0 * k3.dgamma +
                          k4.dgamma);
    sol.kappa[i - 1] =
        km - (h / 6.0) * (k1.dkappa + 2.0 * k2.dkappa + 2.0 * k3.dkappa +
                          k4.dkappa);
  }
  return sol;
}

inline double value_at(const RiccatiSolution& sol, double t,
                       const Eigen::VectorXd& x) {
  const std::int64_t i = sol.node_index(t);
  return 0.5 * x.dot(sol.Gamma[i] * x) + x.dot(sol.gamma[i]) + sol.kappa[i];
}

inline Eigen::VectorXd value_gradient(const RiccatiSolution& sol, double t,
                                      const Eigen::VectorXd& x) {
  const std::int64_t i = sol.node_index(t);
  return sol.Gamma[i] * x + sol.gamma[i];
}

inline Eigen::VectorXd dp_optimal_control(const LqCoefficients& c,
                                          const RiccatiSolution& sol, double t,
                                          const Eigen::VectorXd& x) {
  const std::int64_t i = sol.node_index(t);
  const Eigen::MatrixXd& Gamma = sol.Gamma[i];
  const Eigen::VectorXd& gamma = sol.gamma[i];

  Eigen::MatrixXd R_hat = c.R_u;
  for (int j = 0; j < c.m; ++j)
    R_hat += c.D[j].transpose() * Gamma * c.D[j];
  Eigen::LLT<Eigen::MatrixXd> llt(R_hat);
  if (llt.info() != Eigen::Success)
    fail_at_time(ErrorCategory::singular_control,
                 "R_u + sum_j D_j' Gamma D_j is not positive definite", t);

  Eigen::VectorXd rhs = c.B.transpose() * (Gamma * x + gamma) + c.R_xu * x;
  for (int j = 0; j < c.m; ++j)
    rhs += c.D[j].transpose() * Gamma * (c.C[j] * x + c.Sigma[j]);
  return -llt.solve(rhs);
}

// Adjoint pair along the value function: P = -(Gamma x + gamma),
// Q = -Gamma sigma_bar(t, x, u).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> reference_pq(
    const LqCoefficients& c, const RiccatiSolution& sol, double t,
    const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  const std::int64_t i = sol.node_index(t);
  Eigen::VectorXd P = -(sol.Gamma[i] * x + sol.gamma[i]);
  Eigen::MatrixXd Q = -sol.Gamma[i] * diffusion_bar(c, t, x, u);
  return {std::move(P), std::move(Q)};
}

namespace detail {

constexpr std::uint32_t kRiccatiMagic = 0x52494353u;
constexpr std::uint32_t kRiccatiVersion = 1u;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace detail

inline void save_riccati(const RiccatiSolution& sol, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorCategory::io, "cannot open '" + path + "' for write");
  detail::write_pod(os, detail::kRiccatiMagic);
  detail::write_pod(os, detail::kRiccatiVersion);
  detail::write_pod(os, static_cast<std::int32_t>(sol.d));
  detail::write_pod(os, sol.n_steps);
  detail::write_pod(os, sol.T);
  for (std::int64_t i = 0; i <= sol.n_steps; ++i) {
    os.write(reinterpret_cast<const char*>(sol.Gamma[i].data()),
             static_cast<std::streamsize>(sizeof(double) * sol.d * sol.d));
    os.write(reinterpret_cast<const char*>(sol.gamma[i].data()),
             static_cast<std::streamsize>(sizeof(double) * sol.d));
    detail::write_pod(os, sol.kappa[i]);
  }
  require(os.good(), ErrorCategory::io, "write failed for '" + path + "'");
}

inline RiccatiSolution load_riccati(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCategory::io, "cannot open '" + path + "'");
  std::uint32_t magic = 0, version = 0;
  detail::read_pod(is, magic);
  detail::read_pod(is, version);
  require(magic == detail::kRiccatiMagic, ErrorCategory::io,
          "'" + path + "' is not a value-table file");
  require(version == detail::kRiccatiVersion, ErrorCategory::io,
          "value-table version mismatch in '" + path + "'");
  RiccatiSolution sol;
  std::int32_t d = 0;
  detail::read_pod(is, d);
  detail::read_pod(is, sol.n_steps);
  detail::read_pod(is, sol.T);
  require(d >= 1 && sol.n_steps >= 1 && sol.T > 0, ErrorCategory::io,
          "corrupt value-table header in '" + path + "'");
  sol.d = d;
  sol.Gamma.resize(sol.n_steps + 1);
  sol.gamma.resize(sol.n_steps + 1);
  sol.kappa.resize(sol.n_steps + 1);
  for (std::int64_t i = 0; i <= sol.n_steps; ++i) {
    sol.Gamma[i].resize(d, d);
    sol.gamma[i].resize(d);
    is.read(reinterpret_cast<char*>(sol.Gamma[i].data()),
            static_cast<std::streamsize>(sizeof(double) * d * d));
    is.read(reinterpret_cast<char*>(sol.gamma[i].data()),
            static_cast<std::streamsize>(sizeof(double) * d));
    detail::read_pod(is, sol.kappa[i]);
  }
  require(is.good(), ErrorCategory::io, "truncated value-table '" + path + "'");
  return sol;
}

}  // namespace smpbsde

#endif  // SMPBSDE_RICCATI_HPP
