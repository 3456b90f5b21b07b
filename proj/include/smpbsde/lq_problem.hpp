#ifndef SMPBSDE_LQ_PROBLEM_HPP
#define SMPBSDE_LQ_PROBLEM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "smpbsde/errors.hpp"

namespace smpbsde {

// Controlled linear dynamics with quadratic costs:
//   drift            A x + B u + beta
//   diffusion col j  C_j x + D_j u + Sigma_j
//   running cost     (x' R_x x + u' R_xu x + u' R_u u) / 2
//   terminal cost    x' G x / 2
struct LqCoefficients {
  int d = 0;    // state dimension
  int ell = 0;  // control dimension
  int m = 0;    // driving noise dimension
  double T = 0.0;
  Eigen::VectorXd x0;

  Eigen::MatrixXd A;                  // d x d
  Eigen::MatrixXd B;                  // d x ell
  Eigen::VectorXd beta;               // d
  std::vector<Eigen::MatrixXd> C;     // m entries, d x d
  std::vector<Eigen::MatrixXd> D;     // m entries, d x ell
  std::vector<Eigen::VectorXd> Sigma; // m entries, d

  Eigen::MatrixXd R_x;   // d x d, symmetric
  Eigen::MatrixXd R_xu;  // ell x d
  Eigen::MatrixXd R_u;   // ell x ell, symmetric positive definite
  Eigen::MatrixXd G;     // d x d, symmetric

  Eigen::MatrixXd R_u_inv;  // cached at validation

  bool drift_control() const {
    for (const auto& Dj : D)
      if (Dj.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
  }

  bool constant_diffusion() const {
    for (const auto& Cj : C)
      if (Cj.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
  }

  // Columns Sigma_1 ... Sigma_m as a d x m matrix.
  Eigen::MatrixXd sigma_constant() const {
    Eigen::MatrixXd S(d, m);
    for (int j = 0; j < m; ++j) S.col(j) = Sigma[j];
    return S;
  }
};

namespace detail {

inline bool is_symmetric(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) return false;
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = i + 1; j < M.cols(); ++j)
      if (M(i, j) != M(j, i)) return false;
  return true;
}

}  // namespace detail

inline void validate_coefficients(LqCoefficients& c) {
  require(c.d >= 1 && c.ell >= 1 && c.m >= 1, ErrorCategory::shape_mismatch,
          "dimensions d, ell, m must be positive");
  require(c.T > 0.0, ErrorCategory::config, "horizon T must be positive");
  require(c.x0.size() == c.d, ErrorCategory::shape_mismatch, "x0 size");
  require(c.A.rows() == c.d && c.A.cols() == c.d, ErrorCategory::shape_mismatch,
          "A must be d x d");
  require(c.B.rows() == c.d && c.B.cols() == c.ell,
          ErrorCategory::shape_mismatch, "B must be d x ell");
  require(c.beta.size() == c.d, ErrorCategory::shape_mismatch, "beta size");
  require(static_cast<int>(c.C.size()) == c.m &&
              static_cast<int>(c.D.size()) == c.m &&
              static_cast<int>(c.Sigma.size()) == c.m,
          ErrorCategory::shape_mismatch, "C, D, Sigma need one entry per noise");
  for (int j = 0; j < c.m; ++j) {
    require(c.C[j].rows() == c.d && c.C[j].cols() == c.d,
            ErrorCategory::shape_mismatch, "C_j must be d x d");
    require(c.D[j].rows() == c.d && c.D[j].cols() == c.ell,
            ErrorCategory::shape_mismatch, "D_j must be d x ell");
    require(c.Sigma[j].size() == c.d, ErrorCategory::shape_mismatch,
            "Sigma_j size");
  }
  require(c.R_x.rows() == c.d && c.R_x.cols() == c.d,
          ErrorCategory::shape_mismatch, "R_x must be d x d");
  require(c.R_xu.rows() == c.ell && c.R_xu.cols() == c.d,
          ErrorCategory::shape_mismatch, "R_xu must be ell x d");
  require(c.R_u.rows() == c.ell && c.R_u.cols() == c.ell,
          ErrorCategory::shape_mismatch, "R_u must be ell x ell");
  require(c.G.rows() == c.d && c.G.cols() == c.d,
          ErrorCategory::shape_mismatch, "G must be d x d");
  require(detail::is_symmetric(c.R_x), ErrorCategory::config,
          "R_x must be symmetric");
  require(detail::is_symmetric(c.R_u), ErrorCategory::config,
          "R_u must be symmetric");
  require(detail::is_symmetric(c.G), ErrorCategory::config,
          "G must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(c.R_u);
  if (llt.info() != Eigen::Success)
    fail(ErrorCategory::singular_control,
         "R_u must be positive definite for the feedback map");
  c.R_u_inv = llt.solve(Eigen::MatrixXd::Identity(c.ell, c.ell));
}

inline Eigen::VectorXd drift_bar(const LqCoefficients& c, double /*t*/,
                                 const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& u) {
  return c.A * x + c.B * u + c.beta;
}

inline Eigen::MatrixXd diffusion_bar(const LqCoefficients& c, double /*t*/,
                                     const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u) {
  Eigen::MatrixXd s(c.d, c.m);
  for (int j = 0; j < c.m; ++j)
    s.col(j) = c.C[j] * x + c.D[j] * u + c.Sigma[j];
  return s;
}

inline double running_cost(const LqCoefficients& c, double /*t*/,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return 0.5 * (x.dot(c.R_x * x) + u.dot(c.R_xu * x) + u.dot(c.R_u * u));
}

inline double terminal_cost(const LqCoefficients& c, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(c.G * x);
}

inline Eigen::VectorXd terminal_gradient(const LqCoefficients& c,
                                         const Eigen::VectorXd& x) {
  return c.G * x;
}

inline double hamiltonian(const LqCoefficients& c, double t,
                          const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& p, const Eigen::MatrixXd& q) {
  require(q.rows() == c.d && q.cols() == c.m, ErrorCategory::shape_mismatch,
          "q must be d x m");
  const Eigen::MatrixXd s = diffusion_bar(c, t, x, u);
  double trace_term = 0.0;
  for (int j = 0; j < c.m; ++j) trace_term += q.col(j).dot(s.col(j));
  return p.dot(drift_bar(c, t, x, u)) + trace_term - running_cost(c, t, x, u);
}

// Gradient of the Hamiltonian in x.
inline Eigen::VectorXd adjoint_driver_bar(const LqCoefficients& c, double /*t*/,
                                          const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& u,
                                          const Eigen::VectorXd& p,
                                          const Eigen::MatrixXd& q) {
  Eigen::VectorXd f = c.A.transpose() * p;
  for (int j = 0; j < c.m; ++j) f += c.C[j].transpose() * q.col(j);
  f -= c.R_x * x;
  f -= 0.5 * c.R_xu.transpose() * u;
  return f;
}

inline Eigen::VectorXd feedback_map(const LqCoefficients& c, double /*t*/,
                                    const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& p,
                                    const Eigen::MatrixXd& q) {
  require(q.rows() == c.d && q.cols() == c.m, ErrorCategory::shape_mismatch,
          "q must be d x m");
  Eigen::VectorXd inner = c.R_xu * x - c.B.transpose() * p;
  for (int j = 0; j < c.m; ++j) inner -= c.D[j].transpose() * q.col(j);
  return -c.R_u_inv * inner;
}

// Coefficient bundle with the feedback map substituted into drift, diffusion
// and adjoint driver.
struct FbsdeCoefficients {
  LqCoefficients c;

  Eigen::VectorXd control(double t, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& p,
                          const Eigen::MatrixXd& q) const {
    return feedback_map(c, t, x, p, q);
  }
  Eigen::VectorXd b(double t, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& p, const Eigen::MatrixXd& q) const {
    return drift_bar(c, t, x, control(t, x, p, q));
  }
  Eigen::MatrixXd sigma(double t, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& p,
                        const Eigen::MatrixXd& q) const {
    return diffusion_bar(c, t, x, control(t, x, p, q));
  }
  Eigen::VectorXd F(double t, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& p, const Eigen::MatrixXd& q) const {
    return adjoint_driver_bar(c, t, x, control(t, x, p, q), p, q);
  }
  Eigen::VectorXd minus_terminal_gradient(const Eigen::VectorXd& x) const {
    return -terminal_gradient(c, x);
  }
};

inline FbsdeCoefficients composed_coefficients(const LqCoefficients& c) {
  return FbsdeCoefficients{c};
}

inline LqCoefficients example1() {
  LqCoefficients c;
  c.d = 6;
  c.ell = 2;
  c.m = 6;
  c.T = 0.5;
  c.x0 = Eigen::VectorXd::Constant(6, 0.1);
  Eigen::VectorXd diag(6);
  diag << 1, 2, 3, 1, 2, 3;
  c.A = (-diag).asDiagonal();
  c.B.resize(6, 2);
  c.B << 1, -1,
         1, 1,
         0.5, 1,
         1, -1,
         0, -1,
         0, 1;
  Eigen::VectorXd shift(6);
  shift << -0.2, -0.1, 0, 0, 0.1, 0.2;
  c.beta = -c.A * shift;
  c.C.assign(6, Eigen::MatrixXd::Zero(6, 6));
  c.D.assign(6, Eigen::MatrixXd::Zero(6, 2));
  Eigen::VectorXd sig(6);
  sig << 0.05, 0.25, 0.05, 0.25, 0.05, 0.25;
  c.Sigma.resize(6);
  for (int j = 0; j < 6; ++j) {
    c.Sigma[j] = Eigen::VectorXd::Zero(6);
    c.Sigma[j](j) = sig(j);
  }
  Eigen::VectorXd rx(6), g(6);
  rx << 25, 1, 25, 1, 25, 1;
  g << 1, 25, 1, 25, 1, 25;
  c.R_x = (2.0 * rx).asDiagonal();
  c.R_xu = Eigen::MatrixXd::Zero(2, 6);
  c.R_u = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  c.G = (2.0 * g).asDiagonal();
  validate_coefficients(c);
  return c;
}

inline LqCoefficients example2() {
  LqCoefficients c = example1();
  Eigen::VectorXd diag(6);
  diag << 1, 2, 3, 1, 2, 3;
  Eigen::MatrixXd Cj = (diag / 60.0).asDiagonal();
  Eigen::MatrixXd Dj(6, 2);
  Dj << 1, 0,
        0, -1,
        1, 0,
        0, -1,
        1, 0,
        0, -1;
  Dj /= 60.0;
  c.C.assign(6, Cj);
  c.D.assign(6, Dj);
  validate_coefficients(c);
  return c;
}

inline LqCoefficients preset_problem(const std::string& name) {
  if (name == "example1") return example1();
  if (name == "example2") return example2();
  fail(ErrorCategory::config, "unknown problem preset '" + name + "'");
}

}  // namespace smpbsde

#endif  // SMPBSDE_LQ_PROBLEM_HPP
