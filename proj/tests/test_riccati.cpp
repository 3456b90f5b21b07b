#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "smpbsde/lq_problem.hpp"
#include "smpbsde/riccati.hpp"
#include "smpbsde/rng.hpp"

namespace {

using smpbsde::Error;
using smpbsde::ErrorCategory;
using smpbsde::LqCoefficients;

// Scalar problem dx = u dt + sigma dW, cost 0.5 r int u^2 + 0.5 g0 x(T)^2.
// The value coefficients are known in closed form:
//   Gamma(t) = g0 / (1 + g0 (T - t) / r)
//   gamma(t) = 0
//   kappa(t) = (sigma^2 r / 2) log(1 + g0 (T - t) / r)
LqCoefficients scalar_problem(double g0, double r, double sigma, double T) {
  LqCoefficients c;
  c.d = c.ell = c.m = 1;
  c.T = T;
  c.x0 = Eigen::VectorXd::Constant(1, 1.0);
  c.A = Eigen::MatrixXd::Zero(1, 1);
  c.B = Eigen::MatrixXd::Identity(1, 1);
  c.beta = Eigen::VectorXd::Zero(1);
  c.C.assign(1, Eigen::MatrixXd::Zero(1, 1));
  c.D.assign(1, Eigen::MatrixXd::Zero(1, 1));
  c.Sigma.assign(1, Eigen::VectorXd::Constant(1, sigma));
  c.R_x = Eigen::MatrixXd::Zero(1, 1);
  c.R_xu = Eigen::MatrixXd::Zero(1, 1);
  c.R_u = Eigen::MatrixXd::Constant(1, 1, r);
  c.G = Eigen::MatrixXd::Constant(1, 1, g0);
  smpbsde::validate_coefficients(c);
  return c;
}

double gamma_exact(double g0, double r, double T, double t) {
  return g0 / (1.0 + g0 * (T - t) / r);
}

double kappa_exact(double g0, double r, double sigma, double T, double t) {
  return 0.5 * sigma * sigma * r * std::log1p(g0 * (T - t) / r);
}

TEST(Riccati, ScalarClosedForm) {
  const double g0 = 2.0, r = 0.5, sigma = 0.3, T = 1.0;
  const LqCoefficients c = scalar_problem(g0, r, sigma, T);
  const auto sol = smpbsde::integrate_riccati(c, 10000);
  double max_err = 0.0, max_kerr = 0.0;
  for (std::int64_t i = 0; i <= sol.n_steps; i += 100) {
    const double t = T * static_cast<double>(i) / static_cast<double>(sol.n_steps);
    max_err = std::max(max_err,
                       std::abs(sol.Gamma[i](0, 0) - gamma_exact(g0, r, T, t)));
    max_kerr = std::max(
        max_kerr, std::abs(sol.kappa[i] - kappa_exact(g0, r, sigma, T, t)));
    ASSERT_LT(std::abs(sol.gamma[i](0)), 1e-14);
  }
  EXPECT_LT(max_err, 1e-8);
  EXPECT_LT(max_kerr, 1e-8);
}

TEST(Riccati, FourthOrderInStepSize) {
  const double g0 = 2.0, r = 0.5, T = 1.0;
  const LqCoefficients c = scalar_problem(g0, r, 0.3, T);
  auto err_at_zero = [&](std::int64_t n) {
    const auto sol = smpbsde::integrate_riccati(c, n);
    return std::abs(sol.Gamma[0](0, 0) - gamma_exact(g0, r, T, 0.0));
  };
  const double coarse = err_at_zero(10);
  const double fine = err_at_zero(20);
  ASSERT_GT(coarse, 0.0);
  ASSERT_GT(fine, 0.0);
  EXPECT_GE(coarse / fine, 8.0);
  EXPECT_LE(coarse / fine, 40.0);
}

TEST(Riccati, TerminalAnchoring) {
  const LqCoefficients c = smpbsde::example2();
  const auto sol = smpbsde::integrate_riccati(c, 50);
  EXPECT_TRUE(sol.Gamma[sol.n_steps] == c.G);
  EXPECT_TRUE(sol.gamma[sol.n_steps].isZero(0.0));
  EXPECT_EQ(sol.kappa[sol.n_steps], 0.0);
  EXPECT_EQ(static_cast<int>(sol.Gamma.size()), 51);
}

TEST(Riccati, StaysSymmetric) {
  const auto sol = smpbsde::integrate_riccati(smpbsde::example2(), 200);
  for (const auto& G : sol.Gamma)
    EXPECT_TRUE(G == G.transpose().eval());
}

TEST(Riccati, DerivativeConsistentWithRhs) {
  // centered differences of the stored nodes approach the integrated field at
  // second order in the node spacing (the gap is the h^2 truncation term, so
  // halving the spacing divides it by about four)
  const LqCoefficients c = smpbsde::example2();
  auto gap_at = [&](std::int64_t n) {
    const auto sol = smpbsde::integrate_riccati(c, n);
    const double h = sol.step();
    double gap = 0.0;
    for (std::int64_t i : {n / 4, n / 2, 3 * n / 4}) {
      const auto rhs = smpbsde::riccati_rhs(c, sol.Gamma[i], sol.gamma[i],
                                            h * static_cast<double>(i));
      const Eigen::MatrixXd fd_G =
          (sol.Gamma[i + 1] - sol.Gamma[i - 1]) / (2 * h);
      const Eigen::VectorXd fd_g =
          (sol.gamma[i + 1] - sol.gamma[i - 1]) / (2 * h);
      const double fd_k = (sol.kappa[i + 1] - sol.kappa[i - 1]) / (2 * h);
      gap = std::max(gap, (fd_G - rhs.dGamma).cwiseAbs().maxCoeff());
      gap = std::max(gap, (fd_g - rhs.dgamma).cwiseAbs().maxCoeff());
      gap = std::max(gap, std::abs(fd_k - rhs.dkappa));
    }
    return gap;
  };
  const double coarse = gap_at(2000);
  const double fine = gap_at(4000);
  ASSERT_GT(fine, 0.0);
  EXPECT_LT(coarse, 1e-3);
  EXPECT_GE(coarse / fine, 3.0);
  EXPECT_LE(coarse / fine, 6.0);
}

TEST(Riccati, NodeSnapping) {
  const auto sol = smpbsde::integrate_riccati(smpbsde::example1(), 10);
  EXPECT_EQ(sol.node_index(0.0), 0);
  EXPECT_EQ(sol.node_index(0.5), 10);
  EXPECT_EQ(sol.node_index(0.25), 5);
  EXPECT_EQ(sol.node_index(0.5 + 1e-12), 10);
  EXPECT_EQ(sol.node_index(-1e-12), 0);
  EXPECT_EQ(sol.node_index(0.26), 5);  // nearest node
  try {
    sol.node_index(0.6);
    FAIL() << "expected domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::domain);
    EXPECT_DOUBLE_EQ(e.time, 0.6);
  }
  EXPECT_THROW(sol.node_index(-0.1), Error);
}

TEST(Riccati, FeedbackOfReferenceAdjointIsOptimalControl) {
  smpbsde::Rng rng(17);
  for (const auto& c : {smpbsde::example1(), smpbsde::example2()}) {
    const auto sol = smpbsde::integrate_riccati(c, 400);
    double sup = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const double t =
          sol.step() * static_cast<double>(sol.node_index(
                           rng.uniform(0.0, c.T)));
      Eigen::VectorXd x(c.d);
      for (int i = 0; i < c.d; ++i) x(i) = rng.uniform(-2.0, 2.0);
      const Eigen::VectorXd u_star = smpbsde::dp_optimal_control(c, sol, t, x);
      const auto [P, Q] = smpbsde::reference_pq(c, sol, t, x, u_star);
      const Eigen::VectorXd u_fb = smpbsde::feedback_map(c, t, x, P, Q);
      sup = std::max(sup, (u_star - u_fb).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(sup, 1e-9);
  }
}

TEST(Riccati, ValueGradientMatchesFiniteDifferences) {
  const LqCoefficients c = smpbsde::example2();
  const auto sol = smpbsde::integrate_riccati(c, 100);
  smpbsde::Rng rng(21);
  Eigen::VectorXd x(c.d);
  for (int i = 0; i < c.d; ++i) x(i) = rng.uniform(-1.0, 1.0);
  const Eigen::VectorXd g = smpbsde::value_gradient(sol, 0.25, x);
  const double eps = 1e-6;
  for (int i = 0; i < c.d; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += eps;
    xm(i) -= eps;
    const double fd = (smpbsde::value_at(sol, 0.25, xp) -
                       smpbsde::value_at(sol, 0.25, xm)) /
                      (2 * eps);
    EXPECT_NEAR(g(i), fd, 1e-6);
  }
}

TEST(Riccati, GridRefinementConverges) {
  const LqCoefficients c = smpbsde::example1();
  const auto a = smpbsde::integrate_riccati(c, 2000);
  const auto b = smpbsde::integrate_riccati(c, 4000);
  EXPECT_LT(std::abs(smpbsde::value_at(a, 0.0, c.x0) -
                     smpbsde::value_at(b, 0.0, c.x0)),
            1e-10);
  EXPECT_LT((a.Gamma[0] - b.Gamma[0]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Riccati, SerializationRoundTripsBitExact) {
  namespace fs = std::filesystem;
  const auto sol = smpbsde::integrate_riccati(smpbsde::example2(), 37);
  const std::string path =
      (fs::temp_directory_path() / "smpbsde_riccati_test.bin").string();
  smpbsde::save_riccati(sol, path);
  const auto back = smpbsde::load_riccati(path);
  EXPECT_EQ(back.T, sol.T);
  EXPECT_EQ(back.d, sol.d);
  EXPECT_EQ(back.n_steps, sol.n_steps);
  for (std::int64_t i = 0; i <= sol.n_steps; ++i) {
    ASSERT_TRUE(back.Gamma[i] == sol.Gamma[i]);
    ASSERT_TRUE(back.gamma[i] == sol.gamma[i]);
    ASSERT_EQ(back.kappa[i], sol.kappa[i]);
  }
  fs::remove(path);

  try {
    smpbsde::load_riccati("/nonexistent/riccati.bin");
    FAIL() << "expected io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }

  const std::string junk =
      (fs::temp_directory_path() / "smpbsde_riccati_junk.bin").string();
  {
    std::FILE* f = std::fopen(junk.c_str(), "wb");
    const char bytes[] = "not a riccati table";
    std::fwrite(bytes, 1, sizeof(bytes), f);
    std::fclose(f);
  }
  try {
    smpbsde::load_riccati(junk);
    FAIL() << "expected io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }
  fs::remove(junk);
}

TEST(Riccati, RejectsBadGrid) {
  try {
    smpbsde::integrate_riccati(smpbsde::example1(), 0);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
}

}  // namespace
