#ifndef SMPBSDE_METRICS_HPP
#define SMPBSDE_METRICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/paths.hpp"
#include "smpbsde/riccati.hpp"

namespace smpbsde {

// One validation row: discretization level plus the error panel.
struct ErrorReport {
  int N = 0;
  double max_x_err = 0.0;     // max_n  E |X*_n - X_n|^2
  double max_p_err = 0.0;     // max_n  E |P*_n - P_n|^2
  double avg_q_err = 0.0;     // mean over n < N of E |Q*_n - Q_n|^2
  double avg_u_err = 0.0;     // mean over n < N of E |u*_n - u_n|^2
  double terminal_loss = 0.0;
  double y0_err = 0.0;        // |mean Y_0 - V(0, x0)|
  double a_posteriori = 0.0;  // T/N + terminal_loss
  double iter_time_s = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kErrorCsvHeader =
    "N,max_x_err,max_p_err,avg_q_err,avg_u_err,terminal_loss,y0_err,"
    "iter_time_s";

// Averages over step indices divide by N (unweighted mean over n = 0..N-1);
// emitted with every CSV so downstream tooling sees the convention.
inline constexpr const char* kAvgConventionNote =
    "# avg_* columns: unweighted mean over step indices n = 0..N-1";

inline std::string format_sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.8e", v);
  return buf;
}

inline std::string format_error_row(const ErrorReport& r) {
  std::string row = std::to_string(r.N);
  for (double v : {r.max_x_err, r.max_p_err, r.avg_q_err, r.avg_u_err,
                   r.terminal_loss, r.y0_err, r.iter_time_s})
    row += "," + format_sci(v);
  return row;
}

// Coupled strong errors between a coarse-scheme trajectory and the fine-grid
// reference restricted to the coarse nodes. Both batches must stem from the
// same Brownian batch; expectations accumulate in double.
template <typename Scalar>
ErrorReport pathwise_errors(const TrajectoryBatchT<Scalar>& coarse,
                            const TrajectoryBatch& reference,
                            const CoarseIncrementsT<Scalar>& ci,
                            const LqCoefficients& c,
                            const RiccatiSolution& sol) {
  require(coarse.brownian_seed == reference.brownian_seed &&
              coarse.n_fine == reference.n_fine && coarse.T == reference.T,
          ErrorCategory::contract_violation,
          "coarse and reference batches are not coupled");
  require(coarse.M == reference.M, ErrorCategory::shape_mismatch,
          "sample count mismatch");
  const int N = coarse.num_nodes() - 1;
  require(N >= 1 && static_cast<int>(coarse.Q.size()) == N,
          ErrorCategory::contract_violation,
          "coarse trajectory must cover a full coarse grid");

  ErrorReport rep;
  rep.N = N;
  const double Md = static_cast<double>(coarse.M);

  for (int n = 0; n <= N; ++n) {
    const int pos = reference.find_fine_index(coarse.fine_index[n]);
    require(pos >= 0, ErrorCategory::grid_mismatch,
            "reference does not store a coarse node");
    const double ex =
        (reference.X[pos] - coarse.X[n].template cast<double>())
            .squaredNorm() / Md;
    const double ep =
        (reference.P[pos] - coarse.P[n].template cast<double>())
            .squaredNorm() / Md;
    rep.max_x_err = std::max(rep.max_x_err, ex);
    rep.max_p_err = std::max(rep.max_p_err, ep);
    if (n < N) {
      const double eq =
          (reference.Q[pos] - coarse.Q[n].template cast<double>())
              .squaredNorm() / Md;
      const double eu =
          (reference.u[pos] - coarse.u[n].template cast<double>())
              .squaredNorm() / Md;
      rep.avg_q_err += eq;
      rep.avg_u_err += eu;
    }
  }
  rep.avg_q_err /= static_cast<double>(N);
  rep.avg_u_err /= static_cast<double>(N);

  rep.terminal_loss = terminal_loss(c, coarse);
  const ValueEstimate est = backward_value_sum(c, coarse, ci);
  rep.y0_err = std::abs(est.mean - value_at(sol, 0.0, c.x0));
  rep.a_posteriori = c.T / static_cast<double>(N) + rep.terminal_loss;
  return rep;
}

// Relative L2-in-time profile. Nodes where the reference second moment
// vanishes report the absolute error and set the flag.
struct RelativeSeriesRow {
  int n = 0;
  double t = 0.0;
  double x = 0.0, p = 0.0, q = 0.0, u = 0.0;
  bool x_abs = false, p_abs = false, q_abs = false, u_abs = false;
  bool has_qu = true;  // terminal row carries no Q or u entry
};

template <typename Scalar>
std::vector<RelativeSeriesRow> relative_l2_in_time(
    const TrajectoryBatchT<Scalar>& coarse, const TrajectoryBatch& reference) {
  require(coarse.brownian_seed == reference.brownian_seed &&
              coarse.n_fine == reference.n_fine,
          ErrorCategory::contract_violation,
          "coarse and reference batches are not coupled");
  const int N = coarse.num_nodes() - 1;
  const double Md = static_cast<double>(coarse.M);

  auto entry = [&](const Eigen::MatrixXd& ref, const Eigen::MatrixXd& app,
                   double& value, bool& abs_flag) {
    const double err = (ref - app).squaredNorm() / Md;
    const double den = ref.squaredNorm() / Md;
    if (den > 0.0) {
      value = std::sqrt(err / den);
      abs_flag = false;
    } else {
      value = std::sqrt(err);
      abs_flag = true;
    }
  };

  std::vector<RelativeSeriesRow> rows;
  for (int n = 0; n <= N; ++n) {
    const int pos = reference.find_fine_index(coarse.fine_index[n]);
    require(pos >= 0, ErrorCategory::grid_mismatch,
            "reference does not store a coarse node");
    RelativeSeriesRow row;
    row.n = n;
    row.t = coarse.times[n];
    entry(reference.X[pos], coarse.X[n].template cast<double>(), row.x,
          row.x_abs);
    entry(reference.P[pos], coarse.P[n].template cast<double>(), row.p,
          row.p_abs);
    if (n < N) {
      entry(reference.Q[pos], coarse.Q[n].template cast<double>(), row.q,
            row.q_abs);
      entry(reference.u[pos], coarse.u[n].template cast<double>(), row.u,
            row.u_abs);
    } else {
      row.has_qu = false;
    }
    rows.push_back(row);
  }
  return rows;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;  // in log space
};

// Least-squares slope of log(value) against log(h).
inline RateFit fit_rate(const std::vector<double>& h,
                        const std::vector<double>& value) {
  require(h.size() == value.size(), ErrorCategory::shape_mismatch,
          "rate fit needs matching arrays");
  require(h.size() >= 2, ErrorCategory::domain,
          "rate fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    require(h[i] > 0.0 && value[i] > 0.0, ErrorCategory::domain,
            "rate fit needs positive step sizes and values");
    const double lx = std::log(h[i]);
    const double ly = std::log(value[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double det = n * sxx - sx * sx;
  require(det != 0.0, ErrorCategory::domain,
          "rate fit needs at least two distinct step sizes");
  RateFit f;
  f.slope = (n * sxy - sx * sy) / det;
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

// Structural constants of the coupled system used by the a priori error
// bound: one-sided monotonicity and Lipschitz moduli plus the two tuning
// parameters and the horizon.
struct BoundConstants {
  double T = 1.0;
  double k_b = 0.0;        // drift monotonicity in x
  double L_b_x = 0.0;      // drift Lipschitz in x
  double L_b_p = 0.0;      // drift sensitivity in (p, q)
  double L_sigma_x = 0.0;  // squared-diffusion modulus in x
  double L_sigma_p = 0.0;  // squared-diffusion modulus in (p, q)
  double k_F = 0.0;        // adjoint driver monotonicity
  double L_F_x = 0.0;      // adjoint driver modulus in x
  double L_F_q = 0.0;      // adjoint driver modulus in q
  double L_gx_x = 0.0;     // terminal gradient Lipschitz modulus
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

inline void validate_bound_constants(const BoundConstants& bc) {
  require(bc.T > 0.0, ErrorCategory::domain, "horizon must be positive");
  require(bc.lambda1 > 0.0 && bc.lambda2 > 0.0, ErrorCategory::domain,
          "tuning parameters must be positive");
  require(bc.lambda2 >= bc.L_F_q, ErrorCategory::domain,
          "lambda2 must dominate the q-modulus of the adjoint driver");
  for (double L : {bc.L_b_x, bc.L_b_p, bc.L_sigma_x, bc.L_sigma_p, bc.L_F_x,
                   bc.L_F_q, bc.L_gx_x})
    require(L >= 0.0, ErrorCategory::domain,
            "Lipschitz moduli must be nonnegative");
}

struct LemmaConstants {
  double A1 = 0.0, A2 = 0.0, A3 = 0.0, A4 = 0.0;
};

// Step-dependent contraction constants; requires (2 k_F + lambda2) h < 1.
inline LemmaConstants lemma_constants(const BoundConstants& bc, double h) {
  validate_bound_constants(bc);
  require(h > 0.0, ErrorCategory::domain, "step size must be positive");
  const double cF = 2.0 * bc.k_F + bc.lambda2;
  require(cF * h < 1.0, ErrorCategory::step_too_large,
          "step size too large for the adjoint contraction");
  LemmaConstants lc;
  lc.A1 = 2.0 * bc.k_b + bc.lambda1 + bc.L_sigma_x + bc.L_b_x * h;
  lc.A2 = (1.0 / bc.lambda1 + h) * bc.L_b_p + bc.L_sigma_p;
  lc.A3 = -std::log1p(-cF * h) / h;
  lc.A4 = bc.L_F_x / ((1.0 - cF * h) * bc.lambda2);
  return lc;
}

struct BoundSummary {
  double A0 = 0.0;  // leading constant of the a posteriori bound
  double A1 = 0.0, A2 = 0.0, A3 = 0.0, A4 = 0.0;  // h -> 0 limits
};

// Vanishing-step limits of the lemma constants and the assembled leading
// constant of the error bound.
inline BoundSummary a0_bar(const BoundConstants& bc) {
  validate_bound_constants(bc);
  BoundSummary s;
  s.A1 = 2.0 * bc.k_b + bc.lambda1 + bc.L_sigma_x;
  s.A2 = bc.L_b_p / bc.lambda1 + bc.L_sigma_p;
  s.A3 = 2.0 * bc.k_F + bc.lambda2;
  s.A4 = bc.L_F_x / bc.lambda2;

  const double sum = s.A1 + s.A3;
  const double T = bc.T;
  // (1 - exp(-sum T)) / sum and (exp(sum T) - 1) / sum, continuous at 0.
  const double decay =
      sum == 0.0 ? T : -std::expm1(-sum * T) / sum;
  const double growth = sum == 0.0 ? T : std::expm1(sum * T) / sum;
  s.A0 = s.A2 * decay * (bc.L_gx_x * std::exp(sum * T) + s.A4 * growth);
  return s;
}

}  // namespace smpbsde

#endif  // SMPBSDE_METRICS_HPP
