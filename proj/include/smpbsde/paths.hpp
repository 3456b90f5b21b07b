#ifndef SMPBSDE_PATHS_HPP
#define SMPBSDE_PATHS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/nn.hpp"
#include "smpbsde/riccati.hpp"
#include "smpbsde/rng.hpp"

namespace smpbsde {

// Batch of i.i.d. Brownian increment paths on the fine grid. Increments are
// generated on demand, one deterministic substream per sample, so the batch
// stays cheap to hold at any (M, N_fine).
// Sample path buffer, N_fine x m, stored row major so the flattened memory
// follows the draw order (steps outer, coordinates inner).
using PathIncrements =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BrownianBatch {
  std::uint64_t seed = 0;
  std::int64_t M = 0;
  std::int64_t N_fine = 0;
  int m = 0;
  double T = 0.0;

  double fine_step() const { return T / static_cast<double>(N_fine); }

  // Increments of sample k in draw order.
  void fill_sample(std::int64_t k, PathIncrements& out) const {
    out.resize(N_fine, m);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    const double scale = std::sqrt(fine_step());
    for (std::int64_t i = 0; i < N_fine; ++i)
      for (int j = 0; j < m; ++j) out(i, j) = scale * rng.normal();
  }
};

inline BrownianBatch sample_brownian(std::uint64_t seed, std::int64_t M,
                                     std::int64_t N_fine, int m, double T) {
  require(M >= 1 && N_fine >= 1 && m >= 1, ErrorCategory::shape_mismatch,
          "Brownian batch needs M, N_fine, m >= 1");
  require(T > 0.0, ErrorCategory::domain, "horizon must be positive");
  return BrownianBatch{seed, M, N_fine, m, T};
}

// Increments summed onto a coarse grid of N steps, materialized per step as
// an M x m matrix. Keeps the provenance needed to recognize coupled batches.
template <typename Scalar>
struct CoarseIncrementsT {
  std::uint64_t seed = 0;
  std::int64_t n_fine = 0;  // underlying fine step count
  std::int64_t M = 0;
  int N = 0;
  int m = 0;
  double T = 0.0;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> dW;

  double step() const { return T / static_cast<double>(N); }
};

using CoarseIncrements = CoarseIncrementsT<double>;

// Coarse increment i = sum of the fine increments in [t_i, t_{i+1}), summed
// in index order in double before the cast to Scalar.
template <typename Scalar = double>
CoarseIncrementsT<Scalar> coarsen(const BrownianBatch& bb, int N) {
  require(N >= 1, ErrorCategory::grid_mismatch, "coarse grid needs N >= 1");
  require(bb.N_fine % N == 0, ErrorCategory::grid_mismatch,
          "fine step count must be a multiple of the coarse step count");
  const std::int64_t window = bb.N_fine / N;
  CoarseIncrementsT<Scalar> out;
  out.seed = bb.seed;
  out.n_fine = bb.N_fine;
  out.M = bb.M;
  out.N = N;
  out.m = bb.m;
  out.T = bb.T;
  out.dW.assign(N, Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(
                       bb.M, bb.m));
  PathIncrements row;
  for (std::int64_t k = 0; k < bb.M; ++k) {
    bb.fill_sample(k, row);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < bb.m; ++j) {
        double s = 0.0;
        for (std::int64_t f = 0; f < window; ++f)
          s += row(static_cast<std::int64_t>(i) * window + f, j);
        out.dW[i](k, j) = static_cast<Scalar>(s);
      }
  }
  return out;
}

template <typename Scalar>
CoarseIncrementsT<Scalar> cast_increments(const CoarseIncrements& ci) {
  CoarseIncrementsT<Scalar> out;
  out.seed = ci.seed;
  out.n_fine = ci.n_fine;
  out.M = ci.M;
  out.N = ci.N;
  out.m = ci.m;
  out.T = ci.T;
  out.dW.reserve(ci.dW.size());
  for (const auto& w : ci.dW) out.dW.push_back(w.template cast<Scalar>());
  return out;
}

// State, adjoint, Q-process and control values along a batch of paths on a
// (possibly partial) node set of a common fine grid. X and P cover all stored
// nodes; Q and u cover the stored nodes with the terminal one dropped. Per
// sample, Q rows hold the d x m matrix flattened column major.
template <typename Scalar>
struct TrajectoryBatchT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  double T = 0.0;
  std::uint64_t brownian_seed = 0;
  std::int64_t n_fine = 0;
  std::int64_t M = 0;
  int d = 0;
  int m = 0;
  int ell = 0;

  std::vector<double> times;            // stored node times
  std::vector<std::int64_t> fine_index; // stored node indices on the fine grid
  std::vector<Matrix> X;                // per node, M x d
  std::vector<Matrix> P;                // per node, M x d
  std::vector<Matrix> Q;                // per non-terminal node, M x (d*m)
  std::vector<Matrix> u;                // per non-terminal node, M x ell

  int num_nodes() const { return static_cast<int>(times.size()); }

  // Position of a fine-grid node in the stored set; -1 when absent.
  int find_fine_index(std::int64_t fidx) const {
    auto it = std::lower_bound(fine_index.begin(), fine_index.end(), fidx);
    if (it == fine_index.end() || *it != fidx) return -1;
    return static_cast<int>(it - fine_index.begin());
  }
};

using TrajectoryBatch = TrajectoryBatchT<double>;

namespace detail {

// Problem matrices pre-cast to the rollout scalar, with zero-block flags so
// vanished couplings cost nothing per step.
template <typename Scalar>
struct LqBatch {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  int d = 0, ell = 0, m = 0;
  Matrix A, At, B, Bt, R_x, R_xu, R_xuT, S, G;
  RowVec beta_row;
  std::vector<Matrix> C, Ct, D, Dt;
  std::vector<RowVec> Sigma_row;
  std::vector<bool> c_zero, d_zero;
  bool rxu_zero = true;

  static LqBatch from(const LqCoefficients& c) {
    LqBatch b;
    b.d = c.d;
    b.ell = c.ell;
    b.m = c.m;
    b.A = c.A.cast<Scalar>();
    b.At = c.A.transpose().cast<Scalar>();
    b.B = c.B.cast<Scalar>();
    b.Bt = c.B.transpose().cast<Scalar>();
    b.R_x = c.R_x.cast<Scalar>();
    b.R_xu = c.R_xu.cast<Scalar>();
    b.R_xuT = c.R_xu.transpose().cast<Scalar>();
    b.S = c.R_u_inv.cast<Scalar>();
    b.G = c.G.cast<Scalar>();
    b.beta_row = c.beta.transpose().cast<Scalar>();
    b.rxu_zero = c.R_xu.cwiseAbs().maxCoeff() == 0.0;
    for (int j = 0; j < c.m; ++j) {
      b.C.push_back(c.C[j].cast<Scalar>());
      b.Ct.push_back(c.C[j].transpose().cast<Scalar>());
      b.D.push_back(c.D[j].cast<Scalar>());
      b.Dt.push_back(c.D[j].transpose().cast<Scalar>());
      b.Sigma_row.push_back(c.Sigma[j].transpose().cast<Scalar>());
      b.c_zero.push_back(c.C[j].cwiseAbs().maxCoeff() == 0.0);
      b.d_zero.push_back(c.D[j].cwiseAbs().maxCoeff() == 0.0);
    }
    return b;
  }
};

// u = -(x R_xu' - p B - sum_j q_j D_j) R_u^{-1}, rows are samples.
template <typename Scalar>
typename LqBatch<Scalar>::Matrix batch_control(
    const LqBatch<Scalar>& b, const typename LqBatch<Scalar>::Matrix& X,
    const typename LqBatch<Scalar>::Matrix& P,
    const typename LqBatch<Scalar>::Matrix& Q) {
  using Matrix = typename LqBatch<Scalar>::Matrix;
  Matrix inner = -P * b.B;
  if (!b.rxu_zero) inner.noalias() += X * b.R_xuT;
  for (int j = 0; j < b.m; ++j)
    if (!b.d_zero[j])
      inner.noalias() -= Q.middleCols(static_cast<Eigen::Index>(j) * b.d, b.d) * b.D[j];
  return -inner * b.S;
}

}  // namespace detail

// One Euler transition of the coupled system, all samples at once.
// Optionally records the intermediate products the reverse pass reuses.
template <typename Scalar>
struct StepTape {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix X, P, Q, U;  // inputs of the step
};

// Full forward rollout of the scheme: X_0 = x0, P_0 = mu0(x0), per step
// Q_i = phi_i(X_i), u_i from the feedback map, Euler updates for X and P.
template <typename Scalar>
TrajectoryBatchT<Scalar> smp_rollout(
    const FbsdeCoefficients& fb, const Mlp<Scalar>& mu0,
    const std::vector<Mlp<Scalar>>& phis, const CoarseIncrementsT<Scalar>& ci,
    std::vector<ForwardCache<Scalar>>* phi_caches = nullptr,
    ForwardCache<Scalar>* mu0_cache = nullptr) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const LqCoefficients& c = fb.c;
  const int N = ci.N;
  const std::int64_t M = ci.M;
  require(static_cast<int>(phis.size()) == N, ErrorCategory::shape_mismatch,
          "need one Q-network per coarse step");
  require(static_cast<int>(ci.dW.size()) == N, ErrorCategory::shape_mismatch,
          "increment array does not cover every coarse step");
  require(ci.m == c.m, ErrorCategory::shape_mismatch,
          "increment coordinate count does not match the problem");
  require(ci.T == c.T, ErrorCategory::grid_mismatch,
          "increment horizon does not match the problem");
  require(mu0.input_dim() == c.d && mu0.output_dim() == c.d,
          ErrorCategory::shape_mismatch, "mu0 must map d to d");
  for (const auto& phi : phis)
    require(phi.input_dim() == c.d && phi.output_dim() == c.d * c.m,
            ErrorCategory::shape_mismatch, "phi must map d to d*m");

  const auto b = detail::LqBatch<Scalar>::from(c);
  const Scalar h = static_cast<Scalar>(ci.step());

  TrajectoryBatchT<Scalar> traj;
  traj.T = c.T;
  traj.brownian_seed = ci.seed;
  traj.n_fine = ci.n_fine;
  traj.M = M;
  traj.d = c.d;
  traj.m = c.m;
  traj.ell = c.ell;
  const std::int64_t stride = ci.n_fine / N;
  for (int i = 0; i <= N; ++i) {
    traj.times.push_back(static_cast<double>(i) * ci.step());
    traj.fine_index.push_back(static_cast<std::int64_t>(i) * stride);
  }
  traj.X.resize(N + 1);
  traj.P.resize(N + 1);
  traj.Q.resize(N);
  traj.u.resize(N);
  if (phi_caches) phi_caches->assign(N, ForwardCache<Scalar>{});

  Matrix x0_row = fb.c.x0.transpose().cast<Scalar>();
  Matrix p0_row = forward(mu0, x0_row, mu0_cache);
  traj.X[0] = x0_row.replicate(M, 1);
  traj.P[0] = p0_row.replicate(M, 1);

  for (int i = 0; i < N; ++i) {
    const Matrix& X = traj.X[i];
    const Matrix& P = traj.P[i];
    traj.Q[i] = forward(phis[i], X, phi_caches ? &(*phi_caches)[i] : nullptr);
    const Matrix& Q = traj.Q[i];
    traj.u[i] = detail::batch_control(b, X, P, Q);
    const Matrix& U = traj.u[i];

    Matrix bbar = X * b.At + U * b.Bt;
    bbar.rowwise() += b.beta_row;

    Matrix Xn = X + h * bbar;
    for (int j = 0; j < c.m; ++j) {
      const auto dwj = ci.dW[i].col(j);
      if (b.c_zero[j] && b.d_zero[j]) {
        Xn.noalias() += dwj * b.Sigma_row[j];
      } else {
        Matrix sbar_j = X * b.Ct[j];
        if (!b.d_zero[j]) sbar_j.noalias() += U * b.Dt[j];
        sbar_j.rowwise() += b.Sigma_row[j];
        Xn += dwj.asDiagonal() * sbar_j;
      }
    }

    Matrix F = P * b.A - X * b.R_x;
    for (int j = 0; j < c.m; ++j)
      if (!b.c_zero[j])
        F.noalias() += Q.middleCols(static_cast<Eigen::Index>(j) * c.d, c.d) * b.C[j];
    if (!b.rxu_zero) F.noalias() -= Scalar(0.5) * U * b.R_xu;

    Matrix Pn = P - h * F;
    for (int j = 0; j < c.m; ++j)
      Pn.noalias() +=
          ci.dW[i].col(j).asDiagonal() *
          traj.Q[i].middleCols(static_cast<Eigen::Index>(j) * c.d, c.d);

    if (!Xn.allFinite() || !Pn.allFinite())
      fail_at_step(ErrorCategory::diverged_training,
                   "non-finite state in forward rollout", i);
    traj.X[i + 1] = std::move(Xn);
    traj.P[i + 1] = std::move(Pn);
  }
  return traj;
}

// Mean-square terminal matching loss of a rollout:
// sum_k |g_x(X_N^k) + P_N^k|^2 / M.
template <typename Scalar>
double terminal_loss(const LqCoefficients& c,
                     const TrajectoryBatchT<Scalar>& traj) {
  const auto& XN = traj.X.back();
  const auto& PN = traj.P.back();
  const Eigen::MatrixXd R =
      -(XN.template cast<double>() * c.G) - PN.template cast<double>();
  return R.squaredNorm() / static_cast<double>(traj.M);
}

struct ValueEstimate {
  Eigen::VectorXd y0;  // per-sample value
  double mean = 0.0;
  double variance = 0.0;  // unbiased; 0 when M == 1
};

// Pathwise objective recovered backward from the terminal cost:
//   Y_N = g(X_N),  Y_i = Y_{i+1} + f(t_i, X_i, u_i) h - Z_i' dW_i,
// with Z_i = -sigma_bar(t_i, X_i, u_i)' P_i. Accumulates in double.
template <typename Scalar>
ValueEstimate backward_value_sum(const LqCoefficients& c,
                                 const TrajectoryBatchT<Scalar>& traj,
                                 const CoarseIncrementsT<Scalar>& ci) {
  const int N = ci.N;
  require(traj.num_nodes() == N + 1 &&
              static_cast<int>(traj.Q.size()) == N &&
              static_cast<int>(traj.u.size()) == N,
          ErrorCategory::contract_violation,
          "trajectory must cover every coarse node");
  require(traj.M == ci.M, ErrorCategory::shape_mismatch,
          "sample count mismatch between trajectory and increments");
  require(traj.brownian_seed == ci.seed && traj.n_fine == ci.n_fine,
          ErrorCategory::contract_violation,
          "trajectory and increments come from different Brownian batches");

  const double h = ci.step();
  const std::int64_t M = traj.M;
  const Eigen::MatrixXd XN = traj.X[N].template cast<double>();
  Eigen::VectorXd Y =
      0.5 * ((XN * c.G).cwiseProduct(XN)).rowwise().sum();

  for (int i = N - 1; i >= 0; --i) {
    const Eigen::MatrixXd X = traj.X[i].template cast<double>();
    const Eigen::MatrixXd P = traj.P[i].template cast<double>();
    const Eigen::MatrixXd U = traj.u[i].template cast<double>();
    const Eigen::MatrixXd dW = ci.dW[i].template cast<double>();

    Eigen::VectorXd f =
        0.5 * ((X * c.R_x).cwiseProduct(X)).rowwise().sum() +
        0.5 * ((U * c.R_xu).cwiseProduct(X)).rowwise().sum() +
        0.5 * ((U * c.R_u).cwiseProduct(U)).rowwise().sum();
    Y += h * f;

    for (int j = 0; j < c.m; ++j) {
      Eigen::MatrixXd sbar_j = X * c.C[j].transpose() + U * c.D[j].transpose();
      sbar_j.rowwise() += c.Sigma[j].transpose();
      const Eigen::VectorXd Zj = -(sbar_j.cwiseProduct(P)).rowwise().sum();
      Y -= dW.col(j).cwiseProduct(Zj);
    }
  }

  ValueEstimate est;
  est.y0 = Y;
  est.mean = Y.mean();
  if (M > 1) {
    est.variance =
        (Y.array() - est.mean).square().sum() / static_cast<double>(M - 1);
  }
  return est;
}

// Restriction of a stored trajectory to the nodes of an N-step coarse grid.
template <typename Scalar>
TrajectoryBatchT<Scalar> restrict_to_coarse(const TrajectoryBatchT<Scalar>& traj,
                                            int N) {
  require(N >= 1 && traj.n_fine % N == 0, ErrorCategory::grid_mismatch,
          "coarse step count must divide the fine grid");
  const std::int64_t stride = traj.n_fine / N;
  TrajectoryBatchT<Scalar> out;
  out.T = traj.T;
  out.brownian_seed = traj.brownian_seed;
  out.n_fine = traj.n_fine;
  out.M = traj.M;
  out.d = traj.d;
  out.m = traj.m;
  out.ell = traj.ell;
  for (int i = 0; i <= N; ++i) {
    const std::int64_t fidx = static_cast<std::int64_t>(i) * stride;
    const int pos = traj.find_fine_index(fidx);
    require(pos >= 0, ErrorCategory::grid_mismatch,
            "trajectory does not store all requested coarse nodes");
    out.times.push_back(traj.times[pos]);
    out.fine_index.push_back(fidx);
    out.X.push_back(traj.X[pos]);
    out.P.push_back(traj.P[pos]);
    if (i < N) {
      require(pos < static_cast<int>(traj.Q.size()),
              ErrorCategory::grid_mismatch,
              "trajectory does not store Q and u at a requested node");
      out.Q.push_back(traj.Q[pos]);
      out.u.push_back(traj.u[pos]);
    }
  }
  return out;
}

// Euler simulation of the optimally controlled state on the fine grid, with
// the adjoint pair and control evaluated from the value expansion along the
// way. record_nodes selects the stored fine-grid nodes (all when empty).
inline TrajectoryBatch reference_rollout(
    const LqCoefficients& c, const RiccatiSolution& sol,
    const BrownianBatch& bb,
    const std::vector<std::int64_t>& record_nodes = {}) {
  require(sol.n_steps == bb.N_fine, ErrorCategory::grid_mismatch,
          "value table grid must match the fine simulation grid");
  require(sol.T == bb.T && sol.T == c.T, ErrorCategory::grid_mismatch,
          "horizon mismatch");
  require(bb.m == c.m, ErrorCategory::shape_mismatch,
          "noise dimension mismatch");

  const std::int64_t Nf = bb.N_fine;
  std::vector<std::int64_t> rec = record_nodes;
  if (rec.empty()) {
    rec.resize(Nf + 1);
    for (std::int64_t i = 0; i <= Nf; ++i) rec[i] = i;
  } else {
    std::sort(rec.begin(), rec.end());
    rec.erase(std::unique(rec.begin(), rec.end()), rec.end());
    require(rec.front() >= 0 && rec.back() <= Nf, ErrorCategory::grid_mismatch,
            "record nodes outside the fine grid");
  }

  const double h = bb.fine_step();

  // Affine feedback u*(t_i, x) = -(Psi_i x + psi_i) per fine node.
  std::vector<Eigen::MatrixXd> Psi(Nf);
  std::vector<Eigen::VectorXd> psi(Nf);
  for (std::int64_t i = 0; i < Nf; ++i) {
    const Eigen::MatrixXd& Gamma = sol.Gamma[i];
    Eigen::MatrixXd R_hat = c.R_u;
    for (int j = 0; j < c.m; ++j)
      R_hat += c.D[j].transpose() * Gamma * c.D[j];
    Eigen::LLT<Eigen::MatrixXd> llt(R_hat);
    if (llt.info() != Eigen::Success)
      fail_at_time(ErrorCategory::singular_control,
                   "R_u + sum_j D_j' Gamma D_j is not positive definite",
                   static_cast<double>(i) * h);
    Eigen::MatrixXd S_hat = c.B.transpose() * Gamma + c.R_xu;
    for (int j = 0; j < c.m; ++j)
      S_hat += c.D[j].transpose() * Gamma * c.C[j];
    Eigen::VectorXd r_vec = c.B.transpose() * sol.gamma[i];
    for (int j = 0; j < c.m; ++j)
      r_vec += c.D[j].transpose() * Gamma * c.Sigma[j];
    Psi[i] = llt.solve(S_hat);
    psi[i] = llt.solve(r_vec);
  }

  TrajectoryBatch traj;
  traj.T = c.T;
  traj.brownian_seed = bb.seed;
  traj.n_fine = Nf;
  traj.M = bb.M;
  traj.d = c.d;
  traj.m = c.m;
  traj.ell = c.ell;
  for (std::int64_t fidx : rec) {
    traj.times.push_back(static_cast<double>(fidx) * h);
    traj.fine_index.push_back(fidx);
  }
  const int S = static_cast<int>(rec.size());
  for (int s = 0; s < S; ++s) {
    traj.X.emplace_back(bb.M, c.d);
    traj.P.emplace_back(bb.M, c.d);
    if (rec[s] < Nf) {
      traj.Q.emplace_back(bb.M, static_cast<Eigen::Index>(c.d) * c.m);
      traj.u.emplace_back(bb.M, c.ell);
    }
  }

  const auto lb = detail::LqBatch<double>::from(c);

  const std::int64_t chunk = std::min<std::int64_t>(bb.M, 256);
  Eigen::MatrixXd inc;  // (N_fine * m) x chunk, one sample per column
  Eigen::MatrixXd Xc, Uc, bbar, sbar, Xn;
  for (std::int64_t k0 = 0; k0 < bb.M; k0 += chunk) {
    const std::int64_t mc = std::min(chunk, bb.M - k0);
    inc.resize(Nf * c.m, mc);
    {
      PathIncrements row;
      for (std::int64_t k = 0; k < mc; ++k) {
        bb.fill_sample(k0 + k, row);
        inc.col(k) = Eigen::Map<const Eigen::VectorXd>(row.data(), row.size());
      }
    }

    Xc = c.x0.transpose().replicate(mc, 1);
    std::size_t rec_pos = 0;
    for (std::int64_t i = 0; i <= Nf; ++i) {
      const bool record = rec_pos < rec.size() && rec[rec_pos] == i;
      if (record) {
        traj.X[static_cast<int>(rec_pos)].middleRows(k0, mc) = Xc;
        Eigen::MatrixXd Pc = -(Xc * sol.Gamma[i]);
        Pc.rowwise() -= sol.gamma[i].transpose();
        traj.P[static_cast<int>(rec_pos)].middleRows(k0, mc) = Pc;
      }
      if (i == Nf) {
        if (record) ++rec_pos;
        break;
      }

      Uc.noalias() = -(Xc * Psi[i].transpose());
      Uc.rowwise() -= psi[i].transpose();

      if (record) {
        traj.u[static_cast<int>(rec_pos)].middleRows(k0, mc) = Uc;
        auto& Qs = traj.Q[static_cast<int>(rec_pos)];
        for (int j = 0; j < c.m; ++j) {
          sbar = Xc * lb.Ct[j] + Uc * lb.Dt[j];
          sbar.rowwise() += lb.Sigma_row[j];
          Qs.block(k0, static_cast<Eigen::Index>(j) * c.d, mc, c.d).noalias() =
              -(sbar * sol.Gamma[i]);
        }
        ++rec_pos;
      }

      bbar.noalias() = Xc * lb.At + Uc * lb.Bt;
      bbar.rowwise() += lb.beta_row;
      Xn = Xc + h * bbar;
      for (int j = 0; j < c.m; ++j) {
        const auto dwj = inc.row(i * c.m + j).transpose();
        if (lb.c_zero[j] && lb.d_zero[j]) {
          Xn.noalias() += dwj * lb.Sigma_row[j];
        } else {
          sbar = Xc * lb.Ct[j] + Uc * lb.Dt[j];
          sbar.rowwise() += lb.Sigma_row[j];
          Xn += dwj.asDiagonal() * sbar;
        }
      }
      Xc = std::move(Xn);
    }
  }
  return traj;
}

// Columnar text export: one file per field, rows (sample, step, component,
// value). Step indexes the stored node set.
template <typename Scalar>
void export_trajectory_csv(const TrajectoryBatchT<Scalar>& traj,
                           const std::string& prefix) {
  auto dump = [&](const std::string& name,
                  const std::vector<typename TrajectoryBatchT<Scalar>::Matrix>&
                      series) {
    std::ofstream os(prefix + name + ".csv");
    require(os.good(), ErrorCategory::io,
            "cannot open trajectory export file");
    os << "sample,step,component,value\n";
    char buf[64];
    for (std::size_t s = 0; s < series.size(); ++s)
      for (std::int64_t k = 0; k < traj.M; ++k)
        for (Eigen::Index comp = 0; comp < series[s].cols(); ++comp) {
          std::snprintf(buf, sizeof(buf), "%.9e",
                        static_cast<double>(series[s](k, comp)));
          os << k << ',' << s << ',' << comp << ',' << buf << '\n';
        }
    require(os.good(), ErrorCategory::io, "trajectory export write failed");
  };
  dump("X", traj.X);
  dump("P", traj.P);
  dump("Q", traj.Q);
  dump("u", traj.u);
}

}  // namespace smpbsde

#endif  // SMPBSDE_PATHS_HPP
