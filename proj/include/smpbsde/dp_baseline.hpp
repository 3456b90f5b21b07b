#ifndef SMPBSDE_DP_BASELINE_HPP
#define SMPBSDE_DP_BASELINE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/nn.hpp"
#include "smpbsde/paths.hpp"
#include "smpbsde/rng.hpp"
#include "smpbsde/trainer.hpp"

namespace smpbsde {

// Dynamic-programming baseline: networks predict z_i = sigma_bar' V_x(t_i, x),
// the pathwise value is recovered from the terminal cost, and the objective is
// mean(Y_0) + lambda * var(Y_0). Only supported for problems with constant
// invertible square diffusion and uncontrolled noise.
inline void check_dp_supported(const LqCoefficients& c) {
  require(c.constant_diffusion() && c.drift_control(),
          ErrorCategory::unsupported_problem,
          "baseline needs state- and control-independent diffusion");
  require(c.d == c.m, ErrorCategory::unsupported_problem,
          "baseline needs as many noise channels as states");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(c.sigma_constant());
  require(lu.isInvertible(), ErrorCategory::unsupported_problem,
          "baseline needs an invertible diffusion matrix");
}

struct DpConfig {
  TrainingConfig train;
  double lambda = 1.0;
};

struct DpSnapshot {
  std::int64_t step = 0;
  double robust_loss = 0.0;
  double mean_y0 = 0.0;
  double max_x_err = 0.0;
  double avg_u_err = 0.0;
};

template <typename Scalar>
struct DpStateT {
  std::vector<Mlp<Scalar>> nets;  // one per coarse step, d -> m
  std::vector<AdamState<Scalar>> adams;
  std::int64_t step = 0;
  std::vector<double> loss_history;
  std::vector<DpSnapshot> snapshots;
};

using DpState = DpStateT<float>;

template <typename Scalar>
DpStateT<Scalar> make_dp_state(const DpConfig& cfg, const LqCoefficients& c) {
  check_dp_supported(c);
  require(cfg.train.N >= 1, ErrorCategory::config, "need at least one step");
  require(cfg.lambda >= 0.0, ErrorCategory::config,
          "variance weight must be nonnegative");
  std::vector<int> sizes;
  sizes.push_back(c.d);
  for (int w : cfg.train.hidden) sizes.push_back(w);
  sizes.push_back(c.m);
  DpStateT<Scalar> st;
  st.nets.reserve(cfg.train.N);
  st.adams.reserve(cfg.train.N);
  for (int i = 0; i < cfg.train.N; ++i) {
    st.nets.push_back(init_mlp<Scalar>(
        sizes, mix_seed(cfg.train.seed, 0x647001u + static_cast<std::uint64_t>(i))));
    st.adams.push_back(init_adam(st.nets[i]));
  }
  return st;
}

template <typename Scalar>
struct DpTrajectoryT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Matrix> X;  // N + 1 nodes
  std::vector<Matrix> Z;  // N nodes
  std::vector<Matrix> u;  // N nodes
};

namespace detail {

template <typename Scalar>
struct DpBatch {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  LqBatch<Scalar> lq;
  Matrix sigma_t;  // sigma_bar', maps noise rows to state increments
  Matrix EtB;      // (sigma_bar')^{-1}' B, the z -> u factor before -S
  Matrix BtE;      // its transpose, for the z cotangent
  static DpBatch from(const LqCoefficients& c) {
    DpBatch b;
    b.lq = LqBatch<Scalar>::from(c);
    const Eigen::MatrixXd sigma = c.sigma_constant();
    const Eigen::MatrixXd E = sigma.transpose().fullPivLu().inverse();
    b.sigma_t = sigma.transpose().cast<Scalar>();
    b.EtB = (E.transpose() * c.B).cast<Scalar>();
    b.BtE = (c.B.transpose() * E).cast<Scalar>();
    return b;
  }
};

}  // namespace detail

template <typename Scalar>
DpTrajectoryT<Scalar> dp_rollout(
    const LqCoefficients& c, const std::vector<Mlp<Scalar>>& nets,
    const CoarseIncrementsT<Scalar>& ci,
    std::vector<ForwardCache<Scalar>>* caches = nullptr) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_dp_supported(c);
  require(static_cast<int>(nets.size()) == ci.N, ErrorCategory::shape_mismatch,
          "need one network per coarse step");
  require(ci.m == c.m && ci.T == c.T, ErrorCategory::grid_mismatch,
          "increments do not match the problem");
  for (const auto& net : nets)
    require(net.input_dim() == c.d && net.output_dim() == c.m,
            ErrorCategory::shape_mismatch, "baseline network shape");

  const auto b = detail::DpBatch<Scalar>::from(c);
  const Scalar h = static_cast<Scalar>(ci.step());
  const std::int64_t M = ci.M;
  const int N = ci.N;

  DpTrajectoryT<Scalar> traj;
  traj.X.reserve(N + 1);
  traj.Z.reserve(N);
  traj.u.reserve(N);
  if (caches) caches->resize(N);

  Matrix X = c.x0.cast<Scalar>().transpose().replicate(M, 1);
  for (int i = 0; i < N; ++i) {
    traj.X.push_back(X);
    Matrix Z = forward(nets[i], X, caches ? &(*caches)[i] : nullptr);
    Matrix T0 = Z * b.EtB;  // rows (V_x)' B
    if (!b.lq.rxu_zero) T0.noalias() += X * b.lq.R_xuT;
    Matrix U = -(T0 * b.lq.S);
    Matrix Xn = X;
    Xn.noalias() += h * (X * b.lq.At);
    Xn.noalias() += h * (U * b.lq.Bt);
    Xn.rowwise() += h * b.lq.beta_row;
    Xn.noalias() += ci.dW[i] * b.sigma_t;
    if (!(Xn.allFinite() && U.allFinite()))
      fail_at_step(ErrorCategory::diverged_training, "baseline state blew up",
                   i);
    traj.Z.push_back(std::move(Z));
    traj.u.push_back(std::move(U));
    X = std::move(Xn);
  }
  traj.X.push_back(std::move(X));
  return traj;
}

struct RobustLoss {
  double loss = 0.0;
  ValueEstimate estimate;
};

namespace detail {

// Per-sample pathwise value in double:
//   Y^k = g(X_N^k) + sum_i f(t_i, X_i^k, u_i^k) h - sum_i (z_i^k)' dW_i^k.
template <typename Scalar>
Eigen::VectorXd dp_pathwise_value(const LqCoefficients& c,
                                  const DpTrajectoryT<Scalar>& traj,
                                  const CoarseIncrementsT<Scalar>& ci) {
  const int N = ci.N;
  require(static_cast<int>(traj.Z.size()) == N &&
              static_cast<int>(traj.X.size()) == N + 1 &&
              static_cast<int>(ci.dW.size()) == N,
          ErrorCategory::shape_mismatch, "trajectory does not match the grid");
  const double h = ci.step();

  const Eigen::MatrixXd XN = traj.X[N].template cast<double>();
  Eigen::VectorXd Y = 0.5 * ((XN * c.G).array() * XN.array()).rowwise().sum();
  for (int i = 0; i < N; ++i) {
    const Eigen::MatrixXd X = traj.X[i].template cast<double>();
    const Eigen::MatrixXd U = traj.u[i].template cast<double>();
    const Eigen::MatrixXd Z = traj.Z[i].template cast<double>();
    const Eigen::MatrixXd dW = ci.dW[i].template cast<double>();
    Eigen::ArrayXd f = 0.5 * ((X * c.R_x).array() * X.array()).rowwise().sum();
    f += 0.5 * ((U * c.R_u).array() * U.array()).rowwise().sum();
    if (!c.R_xu.isZero(0.0))
      f += 0.5 * ((X * c.R_xu.transpose()).array() * U.array()).rowwise().sum();
    Y += h * f.matrix();
    Y -= (Z.array() * dW.array()).rowwise().sum().matrix();
  }
  return Y;
}

}  // namespace detail

// mean(Y_0) + lambda * var(Y_0), variance unbiased and zero when M == 1.
template <typename Scalar>
RobustLoss robust_loss(const LqCoefficients& c,
                       const DpTrajectoryT<Scalar>& traj,
                       const CoarseIncrementsT<Scalar>& ci, double lambda) {
  require(lambda >= 0.0, ErrorCategory::config,
          "variance weight must be nonnegative");
  RobustLoss out;
  Eigen::VectorXd Y = detail::dp_pathwise_value(c, traj, ci);
  const auto M = Y.size();
  out.estimate.y0 = std::move(Y);
  out.estimate.mean = out.estimate.y0.mean();
  out.estimate.variance =
      M > 1 ? (out.estimate.y0.array() - out.estimate.mean).square().sum() /
                  static_cast<double>(M - 1)
            : 0.0;
  out.loss = out.estimate.mean + lambda * out.estimate.variance;
  return out;
}

template <typename Scalar>
struct DpGradients {
  RobustLoss score;
  std::vector<GradientSet<Scalar>> nets;
};

// Exact reverse-mode gradients of the robust objective through the rollout,
// the pathwise value, and the feedback map.
template <typename Scalar>
DpGradients<Scalar> dp_loss_and_gradients(const LqCoefficients& c,
                                          const std::vector<Mlp<Scalar>>& nets,
                                          const CoarseIncrementsT<Scalar>& ci,
                                          double lambda) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<ForwardCache<Scalar>> caches;
  const auto traj = dp_rollout(c, nets, ci, &caches);

  DpGradients<Scalar> out;
  out.score = robust_loss(c, traj, ci, lambda);
  out.nets.resize(ci.N);

  const auto b = detail::DpBatch<Scalar>::from(c);
  const Matrix R_u = c.R_u.cast<Scalar>();
  const Scalar h = static_cast<Scalar>(ci.step());
  const std::int64_t M = ci.M;
  const int N = ci.N;

  // dLoss/dY^k = 1/M + 2 lambda (Y^k - mean) / (M - 1)
  Eigen::VectorXd wd =
      Eigen::VectorXd::Constant(M, 1.0 / static_cast<double>(M));
  if (M > 1 && lambda > 0.0)
    wd += (2.0 * lambda / static_cast<double>(M - 1)) *
          (out.score.estimate.y0.array() - out.score.estimate.mean).matrix();
  using VectorS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const VectorS w = wd.cast<Scalar>();

  // terminal: Y gets g(X_N) = 0.5 X_N' G X_N
  Matrix GX = w.asDiagonal() * (traj.X[N] * b.lq.G);

  for (int i = N - 1; i >= 0; --i) {
    const Matrix& X = traj.X[i];
    const Matrix& U = traj.u[i];
    const auto& dW = ci.dW[i];

    // running cost channel of Y
    Matrix GU = h * (w.asDiagonal() * (U * R_u));
    Matrix GXi = GX;
    GXi.noalias() += h * (GX * b.lq.A);
    GXi.noalias() += h * (w.asDiagonal() * (X * b.lq.R_x));
    if (!b.lq.rxu_zero) {
      GU.noalias() +=
          (Scalar(0.5) * h) * (w.asDiagonal() * (X * b.lq.R_xuT));
      GXi.noalias() +=
          (Scalar(0.5) * h) * (w.asDiagonal() * (U * b.lq.R_xu));
    }

    // dynamics channel of U, then through the feedback map
    GU.noalias() += h * (GX * b.lq.B);
    Matrix GT0 = -(GU * b.lq.S);
    if (!b.lq.rxu_zero) GXi.noalias() += GT0 * b.lq.R_xu;

    // z channels: the -z' dW term of Y and the control map
    Matrix GZ = -(w.asDiagonal() * dW);
    GZ.noalias() += GT0 * b.BtE;

    auto [net_grads, gx_from_net] = backward(nets[i], caches[i], GZ);
    out.nets[i] = std::move(net_grads);
    GXi += gx_from_net;
    GX = std::move(GXi);
  }
  return out;
}

template <typename Scalar>
double dp_train_step(DpStateT<Scalar>& st, const DpConfig& cfg,
                     const LqCoefficients& c) {
  const BrownianBatch bb = sample_brownian(
      mix_seed(cfg.train.seed, 0x64706d62u, static_cast<std::uint64_t>(st.step)),
      cfg.train.batch_size, cfg.train.N, c.m, c.T);
  const auto ci = coarsen<Scalar>(bb, cfg.train.N);
  auto grads = dp_loss_and_gradients(c, st.nets, ci, cfg.lambda);

  const LrSchedule sched{cfg.train.initial_rate, cfg.train.decay_target,
                         std::max<std::int64_t>(cfg.train.iterations, 1)};
  const double rate = schedule_rate(sched, st.step);
  for (int i = 0; i < cfg.train.N; ++i)
    adam_step(st.nets[i], st.adams[i], grads.nets[i], rate);

  st.step += 1;
  st.loss_history.push_back(grads.score.loss);
  return grads.score.loss;
}

// Validation scores against the coupled fine-grid reference: the robust
// objective, the value estimate, and strong state/control errors.
template <typename Scalar>
DpSnapshot evaluate_dp(const DpStateT<Scalar>& st, const DpConfig& cfg,
                       const LqCoefficients& c, const ValidationContext& val) {
  const auto ci = cast_increments<Scalar>(val.ci);
  const auto traj = dp_rollout(c, st.nets, ci);
  DpSnapshot snap;
  snap.step = st.step;
  const auto score = robust_loss(c, traj, ci, cfg.lambda);
  snap.robust_loss = score.loss;
  snap.mean_y0 = score.estimate.mean;

  const int N = ci.N;
  require(val.reference.n_fine % N == 0 && val.reference.M == ci.M &&
              val.reference.brownian_seed == ci.seed,
          ErrorCategory::contract_violation,
          "validation batches are not coupled");
  const std::int64_t per_fine = val.reference.n_fine / N;
  const double inv_m = 1.0 / static_cast<double>(ci.M);
  double max_x = 0.0, sum_u = 0.0;
  for (int i = 0; i <= N; ++i) {
    const int pos = val.reference.find_fine_index(per_fine * i);
    require(pos >= 0, ErrorCategory::grid_mismatch,
            "reference does not store all coarse nodes");
    const double x_err =
        inv_m * (traj.X[i].template cast<double>() - val.reference.X[pos])
                    .squaredNorm();
    max_x = std::max(max_x, x_err);
    if (i < N)
      sum_u +=
          inv_m * (traj.u[i].template cast<double>() - val.reference.u[pos])
                      .squaredNorm();
  }
  snap.max_x_err = max_x;
  snap.avg_u_err = sum_u / static_cast<double>(N);
  return snap;
}

template <typename Scalar>
void dp_train(DpStateT<Scalar>& st, const DpConfig& cfg,
              const LqCoefficients& c, const ValidationContext* val = nullptr) {
  if (val && st.step == 0) st.snapshots.push_back(evaluate_dp(st, cfg, c, *val));
  for (std::int64_t k = st.step; k < cfg.train.iterations; ++k) {
    dp_train_step(st, cfg, c);
    if (val && cfg.train.validation_every > 0 &&
        st.step % cfg.train.validation_every == 0)
      st.snapshots.push_back(evaluate_dp(st, cfg, c, *val));
  }
  if (val && (st.snapshots.empty() || st.snapshots.back().step != st.step))
    st.snapshots.push_back(evaluate_dp(st, cfg, c, *val));
}

}  // namespace smpbsde

#endif  // SMPBSDE_DP_BASELINE_HPP
