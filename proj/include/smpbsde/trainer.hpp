#ifndef SMPBSDE_TRAINER_HPP
#define SMPBSDE_TRAINER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/metrics.hpp"
#include "smpbsde/nn.hpp"
#include "smpbsde/paths.hpp"
#include "smpbsde/rng.hpp"

namespace smpbsde {

struct TrainingConfig {
  int N = 10;                    // coarse steps
  std::int64_t batch_size = 64;
  std::int64_t iterations = 0;   // optimizer steps
  double initial_rate = 1e-3;
  double decay_target = 1e-6;
  std::uint64_t seed = 1;
  std::uint64_t validation_seed = 0;  // 0 derives one from seed
  std::int64_t validation_every = 0;  // 0: only on demand
  std::vector<int> hidden = {100, 100};
};

// Default learning rate and iteration budget per coarse step count.
struct RateTableEntry {
  double eta0 = 1e-3;
  std::int64_t iterations = 1 << 13;
};

inline RateTableEntry default_rate_for(int N) {
  if (N <= 5) return {5e-4, 1 << 12};
  if (N <= 10) return {1e-3, 1 << 13};
  if (N <= 20) return {2e-3, 1 << 14};
  if (N <= 50) return {4e-3, 1 << 15};
  return {8e-3, 1 << 16};
}

struct ValidationSnapshot {
  std::int64_t step = 0;
  ErrorReport report;
};

template <typename Scalar>
struct TrainingStateT {
  Mlp<Scalar> mu0;
  AdamState<Scalar> mu0_adam;
  std::vector<Mlp<Scalar>> phi;
  std::vector<AdamState<Scalar>> phi_adam;
  std::int64_t step = 0;
  std::vector<double> loss_history;
  std::vector<ValidationSnapshot> snapshots;
};

using TrainingState = TrainingStateT<float>;

template <typename Scalar>
TrainingStateT<Scalar> make_training_state(const TrainingConfig& cfg,
                                           const LqCoefficients& c) {
  require(cfg.N >= 1, ErrorCategory::config, "need at least one coarse step");
  require(cfg.batch_size >= 1, ErrorCategory::config, "batch size");
  TrainingStateT<Scalar> st;
  std::vector<int> mu_sizes;
  mu_sizes.push_back(c.d);
  for (int w : cfg.hidden) mu_sizes.push_back(w);
  mu_sizes.push_back(c.d);
  std::vector<int> phi_sizes = mu_sizes;
  phi_sizes.back() = c.d * c.m;

  st.mu0 = init_mlp<Scalar>(mu_sizes, mix_seed(cfg.seed, 0));
  st.mu0_adam = init_adam(st.mu0);
  st.phi.reserve(cfg.N);
  st.phi_adam.reserve(cfg.N);
  for (int i = 0; i < cfg.N; ++i) {
    st.phi.push_back(
        init_mlp<Scalar>(phi_sizes, mix_seed(cfg.seed, 1 + static_cast<std::uint64_t>(i))));
    st.phi_adam.push_back(init_adam(st.phi[i]));
  }
  return st;
}

template <typename Scalar>
struct RolloutGradients {
  double loss = 0.0;
  GradientSet<Scalar> mu0;
  std::vector<GradientSet<Scalar>> phi;
};

// Terminal matching loss with exact reverse-mode gradients through the whole
// Euler rollout, including the feedback map and every network evaluation.
template <typename Scalar>
RolloutGradients<Scalar> loss_and_gradients(
    const FbsdeCoefficients& fb, const Mlp<Scalar>& mu0,
    const std::vector<Mlp<Scalar>>& phis, const CoarseIncrementsT<Scalar>& ci,
    TrajectoryBatchT<Scalar>* traj_out = nullptr) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const LqCoefficients& c = fb.c;
  const int N = ci.N;
  const std::int64_t M = ci.M;

  std::vector<ForwardCache<Scalar>> phi_caches;
  ForwardCache<Scalar> mu0_cache;
  TrajectoryBatchT<Scalar> traj =
      smp_rollout(fb, mu0, phis, ci, &phi_caches, &mu0_cache);

  const auto b = detail::LqBatch<Scalar>::from(c);
  const Scalar h = static_cast<Scalar>(ci.step());
  const Scalar two_over_m = Scalar(2) / static_cast<Scalar>(M);

  RolloutGradients<Scalar> out;
  out.phi.resize(N);

  // residual r = -g_x(X_N) - P_N per sample row
  Matrix R = -(traj.X[N] * b.G) - traj.P[N];
  out.loss = static_cast<double>(R.template cast<double>().squaredNorm()) /
             static_cast<double>(M);

  Matrix GX = -two_over_m * (R * b.G);
  Matrix GP = -two_over_m * R;

  for (int i = N - 1; i >= 0; --i) {
    const auto& dW = ci.dW[i];

    // cotangents of the Euler update pieces
    Matrix GF = -h * GP;
    Matrix GXi = GX;
    GXi.noalias() += h * (GX * b.A);
    GXi.noalias() -= GF * b.R_x;

    Matrix GPi = GP;
    GPi.noalias() += GF * b.At;

    Matrix GU(M, c.ell);
    GU.noalias() = h * (GX * b.B);
    if (!b.rxu_zero) GU.noalias() -= Scalar(0.5) * (GF * b.R_xuT);

    Matrix GQ(M, static_cast<Eigen::Index>(c.d) * c.m);
    for (int j = 0; j < c.m; ++j) {
      auto gq_j = GQ.middleCols(static_cast<Eigen::Index>(j) * c.d, c.d);
      gq_j = dW.col(j).asDiagonal() * GP;
      if (!b.c_zero[j]) {
        gq_j.noalias() += GF * b.Ct[j];
        Matrix gsbar_j = dW.col(j).asDiagonal() * GX;
        GXi.noalias() += gsbar_j * b.C[j];
        if (!b.d_zero[j]) GU.noalias() += gsbar_j * b.D[j];
      } else if (!b.d_zero[j]) {
        GU.noalias() += (dW.col(j).asDiagonal() * GX) * b.D[j];
      }
    }

    // through the feedback map u = -(x R_xu' - p B - sum_j q_j D_j) S
    Matrix GT0 = -(GU * b.S);
    if (!b.rxu_zero) GXi.noalias() += GT0 * b.R_xu;
    GPi.noalias() -= GT0 * b.Bt;
    for (int j = 0; j < c.m; ++j)
      if (!b.d_zero[j])
        GQ.middleCols(static_cast<Eigen::Index>(j) * c.d, c.d).noalias() -=
            GT0 * b.Dt[j];

    auto [phi_grads, gx_from_phi] = backward(phis[i], phi_caches[i], GQ);
    out.phi[i] = std::move(phi_grads);
    GXi += gx_from_phi;

    GX = std::move(GXi);
    GP = std::move(GPi);
  }

  // P_0 is one forward evaluation broadcast across samples.
  Matrix gp0 = GP.colwise().sum();
  auto [mu0_grads, gx0] = backward(mu0, mu0_cache, gp0);
  out.mu0 = std::move(mu0_grads);
  (void)gx0;

  if (traj_out) *traj_out = std::move(traj);
  return out;
}

template <typename Scalar>
double train_step(TrainingStateT<Scalar>& st, const TrainingConfig& cfg,
                  const FbsdeCoefficients& fb) {
  const LqCoefficients& c = fb.c;
  const BrownianBatch bb =
      sample_brownian(mix_seed(cfg.seed, 0x6d696e69u, static_cast<std::uint64_t>(st.step)),
                      cfg.batch_size, cfg.N, c.m, c.T);
  const auto ci = coarsen<Scalar>(bb, cfg.N);

  auto grads = loss_and_gradients(fb, st.mu0, st.phi, ci);

  const LrSchedule sched{cfg.initial_rate, cfg.decay_target,
                         std::max<std::int64_t>(cfg.iterations, 1)};
  const double rate = schedule_rate(sched, st.step);
  adam_step(st.mu0, st.mu0_adam, grads.mu0, rate);
  for (int i = 0; i < cfg.N; ++i)
    adam_step(st.phi[i], st.phi_adam[i], grads.phi[i], rate);

  st.step += 1;
  st.loss_history.push_back(grads.loss);
  return grads.loss;
}

// Held-out coupled validation data, shared across snapshots of one run.
struct ValidationContext {
  CoarseIncrements ci;        // coarse view of the validation batch
  TrajectoryBatch reference;  // fine-grid reference at the coarse nodes
  const RiccatiSolution* sol = nullptr;
};

template <typename Scalar>
ErrorReport evaluate_validation(const TrainingStateT<Scalar>& st,
                                const FbsdeCoefficients& fb,
                                const ValidationContext& val) {
  const auto ci = cast_increments<Scalar>(val.ci);
  const auto traj = smp_rollout(fb, st.mu0, st.phi, ci);
  return pathwise_errors(traj, val.reference, ci, fb.c, *val.sol);
}

// Full optimization loop; validation snapshots are appended to the state.
// Divergence propagates as an error carrying the failing step, with the
// state's parameters and history retained up to that step.
template <typename Scalar>
void train(TrainingStateT<Scalar>& st, const TrainingConfig& cfg,
           const FbsdeCoefficients& fb,
           const ValidationContext* val = nullptr) {
  for (std::int64_t k = st.step; k < cfg.iterations; ++k) {
    train_step(st, cfg, fb);
    if (val && cfg.validation_every > 0 &&
        (st.step % cfg.validation_every == 0 || st.step == cfg.iterations)) {
      st.snapshots.push_back({st.step, evaluate_validation(st, fb, *val)});
    }
  }
  if (val && (st.snapshots.empty() || st.snapshots.back().step != st.step)) {
    st.snapshots.push_back({st.step, evaluate_validation(st, fb, *val)});
  }
}

namespace detail {

constexpr std::uint32_t kCheckpointMagic = 0x534d5043u;
constexpr std::uint32_t kCheckpointVersion = 1u;

template <typename Scalar>
void write_net(std::ostream& os, const Mlp<Scalar>& net) {
  const std::int32_t L = static_cast<std::int32_t>(net.layer_sizes.size());
  write_pod(os, L);
  for (int s : net.layer_sizes) write_pod(os, static_cast<std::int32_t>(s));
  for (const auto& W : net.weights)
    os.write(reinterpret_cast<const char*>(W.data()),
             static_cast<std::streamsize>(sizeof(Scalar) * W.size()));
  for (const auto& bvec : net.biases)
    os.write(reinterpret_cast<const char*>(bvec.data()),
             static_cast<std::streamsize>(sizeof(Scalar) * bvec.size()));
}

template <typename Scalar>
Mlp<Scalar> read_net(std::istream& is) {
  std::int32_t L = 0;
  read_pod(is, L);
  require(L >= 2 && L < 64, ErrorCategory::io, "corrupt checkpoint net header");
  std::vector<int> sizes(L);
  for (auto& s : sizes) {
    std::int32_t v = 0;
    read_pod(is, v);
    require(v >= 1 && v < 1 << 20, ErrorCategory::io,
            "corrupt checkpoint layer size");
    s = v;
  }
  validate_architecture(sizes);
  Mlp<Scalar> net;
  net.layer_sizes = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    net.weights.emplace_back(sizes[l + 1], sizes[l]);
    net.biases.emplace_back(sizes[l + 1]);
  }
  for (auto& W : net.weights)
    is.read(reinterpret_cast<char*>(W.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * W.size()));
  for (auto& bvec : net.biases)
    is.read(reinterpret_cast<char*>(bvec.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * bvec.size()));
  return net;
}

template <typename Scalar>
void write_adam(std::ostream& os, const AdamState<Scalar>& st) {
  write_pod(os, st.step);
  auto dump = [&os](const auto& arrs) {
    for (const auto& a : arrs)
      os.write(reinterpret_cast<const char*>(a.data()),
               static_cast<std::streamsize>(sizeof(Scalar) * a.size()));
  };
  dump(st.m_weights);
  dump(st.v_weights);
  dump(st.m_biases);
  dump(st.v_biases);
}

template <typename Scalar>
AdamState<Scalar> read_adam(std::istream& is, const Mlp<Scalar>& net) {
  AdamState<Scalar> st = init_adam(net);
  read_pod(is, st.step);
  auto slurp = [&is](auto& arrs) {
    for (auto& a : arrs)
      is.read(reinterpret_cast<char*>(a.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * a.size()));
  };
  slurp(st.m_weights);
  slurp(st.v_weights);
  slurp(st.m_biases);
  slurp(st.v_biases);
  return st;
}

}  // namespace detail

// Versioned binary checkpoint; round-trips bit exactly.
template <typename Scalar>
void save_checkpoint(const TrainingStateT<Scalar>& st, const std::string& path,
                     std::uint8_t method_tag = 0) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorCategory::io, "cannot open '" + path + "' for write");
  detail::write_pod(os, detail::kCheckpointMagic);
  detail::write_pod(os, detail::kCheckpointVersion);
  detail::write_pod(os, method_tag);
  detail::write_pod(os, static_cast<std::uint8_t>(sizeof(Scalar)));
  detail::write_pod(os, static_cast<std::int32_t>(st.phi.size()));
  detail::write_pod(os, st.step);
  detail::write_net(os, st.mu0);
  detail::write_adam(os, st.mu0_adam);
  for (std::size_t i = 0; i < st.phi.size(); ++i) {
    detail::write_net(os, st.phi[i]);
    detail::write_adam(os, st.phi_adam[i]);
  }
  detail::write_pod(os, static_cast<std::int64_t>(st.loss_history.size()));
  os.write(reinterpret_cast<const char*>(st.loss_history.data()),
           static_cast<std::streamsize>(sizeof(double) *
                                        st.loss_history.size()));
  require(os.good(), ErrorCategory::io, "checkpoint write failed");
}

template <typename Scalar>
TrainingStateT<Scalar> load_checkpoint(const std::string& path,
                                       std::uint8_t expected_tag = 0) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCategory::io, "cannot open '" + path + "'");
  std::uint32_t magic = 0, version = 0;
  detail::read_pod(is, magic);
  detail::read_pod(is, version);
  require(magic == detail::kCheckpointMagic, ErrorCategory::io,
          "'" + path + "' is not a checkpoint");
  require(version == detail::kCheckpointVersion, ErrorCategory::io,
          "checkpoint version mismatch in '" + path + "'");
  std::uint8_t tag = 0, scalar_size = 0;
  detail::read_pod(is, tag);
  detail::read_pod(is, scalar_size);
  require(tag == expected_tag, ErrorCategory::io,
          "checkpoint method tag mismatch in '" + path + "'");
  require(scalar_size == sizeof(Scalar), ErrorCategory::io,
          "checkpoint precision mismatch in '" + path + "'");
  std::int32_t n_phi = 0;
  detail::read_pod(is, n_phi);
  require(n_phi >= 0 && n_phi < 1 << 20, ErrorCategory::io,
          "corrupt checkpoint header");
  TrainingStateT<Scalar> st;
  detail::read_pod(is, st.step);
  st.mu0 = detail::read_net<Scalar>(is);
  st.mu0_adam = detail::read_adam(is, st.mu0);
  for (int i = 0; i < n_phi; ++i) {
    st.phi.push_back(detail::read_net<Scalar>(is));
    st.phi_adam.push_back(detail::read_adam(is, st.phi.back()));
  }
  std::int64_t hist = 0;
  detail::read_pod(is, hist);
  require(hist >= 0, ErrorCategory::io, "corrupt checkpoint history");
  st.loss_history.resize(hist);
  is.read(reinterpret_cast<char*>(st.loss_history.data()),
          static_cast<std::streamsize>(sizeof(double) * hist));
  require(is.good(), ErrorCategory::io, "truncated checkpoint '" + path + "'");
  return st;
}

}  // namespace smpbsde

#endif  // SMPBSDE_TRAINER_HPP
