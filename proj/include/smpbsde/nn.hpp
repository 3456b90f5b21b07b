#ifndef SMPBSDE_NN_HPP
#define SMPBSDE_NN_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smpbsde/errors.hpp"
#include "smpbsde/rng.hpp"

namespace smpbsde {

// Fully connected network: tanh hidden layers, affine output.
// Batches are row major: one sample per row.
template <typename Scalar>
struct Mlp {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<int> layer_sizes;  // [in, hidden..., out]
  std::vector<Matrix> weights;   // layer l: layer_sizes[l+1] x layer_sizes[l]
  std::vector<Vector> biases;    // layer l: layer_sizes[l+1]

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  std::int64_t num_parameters() const {
    std::int64_t n = 0;
    for (int l = 0; l < num_layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
};

template <typename Scalar>
struct GradientSet {
  std::vector<typename Mlp<Scalar>::Matrix> weights;
  std::vector<typename Mlp<Scalar>::Vector> biases;
};

template <typename Scalar>
struct AdamState {
  std::vector<typename Mlp<Scalar>::Matrix> m_weights, v_weights;
  std::vector<typename Mlp<Scalar>::Vector> m_biases, v_biases;
  std::int64_t step = 0;
};

// Activations kept for the backward pass; activations[0] is the input batch,
// activations[l+1] the post-activation output of layer l.
template <typename Scalar>
struct ForwardCache {
  std::vector<typename Mlp<Scalar>::Matrix> activations;
};

inline void validate_architecture(const std::vector<int>& layer_sizes) {
  require(layer_sizes.size() >= 2, ErrorCategory::invalid_architecture,
          "need at least input and output layer sizes");
  for (int s : layer_sizes)
    require(s >= 1, ErrorCategory::invalid_architecture,
            "layer sizes must be positive");
}

// Glorot-uniform weights, zero biases. Deterministic in the seed.
template <typename Scalar>
Mlp<Scalar> init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  validate_architecture(layer_sizes);
  using V = typename Mlp<Scalar>::Vector;
  Mlp<Scalar> net;
  net.layer_sizes = layer_sizes;
  Rng rng(seed);
  const int L = static_cast<int>(layer_sizes.size()) - 1;
  net.weights.resize(L);
  net.biases.resize(L);
  for (int l = 0; l < L; ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    net.weights[l].resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c)
        net.weights[l](r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    net.biases[l] = V::Zero(fan_out);
  }
  return net;
}

template <typename Scalar>
GradientSet<Scalar> zero_gradients(const Mlp<Scalar>& net) {
  using M = typename Mlp<Scalar>::Matrix;
  using V = typename Mlp<Scalar>::Vector;
  GradientSet<Scalar> g;
  g.weights.reserve(net.weights.size());
  g.biases.reserve(net.biases.size());
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.push_back(M::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.push_back(V::Zero(net.biases[l].size()));
  }
  return g;
}

template <typename Scalar>
AdamState<Scalar> init_adam(const Mlp<Scalar>& net) {
  using M = typename Mlp<Scalar>::Matrix;
  using V = typename Mlp<Scalar>::Vector;
  AdamState<Scalar> s;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    s.m_weights.push_back(M::Zero(net.weights[l].rows(), net.weights[l].cols()));
    s.v_weights.push_back(M::Zero(net.weights[l].rows(), net.weights[l].cols()));
    s.m_biases.push_back(V::Zero(net.biases[l].size()));
    s.v_biases.push_back(V::Zero(net.biases[l].size()));
  }
  return s;
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix forward(
    const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& input,
    ForwardCache<Scalar>* cache = nullptr) {
  require(input.cols() == net.input_dim(), ErrorCategory::shape_mismatch,
          "input width does not match network input dimension");
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(net.num_layers() + 1);
    cache->activations.push_back(input);
  }
  typename Mlp<Scalar>::Matrix a = input;
  const int L = net.num_layers();
  for (int l = 0; l < L; ++l) {
    typename Mlp<Scalar>::Matrix z =
        (a * net.weights[l].transpose()).rowwise() + net.biases[l].transpose();
    if (l < L - 1) z = z.array().tanh();
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

template <typename Scalar>
void check_cache(const Mlp<Scalar>& net, const ForwardCache<Scalar>& cache,
                 const typename Mlp<Scalar>::Matrix& output_cotangent) {
  require(static_cast<int>(cache.activations.size()) == net.num_layers() + 1,
          ErrorCategory::contract_violation,
          "forward cache does not match network depth");
  for (int l = 0; l <= net.num_layers(); ++l)
    require(cache.activations[l].cols() == net.layer_sizes[l],
            ErrorCategory::contract_violation,
            "forward cache layer width does not match network");
  require(output_cotangent.rows() == cache.activations[0].rows() &&
              output_cotangent.cols() == net.output_dim(),
          ErrorCategory::contract_violation,
          "output cotangent shape does not match cached forward pass");
}

// Reverse-mode pass. Returns parameter gradients and the input cotangent.
template <typename Scalar>
std::pair<GradientSet<Scalar>, typename Mlp<Scalar>::Matrix> backward(
    const Mlp<Scalar>& net, const ForwardCache<Scalar>& cache,
    const typename Mlp<Scalar>::Matrix& output_cotangent) {
  check_cache(net, cache, output_cotangent);
  GradientSet<Scalar> grads;
  grads.weights.resize(net.num_layers());
  grads.biases.resize(net.num_layers());
  typename Mlp<Scalar>::Matrix g = output_cotangent;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    typename Mlp<Scalar>::Matrix dz;
    if (l == net.num_layers() - 1) {
      dz = std::move(g);
    } else {
      dz = g.array() * (Scalar(1) - cache.activations[l + 1].array().square());
    }
    grads.weights[l].noalias() = dz.transpose() * cache.activations[l];
    grads.biases[l] = dz.colwise().sum().transpose();
    g.noalias() = dz * net.weights[l];
  }
  return {std::move(grads), std::move(g)};
}

struct LrSchedule {
  double initial_rate = 1e-3;  // > 0
  double decay_target = 1e-6;  // > 0, rate reached at total_steps
  std::int64_t total_steps = 1;
};

// Exponential interpolation from initial_rate at step 0 to decay_target at
// total_steps. Steps are clamped into [0, total_steps].
inline double schedule_rate(const LrSchedule& s, std::int64_t step) {
  require(s.initial_rate > 0 && s.decay_target > 0 && s.total_steps >= 1,
          ErrorCategory::config, "learning-rate schedule parameters");
  if (step < 0) step = 0;
  if (step > s.total_steps) step = s.total_steps;
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return std::exp(std::log(s.initial_rate) +
                  frac * (std::log(s.decay_target) - std::log(s.initial_rate)));
}

namespace detail {

template <typename Scalar, typename Arr>
void adam_update_array(Arr& param, Arr& m, Arr& v, const Arr& grad,
                       double rate, double beta1, double beta2, double eps,
                       std::int64_t t) {
  if (!grad.allFinite())
    fail_at_step(ErrorCategory::diverged_training,
                 "non-finite gradient in optimizer update", t);
  const Scalar b1 = static_cast<Scalar>(beta1);
  const Scalar b2 = static_cast<Scalar>(beta2);
  m = b1 * m + (Scalar(1) - b1) * grad;
  v = (b2 * v.array() + (Scalar(1) - b2) * grad.array().square()).matrix();
  const Scalar bc1 =
      static_cast<Scalar>(1.0 - std::pow(beta1, static_cast<double>(t)));
  const Scalar bc2 =
      static_cast<Scalar>(1.0 - std::pow(beta2, static_cast<double>(t)));
  param.array() -= static_cast<Scalar>(rate) * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + static_cast<Scalar>(eps));
}

}  // namespace detail

template <typename Scalar>
void adam_step(Mlp<Scalar>& net, AdamState<Scalar>& state,
               const GradientSet<Scalar>& grads, double rate,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7) {
  require(grads.weights.size() == net.weights.size() &&
              grads.biases.size() == net.biases.size() &&
              state.m_weights.size() == net.weights.size(),
          ErrorCategory::shape_mismatch,
          "gradient or moment arrays do not match network");
  state.step += 1;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    require(grads.weights[l].rows() == net.weights[l].rows() &&
                grads.weights[l].cols() == net.weights[l].cols() &&
                grads.biases[l].size() == net.biases[l].size(),
            ErrorCategory::shape_mismatch, "gradient shape mismatch");
    detail::adam_update_array<Scalar>(net.weights[l], state.m_weights[l],
                                      state.v_weights[l], grads.weights[l],
                                      rate, beta1, beta2, eps, state.step);
    detail::adam_update_array<Scalar>(net.biases[l], state.m_biases[l],
                                      state.v_biases[l], grads.biases[l], rate,
                                      beta1, beta2, eps, state.step);
  }
}

template <typename Scalar>
void accumulate(GradientSet<Scalar>& into, const GradientSet<Scalar>& g) {
  require(into.weights.size() == g.weights.size(),
          ErrorCategory::shape_mismatch, "gradient accumulation mismatch");
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    into.weights[l] += g.weights[l];
    into.biases[l] += g.biases[l];
  }
}

}  // namespace smpbsde

#endif  // SMPBSDE_NN_HPP
