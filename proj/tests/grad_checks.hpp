#pragma once

// Finite-difference checks of the hand-written network gradients, shared by
// the unit tests and the acceptance runner.

#include <cstdint>
#include <optional>
#include <vector>

#include "dynrisk/neural.hpp"
#include "dynrisk/random.hpp"
#include "oracles.hpp"

namespace gradcheck {

using dynrisk::nn::DenseNetwork;
using dynrisk::nn::GaussianPolicy;
using dynrisk::nn::Matrix;
using dynrisk::nn::OutputHead;
using dynrisk::nn::Vector;

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Objective sum(A .* net(X)) on a random batch; returns the worst relative
/// error between param_gradients and central differences (h = 1e-5).
inline double network_error(const std::vector<int>& sizes, OutputHead head, std::uint64_t seed) {
  dynrisk::Rng rng(seed, {0x9c});
  DenseNetwork net(sizes, head, seed);
  // Spread the parameters a little so that activations are not all near zero.
  for (Eigen::Index i = 0; i < net.num_parameters(); ++i) net.parameters()(i) *= 1.0 + rng.uniform();
  const int batch = 3;
  Matrix x(sizes.front(), batch);
  Matrix adj(sizes.back(), batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < adj.size(); ++i) adj.data()[i] = rng.normal();

  dynrisk::nn::ForwardCache cache;
  net.forward(x, cache);
  const Vector analytic = net.param_gradients(cache, adj);

  auto objective = [&](const std::vector<double>& p) {
    DenseNetwork copy = net;
    copy.parameters() = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size()));
    return (adj.array() * copy.forward(x).array()).sum();
  };
  const auto numeric = oracle::fd_gradient(objective, to_std(net.parameters()), 1e-5);
  return oracle::max_relative_error(to_std(analytic), numeric);
}

/// Worst relative error of log_prob_and_grad against central differences of
/// the log density at a random state and action.
inline double policy_error(int feature_dim, const std::vector<int>& hidden, std::optional<double> fixed_std,
                           std::uint64_t seed) {
  dynrisk::Rng rng(seed, {0x9d});
  const double a_max = 2.0;
  GaussianPolicy policy =
      dynrisk::nn::make_policy(feature_dim, hidden, a_max, fixed_std, 1e-2, 0.5 * a_max, seed);
  Vector features(feature_dim);
  for (int i = 0; i < feature_dim; ++i) features(i) = rng.normal();
  const double action = 2.0 * rng.normal();
  const auto [logp, analytic] = policy.log_prob_and_grad(features, action);
  (void)logp;
  auto objective = [&](const std::vector<double>& p) {
    GaussianPolicy copy = policy;
    copy.set_parameters(Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size())));
    return copy.log_prob_and_grad(features, action).first;
  };
  const auto numeric = oracle::fd_gradient(objective, to_std(policy.parameters()), 1e-5);
  return oracle::max_relative_error(to_std(analytic), numeric);
}

}  // namespace gradcheck
