#pragma once

// Dense SiLU networks with hand-written reverse-mode parameter gradients,
// Adam, and the location-scale Gaussian policy used by the actor.
//
// Batches are column-major: an input matrix has one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace dynrisk::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class HeadKind { Identity, BoundedMean, SoftplusStd };

struct OutputHead {
  HeadKind kind = HeadKind::Identity;
  double param = 0.0;  // a_max for BoundedMean, floor for SoftplusStd

  static OutputHead identity() { return {}; }
  /// a_max * (2 sigmoid(x) - 1), strictly inside (-a_max, a_max).
  static OutputHead bounded_mean(double a_max) { return {HeadKind::BoundedMean, a_max}; }
  /// floor + softplus(x).
  static OutputHead softplus_std(double floor) { return {HeadKind::SoftplusStd, floor}; }

  double apply(double x) const;
  double derivative(double x) const;

  friend bool operator==(const OutputHead&, const OutputHead&) = default;
};

double silu(double x);
double silu_derivative(double x);

class DenseNetwork;

/// Intermediate values recorded by a forward pass, consumed by param_gradients.
class ForwardCache {
 public:
  bool empty() const { return owner_ == nullptr; }
  Eigen::Index batch_size() const { return inputs_.empty() ? 0 : inputs_.front().cols(); }

 private:
  friend class DenseNetwork;
  const DenseNetwork* owner_ = nullptr;
  std::vector<Matrix> inputs_;  // input of each layer
  std::vector<Matrix> pre_;     // pre-activation of each layer
};

class DenseNetwork {
 public:
  DenseNetwork() : DenseNetwork({1, 1}, OutputHead::identity(), Vector::Zero(2)) {}

  /// layer_sizes = {input, hidden..., output}. Weights and biases are drawn
  /// uniformly from +-1/sqrt(fan_in).
  DenseNetwork(std::vector<int> layer_sizes, OutputHead head, std::uint64_t seed);
  DenseNetwork(std::vector<int> layer_sizes, OutputHead head, Vector parameters);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  const OutputHead& head() const { return head_; }
  Eigen::Index num_parameters() const { return params_.size(); }

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }

  Eigen::Map<const RowMajorMatrix> weights(std::size_t layer) const;
  Eigen::Map<RowMajorMatrix> weights(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);
  Eigen::Index weight_offset(std::size_t layer) const { return offsets_[layer]; }
  Eigen::Index bias_offset(std::size_t layer) const;

  Matrix forward(const Matrix& inputs) const;
  Matrix forward(const Matrix& inputs, ForwardCache& cache) const;
  double forward_scalar(const Vector& input) const;

  /// Gradient of sum_{k,n} output_adjoint(k,n) * output(k,n) with respect to
  /// every parameter, using the activations recorded in cache.
  Vector param_gradients(const ForwardCache& cache, const Matrix& output_adjoint) const;

 private:
  void check_input(const Matrix& inputs) const;
  void build_offsets();

  std::vector<int> sizes_{1, 1};
  OutputHead head_;
  std::vector<Eigen::Index> offsets_;
  Vector params_ = Vector::Zero(2);
};

struct AdamState {
  AdamState() = default;
  AdamState(Eigen::Index n, double learning_rate)
      : first_moment(Vector::Zero(n)), second_moment(Vector::Zero(n)), lr(learning_rate) {}

  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update, in place. Throws NumericalError (and leaves
/// params and state untouched) when grads contain NaN or Inf.
void adam_step(AdamState& state, Vector& params, const Vector& grads);

struct PolicyCache {
  ForwardCache mean;
  ForwardCache std;
};

/// Gaussian policy N(mean(s), std(s)^2) with a location-scale sampler.
/// Parameters are ordered mean network first, then std network (if any).
class GaussianPolicy {
 public:
  struct Moments {
    Vector mean;
    Vector std;
  };

  GaussianPolicy() = default;
  GaussianPolicy(DenseNetwork mean_net, double fixed_std);
  GaussianPolicy(DenseNetwork mean_net, DenseNetwork std_net);

  const DenseNetwork& mean_net() const { return mean_net_; }
  bool has_fixed_std() const { return !std_net_.has_value(); }
  double fixed_std() const { return fixed_std_; }
  const DenseNetwork& std_net() const { return *std_net_; }
  int feature_dim() const { return mean_net_.input_dim(); }

  Eigen::Index num_parameters() const;
  Vector parameters() const;
  void set_parameters(const Vector& params);

  Moments moments(const Matrix& features) const;
  Moments moments(const Matrix& features, PolicyCache& cache) const;

  /// Gradient of sum_n (mean_adjoint(n) mean(n) + std_adjoint(n) std(n)).
  Vector param_gradients(const PolicyCache& cache, const Vector& mean_adjoint,
                         const Vector& std_adjoint) const;

  /// mean(s) + std(s) * noise.
  double sample_reparam(const Vector& features, double noise) const;

  /// Gaussian log-density of action at state and its parameter gradient.
  std::pair<double, Vector> log_prob_and_grad(const Vector& features, double action) const;

 private:
  DenseNetwork mean_net_;
  std::optional<DenseNetwork> std_net_;
  double fixed_std_ = 1.0;
};

/// Critic V(s): hidden SiLU layers and a linear output.
DenseNetwork make_critic(int feature_dim, const std::vector<int>& hidden, std::uint64_t seed);

/// Policy with a bounded mean head and either a fixed std or a softplus std
/// head whose output starts near init_std.
GaussianPolicy make_policy(int feature_dim, const std::vector<int>& hidden, double a_max,
                           std::optional<double> fixed_std, double std_floor, double init_std,
                           std::uint64_t seed);

}  // namespace dynrisk::nn
