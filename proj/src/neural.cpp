#include "dynrisk/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dynrisk/errors.hpp"
#include "dynrisk/random.hpp"

namespace dynrisk::nn {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace

double silu(double x) { return x * sigmoid(x); }

double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double OutputHead::apply(double x) const {
  switch (kind) {
    case HeadKind::Identity:
      return x;
    case HeadKind::BoundedMean: {
      const double bound = std::nextafter(param, 0.0);
      return std::clamp(param * std::tanh(0.5 * x), -bound, bound);
    }
    case HeadKind::SoftplusStd:
      return param + softplus(x);
  }
  return x;
}

double OutputHead::derivative(double x) const {
  switch (kind) {
    case HeadKind::Identity:
      return 1.0;
    case HeadKind::BoundedMean: {
      const double t = std::tanh(0.5 * x);
      return 0.5 * param * (1.0 - t * t);
    }
    case HeadKind::SoftplusStd:
      return sigmoid(x);
  }
  return 1.0;
}

DenseNetwork::DenseNetwork(std::vector<int> layer_sizes, OutputHead head, std::uint64_t seed)
    : sizes_(std::move(layer_sizes)), head_(head) {
  build_offsets();
  Rng rng(seed, {0x6e6e});
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    auto w = weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = bound * (2.0 * rng.uniform() - 1.0);
    }
    auto b = bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = bound * (2.0 * rng.uniform() - 1.0);
  }
}

DenseNetwork::DenseNetwork(std::vector<int> layer_sizes, OutputHead head, Vector parameters)
    : sizes_(std::move(layer_sizes)), head_(head) {
  build_offsets();
  if (parameters.size() != params_.size()) {
    throw ShapeError("network expects " + std::to_string(params_.size()) + " parameters, got " +
                     std::to_string(parameters.size()));
  }
  params_ = std::move(parameters);
}

void DenseNetwork::build_offsets() {
  if (sizes_.size() < 2) throw ShapeError("network needs at least an input and an output size");
  for (int s : sizes_) {
    if (s <= 0) throw ShapeError("network layer sizes must be positive");
  }
  offsets_.clear();
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
  }
  params_ = Vector::Zero(offset);
}

Eigen::Index DenseNetwork::bias_offset(std::size_t layer) const {
  return offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer];
}

Eigen::Map<const RowMajorMatrix> DenseNetwork::weights(std::size_t layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<RowMajorMatrix> DenseNetwork::weights(std::size_t layer) {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Vector> DenseNetwork::bias(std::size_t layer) const {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

Eigen::Map<Vector> DenseNetwork::bias(std::size_t layer) {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

void DenseNetwork::check_input(const Matrix& inputs) const {
  if (inputs.rows() != input_dim()) {
    throw ShapeError("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                     std::to_string(input_dim()));
  }
}

Matrix DenseNetwork::forward(const Matrix& inputs) const {
  check_input(inputs);
  Matrix a = inputs;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    Matrix z = weights(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < num_layers()) {
      a = z.unaryExpr([](double x) { return silu(x); });
    } else {
      a = z.unaryExpr([this](double x) { return head_.apply(x); });
    }
  }
  return a;
}

Matrix DenseNetwork::forward(const Matrix& inputs, ForwardCache& cache) const {
  check_input(inputs);
  cache.owner_ = this;
  cache.inputs_.resize(num_layers());
  cache.pre_.resize(num_layers());
  Matrix a = inputs;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    cache.inputs_[l] = a;
    Matrix z = weights(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < num_layers()) {
      a = z.unaryExpr([](double x) { return silu(x); });
    } else {
      a = z.unaryExpr([this](double x) { return head_.apply(x); });
    }
    cache.pre_[l] = std::move(z);
  }
  return a;
}

double DenseNetwork::forward_scalar(const Vector& input) const {
  return forward(Matrix(input))(0, 0);
}

Vector DenseNetwork::param_gradients(const ForwardCache& cache, const Matrix& output_adjoint) const {
  if (cache.owner_ != this || cache.pre_.size() != num_layers()) {
    throw StateError("param_gradients called without a matching forward pass");
  }
  const Eigen::Index batch = cache.batch_size();
  if (output_adjoint.rows() != output_dim() || output_adjoint.cols() != batch) {
    throw ShapeError("output adjoint is " + std::to_string(output_adjoint.rows()) + "x" +
                     std::to_string(output_adjoint.cols()) + ", forward produced " +
                     std::to_string(output_dim()) + "x" + std::to_string(batch));
  }
  Vector grad = Vector::Zero(params_.size());
  const std::size_t last = num_layers() - 1;
  Matrix delta = output_adjoint.cwiseProduct(
      cache.pre_[last].unaryExpr([this](double x) { return head_.derivative(x); }));
  for (std::size_t l = num_layers(); l-- > 0;) {
    Eigen::Map<RowMajorMatrix> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    gw.noalias() = delta * cache.inputs_[l].transpose();
    Eigen::Map<Vector>(grad.data() + bias_offset(l), sizes_[l + 1]) = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = weights(l).transpose() * delta;
      delta = back.cwiseProduct(cache.pre_[l - 1].unaryExpr([](double x) { return silu_derivative(x); }));
    }
  }
  return grad;
}

void adam_step(AdamState& state, Vector& params, const Vector& grads) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: gradient, parameter and state sizes differ");
  }
  if (!grads.allFinite()) throw NumericalError("adam_step: non-finite gradient, update skipped");
  state.step += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.eps);
}

GaussianPolicy::GaussianPolicy(DenseNetwork mean_net, double fixed_std)
    : mean_net_(std::move(mean_net)), fixed_std_(fixed_std) {
  if (!(fixed_std > 0.0)) throw ParameterError("policy std must be positive");
  if (mean_net_.output_dim() != 1) throw ShapeError("policy mean network must have one output");
}

GaussianPolicy::GaussianPolicy(DenseNetwork mean_net, DenseNetwork std_net)
    : mean_net_(std::move(mean_net)), std_net_(std::move(std_net)), fixed_std_(0.0) {
  if (mean_net_.output_dim() != 1 || std_net_->output_dim() != 1) {
    throw ShapeError("policy networks must have one output");
  }
  if (mean_net_.input_dim() != std_net_->input_dim()) {
    throw ShapeError("policy mean and std networks take different inputs");
  }
  if (std_net_->head().kind != HeadKind::SoftplusStd || !(std_net_->head().param > 0.0)) {
    throw ParameterError("policy std network needs a softplus head with a positive floor");
  }
}

Eigen::Index GaussianPolicy::num_parameters() const {
  return mean_net_.num_parameters() + (std_net_ ? std_net_->num_parameters() : 0);
}

Vector GaussianPolicy::parameters() const {
  Vector p(num_parameters());
  p.head(mean_net_.num_parameters()) = mean_net_.parameters();
  if (std_net_) p.tail(std_net_->num_parameters()) = std_net_->parameters();
  return p;
}

void GaussianPolicy::set_parameters(const Vector& params) {
  if (params.size() != num_parameters()) throw ShapeError("policy parameter size mismatch");
  mean_net_.parameters() = params.head(mean_net_.num_parameters());
  if (std_net_) std_net_->parameters() = params.tail(std_net_->num_parameters());
}

GaussianPolicy::Moments GaussianPolicy::moments(const Matrix& features) const {
  Moments m;
  m.mean = mean_net_.forward(features).row(0).transpose();
  if (std_net_) {
    m.std = std_net_->forward(features).row(0).transpose();
  } else {
    m.std = Vector::Constant(features.cols(), fixed_std_);
  }
  return m;
}

GaussianPolicy::Moments GaussianPolicy::moments(const Matrix& features, PolicyCache& cache) const {
  Moments m;
  m.mean = mean_net_.forward(features, cache.mean).row(0).transpose();
  if (std_net_) {
    m.std = std_net_->forward(features, cache.std).row(0).transpose();
  } else {
    m.std = Vector::Constant(features.cols(), fixed_std_);
  }
  return m;
}

Vector GaussianPolicy::param_gradients(const PolicyCache& cache, const Vector& mean_adjoint,
                                       const Vector& std_adjoint) const {
  Vector grad(num_parameters());
  grad.head(mean_net_.num_parameters()) =
      mean_net_.param_gradients(cache.mean, mean_adjoint.transpose());
  if (std_net_) {
    grad.tail(std_net_->num_parameters()) =
        std_net_->param_gradients(cache.std, std_adjoint.transpose());
  }
  return grad;
}

double GaussianPolicy::sample_reparam(const Vector& features, double noise) const {
  const auto m = moments(Matrix(features));
  return m.mean(0) + m.std(0) * noise;
}

std::pair<double, Vector> GaussianPolicy::log_prob_and_grad(const Vector& features,
                                                            double action) const {
  PolicyCache cache;
  const auto m = moments(Matrix(features), cache);
  const double mu = m.mean(0);
  const double sigma = m.std(0);
  const double z = (action - mu) / sigma;
  const double log_density = -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
  const Vector d_mean = Vector::Constant(1, z / sigma);
  const Vector d_std = Vector::Constant(1, (z * z - 1.0) / sigma);
  return {log_density, param_gradients(cache, d_mean, d_std)};
}

namespace {

std::vector<int> chain(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes;
  sizes.push_back(in);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

DenseNetwork make_critic(int feature_dim, const std::vector<int>& hidden, std::uint64_t seed) {
  return DenseNetwork(chain(feature_dim, hidden, 1), OutputHead::identity(), seed);
}

GaussianPolicy make_policy(int feature_dim, const std::vector<int>& hidden, double a_max,
                           std::optional<double> fixed_std, double std_floor, double init_std,
                           std::uint64_t seed) {
  DenseNetwork mean_net(chain(feature_dim, hidden, 1), OutputHead::bounded_mean(a_max),
                        derive_seed(seed, {1}));
  if (fixed_std) return GaussianPolicy(std::move(mean_net), *fixed_std);
  DenseNetwork std_net(chain(feature_dim, hidden, 1), OutputHead::softplus_std(std_floor),
                       derive_seed(seed, {2}));
  const std::size_t last = std_net.num_layers() - 1;
  std_net.bias(last).setConstant(inverse_softplus(std::max(init_std - std_floor, 1e-6)));
  return GaussianPolicy(std::move(mean_net), std::move(std_net));
}

}  // namespace dynrisk::nn
