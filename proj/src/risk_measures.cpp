#include "dynrisk/risk_measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dynrisk/errors.hpp"

namespace dynrisk::risk {

namespace {

constexpr double kWeightSumTolerance = 1e-12;
constexpr double kRootTolerance = 1e-12;
constexpr int kRootMaxIterations = 200;
constexpr int kBracketExpansions = 64;

// Neumaier compensated summation.
template <class F>
double compensated_sum(std::size_t n, F&& term) {
  double sum = 0.0;
  double comp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = term(i);
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

bool all_outcomes_equal(const EmpiricalDistribution& dist) {
  const auto z = dist.outcomes();
  return std::all_of(z.begin(), z.end(), [&](double v) { return v == z.front(); });
}

SaddlePoint degenerate_saddle(const RiskSpec& risk, const EmpiricalDistribution& dist) {
  const double c = dist.outcomes().front();
  SaddlePoint sp;
  sp.xi.assign(dist.size(), 1.0);
  sp.conjugate_grad_weight.assign(dist.size(), 0.0);
  sp.value = c;
  switch (risk.kind) {
    case RiskKind::Expectation:
      sp.lambda = 0.0;
      break;
    case RiskKind::CVaR:
      sp.lambda = c;
      break;
    case RiskKind::PenalizedCVaR:
      sp.lambda = risk.beta > 0.0 ? c - risk.beta : c;
      break;
  }
  return sp;
}

SaddlePoint expectation_saddle(const EmpiricalDistribution& dist) {
  SaddlePoint sp;
  sp.xi.assign(dist.size(), 1.0);
  sp.conjugate_grad_weight.assign(dist.size(), 0.0);
  sp.lambda = 0.0;
  sp.value = dist.mean();
  return sp;
}

// xi = 1/alpha above the lower (1-alpha)-quantile, 0 below, and the quantile
// atom(s) carry whatever mass is left to make E[xi] = 1.
SaddlePoint cvar_saddle(const EmpiricalDistribution& dist, double alpha) {
  const auto z = dist.outcomes();
  const auto p = dist.weights();
  const std::size_t n = dist.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });

  SaddlePoint sp;
  sp.xi.assign(n, 0.0);
  sp.conjugate_grad_weight.assign(n, 0.0);
  const double cap = 1.0 / alpha;

  double mass_above = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double group_mass = 0.0;
    while (j < n && z[order[j]] == z[order[i]]) {
      group_mass += p[order[j]];
      ++j;
    }
    const bool last_group = (j == n);
    if (!last_group && std::abs(mass_above + group_mass - alpha) <= 1e-13) {
      // Tail filled exactly: the lower quantile is the next atom down.
      for (std::size_t k = i; k < j; ++k) sp.xi[order[k]] = cap;
      sp.lambda = z[order[j]];
      break;
    }
    if (last_group || mass_above + group_mass >= alpha - 1e-13) {
      double boundary = group_mass > 0.0 ? (alpha - mass_above) / (alpha * group_mass) : 0.0;
      boundary = std::clamp(boundary, 0.0, cap);
      for (std::size_t k = i; k < j; ++k) sp.xi[order[k]] = boundary;
      sp.lambda = z[order[i]];
      break;
    }
    for (std::size_t k = i; k < j; ++k) sp.xi[order[k]] = cap;
    mass_above += group_mass;
    i = j;
  }

  sp.value = compensated_sum(n, [&](std::size_t k) { return sp.xi[k] * p[k] * z[k]; });
  return sp;
}

double capped_log_xi(double z, double lambda, double alpha, double beta) {
  return std::min(-std::log(alpha), (z - lambda - beta) / beta);
}

// Exact lambda for a fixed active set U (atoms below the cap):
//   exp(-(lambda+beta)/beta) * sum_U p_i exp(Z_i/beta) = 1 - P(capped)/alpha.
// Returns NaN when the active set cannot satisfy normalization.
double closed_form_lambda(const EmpiricalDistribution& dist, double alpha, double beta,
                          double lambda_guess) {
  const auto z = dist.outcomes();
  const auto p = dist.weights();
  const double threshold = -beta * std::log(alpha) + beta + lambda_guess;
  double capped_mass = 0.0;
  double z_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (z[i] <= threshold) {
      if (p[i] > 0.0) z_max = std::max(z_max, z[i]);
    } else {
      capped_mass += p[i];
    }
  }
  const double remaining = 1.0 - capped_mass / alpha;
  if (!std::isfinite(z_max) || !(remaining > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double scaled = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (z[i] <= threshold && p[i] > 0.0) scaled += p[i] * std::exp((z[i] - z_max) / beta);
  }
  return z_max + beta * (std::log(scaled) - std::log(remaining)) - beta;
}

SaddlePoint penalized_saddle(const EmpiricalDistribution& dist, double alpha, double beta) {
  const auto z = dist.outcomes();
  const auto p = dist.weights();
  const std::size_t n = dist.size();

  SaddlePoint sp;
  if (alpha == 1.0) {
    // The envelope collapses to xi = 1; any lambda <= min Z - beta is a multiplier.
    sp.xi.assign(n, 1.0);
    sp.conjugate_grad_weight.assign(n, 0.0);
    sp.lambda = *std::min_element(z.begin(), z.end()) - beta;
    sp.value = dist.mean();
    return sp;
  }

  sp.lambda = penalized_cvar_lambda_root(dist, alpha, beta);
  sp.xi.resize(n);
  sp.conjugate_grad_weight.assign(n, 0.0);
  const double cap = 1.0 / alpha;
  std::vector<double> log_xi(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_xi[i] = capped_log_xi(z[i], sp.lambda, alpha, beta);
    sp.xi[i] = std::exp(log_xi[i]);
  }

  // Remove the residual normalization error on the uncapped atoms.
  double capped_mass = 0.0;
  double free_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sp.xi[i] >= cap) {
      capped_mass += p[i] * cap;
    } else {
      free_mass += p[i] * sp.xi[i];
    }
  }
  if (free_mass > 0.0 && capped_mass < 1.0) {
    const double scale = (1.0 - capped_mass) / free_mass;
    const double log_scale = std::log(scale);
    for (std::size_t i = 0; i < n; ++i) {
      if (sp.xi[i] < cap) {
        sp.xi[i] = std::min(cap, sp.xi[i] * scale);
        log_xi[i] = std::min(-std::log(alpha), log_xi[i] + log_scale);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    sp.conjugate_grad_weight[i] = sp.xi[i] > 0.0 ? beta * log_xi[i] : 0.0;
  }
  sp.conjugate_value =
      compensated_sum(n, [&](std::size_t i) { return p[i] * sp.xi[i] * sp.conjugate_grad_weight[i]; });
  const double weighted =
      compensated_sum(n, [&](std::size_t i) { return p[i] * sp.xi[i] * z[i]; });
  sp.value = weighted - sp.conjugate_value;
  return sp;
}

}  // namespace

EmpiricalDistribution::EmpiricalDistribution(std::vector<double> outcomes,
                                             std::vector<double> weights)
    : outcomes_(std::move(outcomes)), weights_(std::move(weights)) {
  if (outcomes_.empty()) throw ShapeError("empirical distribution has no outcomes");
  if (outcomes_.size() != weights_.size()) {
    throw ShapeError("empirical distribution: " + std::to_string(outcomes_.size()) +
                     " outcomes but " + std::to_string(weights_.size()) + " weights");
  }
  for (std::size_t i = 0; i < outcomes_.size(); ++i) {
    if (!std::isfinite(outcomes_[i])) {
      throw NumericalError("empirical distribution: non-finite outcome at index " +
                           std::to_string(i));
    }
    if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i])) {
      throw ParameterError("empirical distribution: invalid weight at index " + std::to_string(i));
    }
  }
  const double total = compensated_sum(weights_.size(), [&](std::size_t i) { return weights_[i]; });
  if (std::abs(total - 1.0) > kWeightSumTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "empirical distribution: weights sum to " << total;
    throw ParameterError(msg.str());
  }
}

EmpiricalDistribution EmpiricalDistribution::uniform(std::vector<double> outcomes) {
  const std::size_t n = outcomes.size();
  std::vector<double> weights(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  return EmpiricalDistribution(std::move(outcomes), std::move(weights));
}

double EmpiricalDistribution::mean() const {
  return compensated_sum(size(), [&](std::size_t i) { return outcomes_[i] * weights_[i]; });
}

std::string_view to_string(RiskKind kind) {
  switch (kind) {
    case RiskKind::Expectation:
      return "mean";
    case RiskKind::CVaR:
      return "cvar";
    case RiskKind::PenalizedCVaR:
      return "cvar-pen";
  }
  return "unknown";
}

RiskKind parse_risk_kind(std::string_view name) {
  if (name == "mean") return RiskKind::Expectation;
  if (name == "cvar") return RiskKind::CVaR;
  if (name == "cvar-pen") return RiskKind::PenalizedCVaR;
  throw ParameterError("unknown risk measure '" + std::string(name) +
                       "' (expected mean, cvar or cvar-pen)");
}

void RiskSpec::validate() const {
  if (kind == RiskKind::Expectation) return;
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ParameterError("risk alpha must lie in (0,1], got " + std::to_string(alpha));
  }
  if (kind == RiskKind::PenalizedCVaR && !(beta >= 0.0 && std::isfinite(beta))) {
    throw ParameterError("risk beta must be >= 0, got " + std::to_string(beta));
  }
}

std::string RiskSpec::describe() const {
  std::ostringstream out;
  out << to_string(kind);
  if (kind != RiskKind::Expectation) out << " alpha=" << alpha;
  if (kind == RiskKind::PenalizedCVaR) out << " beta=" << beta;
  return out.str();
}

double penalized_cvar_root_residual(const EmpiricalDistribution& dist, double alpha, double beta,
                                    double lambda) {
  const auto z = dist.outcomes();
  const auto p = dist.weights();
  const double threshold = -beta * std::log(alpha) + beta + lambda;
  const double cap = 1.0 / alpha;
  const double lhs = compensated_sum(dist.size(), [&](std::size_t i) {
    if (!(z[i] <= threshold)) return 0.0;
    return p[i] * (std::exp((z[i] - lambda - beta) / beta) - cap);
  });
  return lhs - (1.0 - cap);
}

double penalized_cvar_lambda_root(const EmpiricalDistribution& dist, double alpha, double beta) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ParameterError("penalized CVaR root requires alpha in (0,1), got " +
                         std::to_string(alpha));
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ParameterError("penalized CVaR root requires beta > 0, got " + std::to_string(beta));
  }
  const auto z = dist.outcomes();
  const auto [zmin_it, zmax_it] = std::minmax_element(z.begin(), z.end());
  double lo = *zmin_it - beta * (1.0 - std::log(alpha)) - 1.0;
  double hi = *zmax_it + 1.0;

  auto residual = [&](double lambda) { return penalized_cvar_root_residual(dist, alpha, beta, lambda); };

  // The residual decreases in lambda: positive at lo, negative at hi.
  double r_lo = residual(lo);
  double r_hi = residual(hi);
  for (int k = 0; k < kBracketExpansions && !(r_lo >= 0.0 && r_hi <= 0.0); ++k) {
    const double width = hi - lo;
    if (r_lo < 0.0) {
      lo -= width;
      r_lo = residual(lo);
    }
    if (r_hi > 0.0) {
      hi += width;
      r_hi = residual(hi);
    }
  }
  if (!(r_lo >= 0.0 && r_hi <= 0.0)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "penalized CVaR root: no sign change on [" << lo << ", " << hi << "]";
    throw NumericalError(msg.str(), std::min(std::abs(r_lo), std::abs(r_hi)));
  }

  double best = std::abs(r_lo) <= std::abs(r_hi) ? lo : hi;
  double best_r = std::min(std::abs(r_lo), std::abs(r_hi));
  bool converged = best_r <= kRootTolerance;
  for (int it = 0; it < kRootMaxIterations && !converged; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) {
      converged = true;  // bracket collapsed to adjacent doubles
      break;
    }
    const double r = residual(mid);
    if (std::abs(r) < best_r) {
      best = mid;
      best_r = std::abs(r);
    }
    if (best_r <= kRootTolerance) {
      converged = true;
      break;
    }
    if (r > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (!converged) {
    throw NumericalError("penalized CVaR root: no convergence after " +
                             std::to_string(kRootMaxIterations) + " iterations",
                         best_r);
  }

  // Polish on the identified active set.
  const double polished = closed_form_lambda(dist, alpha, beta, best);
  if (std::isfinite(polished)) {
    const double r = std::abs(residual(polished));
    if (r <= best_r) best = polished;
  }
  return best;
}

SaddlePoint saddle_point(const RiskSpec& risk, const EmpiricalDistribution& dist) {
  risk.validate();
  if (all_outcomes_equal(dist)) return degenerate_saddle(risk, dist);
  switch (risk.kind) {
    case RiskKind::Expectation:
      return expectation_saddle(dist);
    case RiskKind::CVaR:
      return cvar_saddle(dist, risk.alpha);
    case RiskKind::PenalizedCVaR:
      if (risk.beta == 0.0) return cvar_saddle(dist, risk.alpha);
      return penalized_saddle(dist, risk.alpha, risk.beta);
  }
  throw ParameterError("unknown risk kind");
}

double evaluate(const RiskSpec& risk, const EmpiricalDistribution& dist) {
  risk.validate();
  if (risk.kind == RiskKind::Expectation) return dist.mean();
  return saddle_point(risk, dist).value;
}

int CostTree::depth() const {
  if (children.empty()) return 0;
  const int d = children.front().child.depth();
  for (const auto& edge : children) {
    if (edge.child.depth() != d) throw ShapeError("cost tree leaves sit at different depths");
  }
  return d + 1;
}

namespace {

double compose_node(std::span<const RiskSpec> risks, const CostTree& node, std::size_t t) {
  if (node.children.empty()) return 0.0;
  std::vector<double> outcomes;
  std::vector<double> weights;
  outcomes.reserve(node.children.size());
  weights.reserve(node.children.size());
  for (const auto& edge : node.children) {
    outcomes.push_back(edge.cost + compose_node(risks, edge.child, t + 1));
    weights.push_back(edge.probability);
  }
  return evaluate(risks[t], EmpiricalDistribution(std::move(outcomes), std::move(weights)));
}

}  // namespace

double compose_dynamic_risk(std::span<const RiskSpec> risk_per_step, const CostTree& tree) {
  const int depth = tree.depth();
  if (static_cast<std::size_t>(depth) != risk_per_step.size()) {
    throw ShapeError("compose_dynamic_risk: tree depth " + std::to_string(depth) + " but " +
                     std::to_string(risk_per_step.size()) + " risk measures");
  }
  return compose_node(risk_per_step, tree, 0);
}

}  // namespace dynrisk::risk
