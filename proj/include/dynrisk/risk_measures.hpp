#pragma once

// One-step convex risk measures on finite empirical distributions.
//
// Every risk is evaluated through its dual representation
//     rho(Z) = sup_{xi in U(P)} { E^xi[Z] - rho*(xi) },
// and the maximizer is returned as a SaddlePoint so the policy-gradient
// estimator can reuse the distortion weights and multipliers.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynrisk::risk {

/// Finite set of outcomes with probability weights.
class EmpiricalDistribution {
 public:
  EmpiricalDistribution(std::vector<double> outcomes, std::vector<double> weights);

  /// Sample-average distribution: every outcome carries weight 1/n.
  static EmpiricalDistribution uniform(std::vector<double> outcomes);

  std::span<const double> outcomes() const { return outcomes_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const { return outcomes_.size(); }
  double mean() const;

 private:
  std::vector<double> outcomes_;
  std::vector<double> weights_;
};

enum class RiskKind { Expectation, CVaR, PenalizedCVaR };

/// CLI names: "mean", "cvar", "cvar-pen".
std::string_view to_string(RiskKind kind);
RiskKind parse_risk_kind(std::string_view name);

struct RiskSpec {
  RiskKind kind = RiskKind::Expectation;
  double alpha = 1.0;  // tail level, CVaR variants
  double beta = 0.0;   // entropy penalty, PenalizedCVaR

  static RiskSpec expectation() { return {}; }
  static RiskSpec cvar(double alpha) { return {RiskKind::CVaR, alpha, 0.0}; }
  static RiskSpec penalized_cvar(double alpha, double beta) {
    return {RiskKind::PenalizedCVaR, alpha, beta};
  }

  /// Throws ParameterError unless alpha in (0,1] and beta >= 0.
  void validate() const;
  std::string describe() const;

  friend bool operator==(const RiskSpec&, const RiskSpec&) = default;
};

struct SaddlePoint {
  std::vector<double> xi;                     // distortion weight per outcome
  double lambda = 0.0;                        // normalization multiplier
  double conjugate_value = 0.0;               // rho*(xi)
  std::vector<double> conjugate_grad_weight;  // f(xi) with rho*(xi) = E^xi[f(xi)]
  double value = 0.0;                         // E^xi[Z] - rho*(xi)
};

double evaluate(const RiskSpec& risk, const EmpiricalDistribution& dist);

SaddlePoint saddle_point(const RiskSpec& risk, const EmpiricalDistribution& dist);

/// Root in lambda of
///   sum_{i : Z_i <= -beta log(alpha) + beta + lambda} p_i (exp((Z_i - lambda - beta)/beta) - 1/alpha)
///     = 1 - 1/alpha.
/// Requires alpha in (0,1) and beta > 0.
double penalized_cvar_lambda_root(const EmpiricalDistribution& dist, double alpha, double beta);

/// Left-hand side minus right-hand side of the root equation above.
double penalized_cvar_root_residual(const EmpiricalDistribution& dist, double alpha, double beta,
                                    double lambda);

/// Finite scenario tree. Each edge carries its conditional probability and the
/// one-step cost incurred when traversing it.
struct CostTree {
  struct Edge;
  std::vector<Edge> children;

  int depth() const;  // ShapeError if leaves sit at different depths
};

struct CostTree::Edge {
  double probability = 0.0;
  double cost = 0.0;
  CostTree child;
};

/// rho_0(c_0 + rho_1(c_1 + ... + rho_{T-1}(c_{T-1}))) by exact backward
/// recursion over the tree. risk_per_step[t] is applied at depth t.
double compose_dynamic_risk(std::span<const RiskSpec> risk_per_step, const CostTree& tree);

}  // namespace dynrisk::risk
