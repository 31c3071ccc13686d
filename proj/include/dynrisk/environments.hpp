#pragma once

// Benchmark environments: mean-reverting statistical arbitrage, option
// hedging under Heston dynamics, and a continuous cliff walk.
//
// Every environment is a value-semantics state machine. step_with_noise is a
// pure function of (state, action, exogenous normals); step draws the
// normals from an Rng. Costs are wealth decrements, c_t = y_t - y_{t+1}.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynrisk/neural.hpp"
#include "dynrisk/random.hpp"
#include "dynrisk/risk_measures.hpp"

namespace dynrisk::env {

/// StatArb: x = (S, q). HestonHedge: x = (S, nu, a_prev, B). CliffWalk: x = (x).
struct EnvState {
  int t = 0;
  std::array<double, 4> x{};

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Transition {
  double action = 0.0;          // sampled action, before any clamping
  double applied_action = 0.0;  // action actually executed
  EnvState next_state;
  double cost = 0.0;
};

enum class EnvKind { StatArb, HestonHedge, CliffWalk };

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);

struct StatArbConfig {
  int T = 5;
  double kappa = 2.0;
  double mu = 1.0;
  double sigma = 0.2;
  double phi = 0.005;
  double psi = 0.5;
  double q_max = 5.0;
  double u_max = 2.0;
  double s0 = 1.0;
  double dt = 1.0;
  void validate() const;
  friend bool operator==(const StatArbConfig&, const StatArbConfig&) = default;
};

struct HestonConfig {
  int T = 10;
  double mu = 0.1;
  double kappa = 9.0;
  double theta = 0.0625;
  double vol_of_vol = 1.0;
  double rho = -0.5;
  double strike = 10.0;
  double epsilon = 0.005;
  double r = 0.0;
  double s0 = 10.0;
  double nu0 = 0.04;
  double dt = 1.0 / 120.0;
  double a_max = 1.5;
  double b0 = 0.0;
  double risk_target = 0.2;
  void validate() const;
  friend bool operator==(const HestonConfig&, const HestonConfig&) = default;
};

struct CliffConfig {
  int T = 9;
  double cliff = 1.0;
  double cliff_cost = 100.0;
  int cliff_first = 1;
  int cliff_last = 7;
  double a_max = 4.0;
  double sigma = 1.5;
  void validate() const;
  friend bool operator==(const CliffConfig&, const CliffConfig&) = default;
};

struct EnvConfig {
  EnvKind kind = EnvKind::StatArb;
  StatArbConfig statarb;
  HestonConfig heston;
  CliffConfig cliff;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

/// Axis of a rectangular state grid for policy and value heatmaps.
struct GridAxis {
  std::string name;
  int n = 1;
  double lo = 0.0;
  double hi = 0.0;
  double at(int i) const { return n == 1 ? lo : lo + (hi - lo) * i / (n - 1); }
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual EnvKind kind() const = 0;
  virtual int horizon() const = 0;
  virtual int feature_dim() const = 0;
  virtual int noise_dim() const = 0;
  /// Bound on the policy mean.
  virtual double action_bound() const = 0;
  /// Fixed policy std, if the environment prescribes one.
  virtual std::optional<double> fixed_policy_std() const { return std::nullopt; }

  virtual EnvState reset() const = 0;

  /// Network inputs; the first entry is always t/T.
  virtual void features(const EnvState& s, std::span<double> out) const = 0;
  nn::Vector features(const EnvState& s) const;

  /// Throws EpisodeComplete when s.t == horizon().
  virtual Transition step_with_noise(const EnvState& s, double action,
                                     std::span<const double> noise) const = 0;
  Transition step(const EnvState& s, double action, Rng& rng) const;

  /// y_0; terminal wealth (or reward) equals initial_wealth() - sum of costs.
  virtual double initial_wealth() const { return 0.0; }
  /// Coordinate reported in per-timestep quantile bands.
  virtual double tracked_coordinate(const EnvState& s) const = 0;
  virtual std::string tracked_name() const = 0;

  virtual std::vector<GridAxis> default_grid() const = 0;
  /// State at time t whose grid coordinates are values (one per axis).
  virtual EnvState grid_state(int t, std::span<const double> values) const = 0;

 protected:
  void check_not_terminal(const EnvState& s) const;
};

class StatArb final : public Environment {
 public:
  explicit StatArb(StatArbConfig cfg = {});
  const StatArbConfig& config() const { return cfg_; }

  EnvKind kind() const override { return EnvKind::StatArb; }
  int horizon() const override { return cfg_.T; }
  int feature_dim() const override { return 3; }
  int noise_dim() const override { return 1; }
  double action_bound() const override { return cfg_.u_max; }
  EnvState reset() const override;
  void features(const EnvState& s, std::span<double> out) const override;
  using Environment::features;
  Transition step_with_noise(const EnvState& s, double action,
                             std::span<const double> noise) const override;
  double tracked_coordinate(const EnvState& s) const override { return s.x[1]; }
  std::string tracked_name() const override { return "inventory"; }
  std::vector<GridAxis> default_grid() const override;
  EnvState grid_state(int t, std::span<const double> values) const override;

 private:
  StatArbConfig cfg_;
  double decay_;
  double noise_scale_;
};

class HestonHedge final : public Environment {
 public:
  explicit HestonHedge(HestonConfig cfg = {});
  const HestonConfig& config() const { return cfg_; }
  void set_b0(double b0) { cfg_.b0 = b0; }

  EnvKind kind() const override { return EnvKind::HestonHedge; }
  int horizon() const override { return cfg_.T; }
  int feature_dim() const override { return 3; }
  int noise_dim() const override { return 2; }
  double action_bound() const override { return cfg_.a_max; }
  EnvState reset() const override;
  void features(const EnvState& s, std::span<double> out) const override;
  using Environment::features;
  Transition step_with_noise(const EnvState& s, double action,
                             std::span<const double> noise) const override;
  double initial_wealth() const override { return cfg_.b0; }
  double tracked_coordinate(const EnvState& s) const override { return s.x[2]; }
  std::string tracked_name() const override { return "holding"; }
  std::vector<GridAxis> default_grid() const override;
  EnvState grid_state(int t, std::span<const double> values) const override;

  /// Bank account at T before the option payoff is settled.
  double bank_before_payoff(const EnvState& terminal) const;

 private:
  HestonConfig cfg_;
};

class CliffWalk final : public Environment {
 public:
  explicit CliffWalk(CliffConfig cfg = {});
  const CliffConfig& config() const { return cfg_; }

  EnvKind kind() const override { return EnvKind::CliffWalk; }
  int horizon() const override { return cfg_.T; }
  int feature_dim() const override { return 2; }
  int noise_dim() const override { return 0; }
  double action_bound() const override { return cfg_.a_max; }
  std::optional<double> fixed_policy_std() const override { return cfg_.sigma; }
  EnvState reset() const override { return {}; }
  void features(const EnvState& s, std::span<double> out) const override;
  using Environment::features;
  Transition step_with_noise(const EnvState& s, double action,
                             std::span<const double> noise) const override;
  double tracked_coordinate(const EnvState& s) const override { return s.x[0]; }
  std::string tracked_name() const override { return "position"; }
  std::vector<GridAxis> default_grid() const override;
  EnvState grid_state(int t, std::span<const double> values) const override;

 private:
  CliffConfig cfg_;
};

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg);

/// M i.i.d. one-step transitions from s. With stochastic = false the policy
/// noise is pinned to 0 (actions equal the policy mean); environment noise is
/// always drawn.
std::vector<Transition> inner_transitions(const Environment& env, const EnvState& s,
                                          const nn::GaussianPolicy& policy, int M, Rng& rng,
                                          bool stochastic = true);

/// Critic wrapper: V(s) = value_scale * net(features(s)), with V = 0 at t = T.
struct ValueFunction {
  const nn::DenseNetwork* net = nullptr;
  double value_scale = 1.0;

  double operator()(const Environment& env, const EnvState& s) const;
  /// Values for a batch of states sharing nothing but the environment.
  std::vector<double> batch(const Environment& env, std::span<const EnvState> states) const;
};

/// rho_0(c_0 + V(s_1)) over n fresh transitions from the initial state.
double estimate_dynamic_risk_at_s0(const Environment& env, const nn::GaussianPolicy& policy,
                                   const ValueFunction& value, const risk::RiskSpec& risk, int n,
                                   Rng& rng);

double black_scholes_call(double S, double K, double vol, double tau, double r);

struct Calibration {
  double b0 = 0.0;
  double guess = 0.0;
  double risk_at_guess = 0.0;
  double risk_at_b0 = 0.0;  // independent re-evaluation
};

/// Chooses B_0 so that the dynamic risk of the terminal wealth -y_T equals
/// target. risk_of_costs() returns an estimate of the dynamic risk of the
/// cost sequence; each call must use fresh samples. The risk of -y_T at a
/// given B_0 is risk_of_costs() - B_0.
Calibration calibrate_b0(const HestonHedge& env, const std::function<double()>& risk_of_costs,
                         double target);

}  // namespace dynrisk::env
