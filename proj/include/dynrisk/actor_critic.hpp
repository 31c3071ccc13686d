#pragma once

// Nested-simulation actor-critic for dynamic convex risk measures.
//
// Outer episodes give the visited states; at each sampled state M inner
// one-step transitions give the empirical law of c + V(s') from which the
// critic target and the saddle point of the policy gradient are computed.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dynrisk/environments.hpp"
#include "dynrisk/neural.hpp"
#include "dynrisk/risk_measures.hpp"

namespace dynrisk::ac {

struct TrainConfig {
  env::EnvConfig env;
  risk::RiskSpec risk;

  std::vector<int> critic_hidden{16, 16, 16, 16};
  std::vector<int> policy_hidden{16, 16, 16, 16, 16};
  double critic_lr = 1e-3;
  double actor_lr = 5e-4;
  double std_floor = 1e-2;
  double init_std_fraction = 0.5;  // initial policy std as a fraction of the action bound
  double value_scale = 1.0;        // critic output multiplier

  int n_epochs = 100;
  int n_epochs_v = 5;
  int batch_v = 300;
  int n_epochs_pi = 1;
  int batch_pi = 300;
  int n_episodes = 300;
  int n_transitions = 1000;
  int diag_transitions = 1000;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Number of worker threads actually used for a request (0 = all cores).
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, n). Work items must be independent; the result
/// never depends on the thread count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

struct Episode {
  std::vector<env::EnvState> states;  // T + 1 states
  std::vector<double> actions;        // sampled actions
  std::vector<double> costs;
  double total_cost() const;
};

struct RolloutBuffer {
  int horizon = 0;
  std::vector<Episode> episodes;
  double mean_total_cost() const;
  const env::EnvState& state(std::size_t episode, int t) const { return episodes[episode].states[t]; }
};

RolloutBuffer simulate_rollouts(const env::Environment& env, const nn::GaussianPolicy& policy,
                                int n_episodes, std::uint64_t seed, int threads,
                                bool stochastic = true);

/// Samples of c (at T-1) or c + V(s') from an inner batch.
std::vector<double> risk_to_go_samples(const env::Environment& env, const env::EnvState& s,
                                       std::span<const env::Transition> inner,
                                       const env::ValueFunction& critic);

/// rho_t of the inner empirical law of the risk-to-go. ContractViolation at t = T.
double critic_target(const env::Environment& env, const env::EnvState& s,
                     std::span<const env::Transition> inner, const env::ValueFunction& critic,
                     const risk::RiskSpec& risk);

/// Adjoints of a single state's gradient term with respect to the policy
/// mean and std outputs at that state.
struct ScoreAdjoint {
  double mean = 0.0;
  double std = 0.0;
};

/// (1/M) sum_m xi_m (Z_m - lambda - f_m) d/d(mean, std) log pi(a_m | s).
ScoreAdjoint score_adjoint(std::span<const env::Transition> inner, std::span<const double> z,
                           const risk::SaddlePoint& saddle, double mean, double std);

/// Gradient of V_t(s) in the policy parameters from one inner batch, given
/// the saddle point of the risk-to-go law. ContractViolation if saddle does
/// not belong to the batch.
nn::Vector actor_gradient_estimate(const env::Environment& env, const env::EnvState& s,
                                   std::span<const env::Transition> inner,
                                   const env::ValueFunction& critic, const nn::GaussianPolicy& policy,
                                   const risk::SaddlePoint& saddle);

/// Same, computing the saddle point of risk internally.
nn::Vector actor_gradient_estimate(const env::Environment& env, const env::EnvState& s,
                                   std::span<const env::Transition> inner,
                                   const env::ValueFunction& critic, const nn::GaussianPolicy& policy,
                                   const risk::RiskSpec& risk);

/// Rescales g in place so that its norm is at most max_norm; returns the
/// norm before clipping.
double clip_norm(nn::Vector& g, double max_norm);

struct CriticStats {
  double loss = 0.0;  // mean squared error of the last epoch, cost units
};

struct ActorStats {
  double grad_norm = 0.0;  // mean pre-clip norm over epochs
  int skipped = 0;         // steps skipped on non-finite gradients
};

/// n_epochs_v Adam steps of the critic towards risk-aware targets; the policy
/// is only read. tag separates random streams of different calls.
CriticStats critic_update(nn::DenseNetwork& critic, nn::AdamState& opt,
                          const nn::GaussianPolicy& policy, const env::Environment& env,
                          const RolloutBuffer& buffer, const TrainConfig& cfg, std::uint64_t tag);

/// n_epochs_pi Adam steps of the policy against the frozen critic.
ActorStats actor_update(nn::GaussianPolicy& policy, nn::AdamState& opt,
                        const nn::DenseNetwork& critic, const env::Environment& env,
                        const RolloutBuffer& buffer, const TrainConfig& cfg, std::uint64_t tag);

struct EpochLog {
  int epoch = 0;
  double mean_cost = 0.0;
  double risk_at_s0 = 0.0;
  double critic_loss = 0.0;
  double grad_norm = 0.0;
  double wall_time_s = 0.0;
};

struct TrainState {
  nn::GaussianPolicy policy;
  nn::AdamState policy_opt;
  nn::DenseNetwork critic;
  nn::AdamState critic_opt;
  std::vector<EpochLog> log;
};

TrainState initial_state(const TrainConfig& cfg, const env::Environment& env);

/// Algorithm loop: simulate, critic update under the frozen policy, actor
/// update under the frozen critic. on_epoch runs after every outer epoch.
TrainState train(const TrainConfig& cfg, const std::function<void(const TrainState&)>& on_epoch = {});

/// Training loop on a caller-owned environment and starting state.
void train_from(TrainState& state, const TrainConfig& cfg, const env::Environment& env,
                const std::function<void(const TrainState&)>& on_epoch = {});

struct EvaluationReport {
  int horizon = 0;
  std::vector<double> terminal_values;           // initial wealth minus total cost
  std::vector<double> total_costs;
  std::vector<std::vector<double>> tracked;      // [t][episode], t = 0..T
  std::vector<env::EnvState> terminal_states;
  std::size_t size() const { return terminal_values.size(); }
};

EvaluationReport evaluate_policy(const nn::GaussianPolicy& policy, const env::Environment& env,
                                 int n_episodes, std::uint64_t seed, bool stochastic, int threads = 0);

/// Linear-interpolation sample quantile (Hyndman-Fan type 7).
double quantile(std::vector<double> values, double p);

}  // namespace dynrisk::ac
