#include "dynrisk/actor_critic.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "dynrisk/errors.hpp"
#include "dynrisk/random.hpp"

namespace dynrisk::ac {

namespace {

// Stream tags.
constexpr std::uint64_t kRollout = 0x11;
constexpr std::uint64_t kCritic = 0x22;
constexpr std::uint64_t kActor = 0x33;
constexpr std::uint64_t kDiag = 0x44;
constexpr std::uint64_t kEval = 0x55;
constexpr std::uint64_t kInit = 0x66;

constexpr std::size_t kEpisodeChunk = 256;

void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

struct BatchPick {
  std::size_t episode;
  int t;
};

std::vector<BatchPick> pick_states(const RolloutBuffer& buffer, int n, Rng& rng) {
  if (buffer.episodes.empty() || buffer.horizon < 1) throw ContractViolation("empty rollout buffer");
  std::vector<BatchPick> picks(static_cast<std::size_t>(n));
  for (auto& p : picks) {
    p.episode = static_cast<std::size_t>(rng.below(buffer.episodes.size()));
    p.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(buffer.horizon)));
  }
  return picks;
}

nn::Matrix feature_matrix(const env::Environment& env, std::span<const env::EnvState> states) {
  nn::Matrix m(env.feature_dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k) {
    env.features(states[k], std::span<double>(m.col(static_cast<Eigen::Index>(k)).data(),
                                              static_cast<std::size_t>(env.feature_dim())));
  }
  return m;
}

// Time-major simulation of n episodes, in fixed chunks so the schedule never
// changes the arithmetic.
void run_episodes(const env::Environment& env, const nn::GaussianPolicy& policy, std::size_t n,
                  std::uint64_t seed, std::uint64_t tag, bool stochastic, int threads,
                  const std::function<void(std::size_t, const Episode&)>& sink) {
  const int T = env.horizon();
  const std::size_t chunks = (n + kEpisodeChunk - 1) / kEpisodeChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kEpisodeChunk;
    const std::size_t hi = std::min(n, lo + kEpisodeChunk);
    const std::size_t width = hi - lo;
    std::vector<Rng> rngs;
    rngs.reserve(width);
    std::vector<Episode> eps(width);
    std::vector<env::EnvState> current(width, env.reset());
    for (std::size_t i = 0; i < width; ++i) {
      rngs.emplace_back(seed, std::initializer_list<std::uint64_t>{tag, lo + i});
      eps[i].states.reserve(static_cast<std::size_t>(T) + 1);
      eps[i].states.push_back(current[i]);
    }
    for (int t = 0; t < T; ++t) {
      const auto m = policy.moments(feature_matrix(env, current));
      for (std::size_t i = 0; i < width; ++i) {
        const double z = stochastic ? rngs[i].normal() : 0.0;
        const double a = m.mean(static_cast<Eigen::Index>(i)) + m.std(static_cast<Eigen::Index>(i)) * z;
        const auto tr = env.step(current[i], a, rngs[i]);
        eps[i].actions.push_back(a);
        eps[i].costs.push_back(tr.cost);
        eps[i].states.push_back(tr.next_state);
        current[i] = tr.next_state;
      }
    }
    for (std::size_t i = 0; i < width; ++i) sink(lo + i, eps[i]);
  });
}

}  // namespace

void TrainConfig::validate() const {
  risk.validate();
  require(n_epochs >= 0, "train.n_epochs must be >= 0");
  require(n_epochs_v >= 1 && n_epochs_pi >= 1, "train.n_epochs_v and train.n_epochs_pi must be >= 1");
  require(batch_v >= 1 && batch_pi >= 1, "train.batch_v and train.batch_pi must be >= 1");
  require(n_episodes >= 1 && n_transitions >= 1 && diag_transitions >= 1,
          "train.n_episodes, train.n_transitions and train.diag_transitions must be >= 1");
  require(grad_clip > 0, "train.grad_clip must be positive");
  require(threads >= 0, "train.threads must be >= 0");
  require(critic_lr > 0 && actor_lr > 0, "nn learning rates must be positive");
  require(std_floor > 0 && init_std_fraction > 0, "nn.std_floor and nn.init_std_fraction must be positive");
  require(value_scale > 0, "nn.value_scale must be positive");
  for (int h : critic_hidden) require(h >= 1, "nn.critic_hidden sizes must be positive");
  for (int h : policy_hidden) require(h >= 1, "nn.policy_hidden sizes must be positive");
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

double Episode::total_cost() const { return std::accumulate(costs.begin(), costs.end(), 0.0); }

double RolloutBuffer::mean_total_cost() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.total_cost();
  return s / static_cast<double>(episodes.size());
}

RolloutBuffer simulate_rollouts(const env::Environment& env, const nn::GaussianPolicy& policy,
                                int n_episodes, std::uint64_t seed, int threads, bool stochastic) {
  require(n_episodes >= 0, "simulate_rollouts: negative episode count");
  RolloutBuffer buf;
  buf.horizon = env.horizon();
  buf.episodes.resize(static_cast<std::size_t>(n_episodes));
  run_episodes(env, policy, buf.episodes.size(), seed, kRollout, stochastic, threads,
               [&](std::size_t i, const Episode& e) { buf.episodes[i] = e; });
  return buf;
}

std::vector<double> risk_to_go_samples(const env::Environment& env, const env::EnvState& s,
                                       std::span<const env::Transition> inner,
                                       const env::ValueFunction& critic) {
  if (s.t >= env.horizon()) throw ContractViolation("risk-to-go requested at the terminal time");
  std::vector<double> z(inner.size());
  if (s.t + 1 < env.horizon()) {
    std::vector<env::EnvState> next;
    next.reserve(inner.size());
    for (const auto& tr : inner) next.push_back(tr.next_state);
    const auto v = critic.batch(env, next);
    for (std::size_t i = 0; i < inner.size(); ++i) z[i] = inner[i].cost + v[i];
  } else {
    for (std::size_t i = 0; i < inner.size(); ++i) z[i] = inner[i].cost;
  }
  return z;
}

double critic_target(const env::Environment& env, const env::EnvState& s,
                     std::span<const env::Transition> inner, const env::ValueFunction& critic,
                     const risk::RiskSpec& risk) {
  return risk::evaluate(risk, risk::EmpiricalDistribution::uniform(risk_to_go_samples(env, s, inner, critic)));
}

ScoreAdjoint score_adjoint(std::span<const env::Transition> inner, std::span<const double> risk_to_go,
                           const risk::SaddlePoint& saddle, double mean, double std) {
  const std::size_t M = inner.size();
  if (M == 0 || risk_to_go.size() != M || saddle.xi.size() != M ||
      saddle.conjugate_grad_weight.size() != M) {
    throw ContractViolation("saddle point does not match the inner batch");
  }
  ScoreAdjoint out;
  for (std::size_t m = 0; m < M; ++m) {
    const double w = saddle.xi[m] * (risk_to_go[m] - saddle.lambda - saddle.conjugate_grad_weight[m]);
    const double z = (inner[m].action - mean) / std;
    out.mean += w * z / std;
    out.std += w * (z * z - 1.0) / std;
  }
  out.mean /= static_cast<double>(M);
  out.std /= static_cast<double>(M);
  return out;
}

nn::Vector actor_gradient_estimate(const env::Environment& env, const env::EnvState& s,
                                   std::span<const env::Transition> inner,
                                   const env::ValueFunction& critic, const nn::GaussianPolicy& policy,
                                   const risk::SaddlePoint& saddle) {
  const auto z = risk_to_go_samples(env, s, inner, critic);
  nn::PolicyCache cache;
  const auto m = policy.moments(nn::Matrix(env.features(s)), cache);
  const auto adj = score_adjoint(inner, z, saddle, m.mean(0), m.std(0));
  return policy.param_gradients(cache, nn::Vector::Constant(1, adj.mean), nn::Vector::Constant(1, adj.std));
}

nn::Vector actor_gradient_estimate(const env::Environment& env, const env::EnvState& s,
                                   std::span<const env::Transition> inner,
                                   const env::ValueFunction& critic, const nn::GaussianPolicy& policy,
                                   const risk::RiskSpec& risk) {
  const auto sp = risk::saddle_point(
      risk, risk::EmpiricalDistribution::uniform(risk_to_go_samples(env, s, inner, critic)));
  return actor_gradient_estimate(env, s, inner, critic, policy, sp);
}

double clip_norm(nn::Vector& g, double max_norm) {
  const double norm = g.norm();
  if (std::isfinite(norm) && norm > max_norm) g *= max_norm / norm;
  return norm;
}

CriticStats critic_update(nn::DenseNetwork& critic, nn::AdamState& opt,
                          const nn::GaussianPolicy& policy, const env::Environment& env,
                          const RolloutBuffer& buffer, const TrainConfig& cfg, std::uint64_t tag) {
  CriticStats stats;
  const double scale = cfg.value_scale;
  for (int e = 0; e < cfg.n_epochs_v; ++e) {
    Rng pick(cfg.seed, {kCritic, tag, static_cast<std::uint64_t>(e)});
    const auto picks = pick_states(buffer, cfg.batch_v, pick);
    std::vector<env::EnvState> states;
    states.reserve(picks.size());
    for (const auto& p : picks) states.push_back(buffer.state(p.episode, p.t));

    std::vector<double> targets(states.size());
    const env::ValueFunction value{&critic, scale};
    parallel_for(states.size(), cfg.threads, [&](std::size_t k) {
      Rng rng(cfg.seed, {kCritic, tag, static_cast<std::uint64_t>(e), k + 1});
      const auto inner = env::inner_transitions(env, states[k], policy, cfg.n_transitions, rng);
      targets[k] = critic_target(env, states[k], inner, value, cfg.risk);
    });

    nn::ForwardCache cache;
    const nn::Matrix pred = critic.forward(feature_matrix(env, states), cache);
    const auto n = static_cast<double>(states.size());
    nn::Matrix adjoint(1, pred.cols());
    double loss = 0.0;
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
      const double r = pred(0, k) - targets[static_cast<std::size_t>(k)] / scale;
      loss += r * r;
      adjoint(0, k) = 2.0 * r / n;
    }
    loss = loss / n * scale * scale;
    if (!std::isfinite(loss)) {
      throw NumericalError("critic loss is not finite at critic epoch " + std::to_string(e));
    }
    nn::Vector g = critic.param_gradients(cache, adjoint);
    clip_norm(g, cfg.grad_clip);
    adam_step(opt, critic.parameters(), g);
    stats.loss = loss;
  }
  return stats;
}

ActorStats actor_update(nn::GaussianPolicy& policy, nn::AdamState& opt,
                        const nn::DenseNetwork& critic, const env::Environment& env,
                        const RolloutBuffer& buffer, const TrainConfig& cfg, std::uint64_t tag) {
  ActorStats stats;
  const env::ValueFunction value{&critic, cfg.value_scale};
  double norm_sum = 0.0;
  for (int e = 0; e < cfg.n_epochs_pi; ++e) {
    Rng pick(cfg.seed, {kActor, tag, static_cast<std::uint64_t>(e)});
    const auto picks = pick_states(buffer, cfg.batch_pi, pick);
    std::vector<env::EnvState> states;
    states.reserve(picks.size());
    for (const auto& p : picks) states.push_back(buffer.state(p.episode, p.t));

    nn::PolicyCache cache;
    const auto m = policy.moments(feature_matrix(env, states), cache);
    const auto n = static_cast<Eigen::Index>(states.size());
    nn::Vector mean_adj(n);
    nn::Vector std_adj(n);
    parallel_for(states.size(), cfg.threads, [&](std::size_t k) {
      Rng rng(cfg.seed, {kActor, tag, static_cast<std::uint64_t>(e), k + 1});
      const auto inner = env::inner_transitions(env, states[k], policy, cfg.n_transitions, rng);
      const auto z = risk_to_go_samples(env, states[k], inner, value);
      const auto sp = risk::saddle_point(cfg.risk, risk::EmpiricalDistribution::uniform(z));
      const auto ki = static_cast<Eigen::Index>(k);
      const auto adj = score_adjoint(inner, z, sp, m.mean(ki), m.std(ki));
      mean_adj(ki) = adj.mean / static_cast<double>(n);
      std_adj(ki) = adj.std / static_cast<double>(n);
    });

    nn::Vector g = policy.param_gradients(cache, mean_adj, std_adj);
    const double norm = clip_norm(g, cfg.grad_clip);
    if (!std::isfinite(norm)) {
      ++stats.skipped;
      continue;
    }
    norm_sum += norm;
    nn::Vector params = policy.parameters();
    adam_step(opt, params, g);
    policy.set_parameters(params);
  }
  const int taken = cfg.n_epochs_pi - stats.skipped;
  stats.grad_norm = taken > 0 ? norm_sum / taken : 0.0;
  return stats;
}

TrainState initial_state(const TrainConfig& cfg, const env::Environment& env) {
  TrainState st;
  const double a_max = env.action_bound();
  st.policy = nn::make_policy(env.feature_dim(), cfg.policy_hidden, a_max, env.fixed_policy_std(),
                              cfg.std_floor, cfg.init_std_fraction * a_max,
                              derive_seed(cfg.seed, {kInit, 1}));
  st.critic = nn::make_critic(env.feature_dim(), cfg.critic_hidden, derive_seed(cfg.seed, {kInit, 2}));
  st.policy_opt = nn::AdamState(st.policy.num_parameters(), cfg.actor_lr);
  st.critic_opt = nn::AdamState(st.critic.num_parameters(), cfg.critic_lr);
  return st;
}

void train_from(TrainState& st, const TrainConfig& cfg, const env::Environment& env,
                const std::function<void(const TrainState&)>& on_epoch) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
    const auto tag = static_cast<std::uint64_t>(epoch);
    try {
      const auto buffer =
          simulate_rollouts(env, st.policy, cfg.n_episodes, derive_seed(cfg.seed, {kRollout, tag}), cfg.threads);
      const nn::GaussianPolicy frozen_policy = st.policy;
      const auto cs = critic_update(st.critic, st.critic_opt, frozen_policy, env, buffer, cfg, tag);
      const nn::DenseNetwork frozen_critic = st.critic;
      const auto as = actor_update(st.policy, st.policy_opt, frozen_critic, env, buffer, cfg, tag);
      Rng diag(cfg.seed, {kDiag, tag});
      const double r0 = env::estimate_dynamic_risk_at_s0(
          env, st.policy, {&st.critic, cfg.value_scale}, cfg.risk, cfg.diag_transitions, diag);
      EpochLog row;
      row.epoch = epoch + 1;
      row.mean_cost = buffer.mean_total_cost();
      row.risk_at_s0 = r0;
      row.critic_loss = cs.loss;
      row.grad_norm = as.grad_norm;
      row.wall_time_s = std::chrono::duration<double>(clock::now() - start).count();
      st.log.push_back(row);
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch + 1) + ": " + e.what(), e.residual());
    }
    if (on_epoch) on_epoch(st);
  }
}

TrainState train(const TrainConfig& cfg, const std::function<void(const TrainState&)>& on_epoch) {
  cfg.validate();
  const auto env = env::make_environment(cfg.env);
  auto st = initial_state(cfg, *env);
  train_from(st, cfg, *env, on_epoch);
  return st;
}

EvaluationReport evaluate_policy(const nn::GaussianPolicy& policy, const env::Environment& env,
                                 int n_episodes, std::uint64_t seed, bool stochastic, int threads) {
  require(n_episodes >= 0, "evaluate_policy: negative episode count");
  if (policy.feature_dim() != env.feature_dim()) {
    throw ConfigError("policy expects " + std::to_string(policy.feature_dim()) +
                      " features but the environment provides " + std::to_string(env.feature_dim()));
  }
  EvaluationReport rep;
  rep.horizon = env.horizon();
  const auto n = static_cast<std::size_t>(n_episodes);
  rep.terminal_values.resize(n);
  rep.total_costs.resize(n);
  rep.terminal_states.resize(n);
  rep.tracked.assign(static_cast<std::size_t>(env.horizon()) + 1, std::vector<double>(n));
  const double y0 = env.initial_wealth();
  run_episodes(env, policy, n, seed, kEval, stochastic, threads, [&](std::size_t i, const Episode& e) {
    const double c = e.total_cost();
    rep.total_costs[i] = c;
    rep.terminal_values[i] = y0 - c;
    rep.terminal_states[i] = e.states.back();
    for (std::size_t t = 0; t < e.states.size(); ++t) rep.tracked[t][i] = env.tracked_coordinate(e.states[t]);
  });
  return rep;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ShapeError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("quantile level must lie in [0,1]");
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace dynrisk::ac
