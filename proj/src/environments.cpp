#include "dynrisk/environments.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dynrisk/errors.hpp"

namespace dynrisk::env {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::StatArb:
      return "statarb";
    case EnvKind::HestonHedge:
      return "heston";
    case EnvKind::CliffWalk:
      return "cliff";
  }
  return "statarb";
}

EnvKind parse_env_kind(std::string_view name) {
  if (name == "statarb") return EnvKind::StatArb;
  if (name == "heston") return EnvKind::HestonHedge;
  if (name == "cliff") return EnvKind::CliffWalk;
  throw ConfigError("unknown environment '" + std::string(name) +
                    "' (expected statarb, heston or cliff)");
}

void StatArbConfig::validate() const {
  require(T >= 1, "statarb: T must be at least 1");
  require(kappa > 0 && sigma > 0 && dt > 0, "statarb: kappa, sigma and dt must be positive");
  require(q_max > 0 && u_max > 0, "statarb: q_max and u_max must be positive");
  require(phi >= 0 && psi >= 0, "statarb: cost coefficients must be nonnegative");
  require(s0 > 0, "statarb: s0 must be positive");
}

void HestonConfig::validate() const {
  require(T >= 1, "heston: T must be at least 1");
  require(kappa > 0 && theta > 0 && vol_of_vol >= 0 && dt > 0,
          "heston: kappa, theta, dt must be positive and vol_of_vol nonnegative");
  require(std::abs(rho) < 1.0, "heston: |rho| must be below 1");
  require(s0 > 0 && nu0 >= 0 && strike > 0, "heston: s0 and strike must be positive, nu0 >= 0");
  require(epsilon >= 0 && a_max > 0, "heston: epsilon >= 0 and a_max > 0 required");
  require(std::isfinite(b0) && std::isfinite(risk_target), "heston: b0 and risk_target must be finite");
}

void CliffConfig::validate() const {
  require(T >= 1, "cliff: T must be at least 1");
  require(a_max > 0 && sigma > 0, "cliff: a_max and sigma must be positive");
  require(cliff_cost >= 0, "cliff: cliff_cost must be nonnegative");
  require(cliff_first <= cliff_last, "cliff: cliff_first must not exceed cliff_last");
}

nn::Vector Environment::features(const EnvState& s) const {
  nn::Vector v(feature_dim());
  features(s, std::span<double>(v.data(), static_cast<std::size_t>(v.size())));
  return v;
}

void Environment::check_not_terminal(const EnvState& s) const {
  if (s.t >= horizon()) {
    throw EpisodeComplete("step called at t=" + std::to_string(s.t) + " with horizon " +
                          std::to_string(horizon()));
  }
  if (s.t < 0) throw StateError("negative timestep");
}

Transition Environment::step(const EnvState& s, double action, Rng& rng) const {
  std::array<double, 4> noise{};
  for (int i = 0; i < noise_dim(); ++i) noise[i] = rng.normal();
  return step_with_noise(s, action, std::span<const double>(noise.data(), noise_dim()));
}

// StatArb -------------------------------------------------------------------

StatArb::StatArb(StatArbConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  decay_ = std::exp(-cfg_.kappa * cfg_.dt);
  noise_scale_ = cfg_.sigma * std::sqrt(-std::expm1(-2.0 * cfg_.kappa * cfg_.dt) / (2.0 * cfg_.kappa));
}

EnvState StatArb::reset() const { return {0, {cfg_.s0, 0.0, 0.0, 0.0}}; }

void StatArb::features(const EnvState& s, std::span<double> out) const {
  out[0] = static_cast<double>(s.t) / cfg_.T;
  // Deviation from the reversion level in stationary standard deviations;
  // S / s0 only moves by about 0.1 and is too flat to learn from quickly.
  out[1] = (s.x[0] - cfg_.mu) * std::sqrt(2.0 * cfg_.kappa) / cfg_.sigma;
  out[2] = s.x[1] / cfg_.q_max;
}

Transition StatArb::step_with_noise(const EnvState& s, double action,
                                    std::span<const double> noise) const {
  check_not_terminal(s);
  const double S = s.x[0];
  const double q = s.x[1];
  const double inside = std::nextafter(cfg_.q_max, 0.0);
  const double u_clamped = std::clamp(action, -cfg_.u_max, cfg_.u_max);
  const double q_next = std::clamp(q + u_clamped, -inside, inside);
  const double u = q_next - q;

  const double S_next = cfg_.mu + (S - cfg_.mu) * decay_ + noise_scale_ * noise[0];
  double cost = u * S + cfg_.phi * u * u;
  if (s.t + 1 == cfg_.T) cost -= q_next * S_next - cfg_.psi * q_next * q_next;
  return {action, u, {s.t + 1, {S_next, q_next, 0.0, 0.0}}, cost};
}

std::vector<GridAxis> StatArb::default_grid() const {
  return {{"price", 101, 0.6 * cfg_.mu, 1.4 * cfg_.mu}, {"inventory", 101, -cfg_.q_max, cfg_.q_max}};
}

EnvState StatArb::grid_state(int t, std::span<const double> v) const {
  const double inside = std::nextafter(cfg_.q_max, 0.0);
  return {t, {v[0], std::clamp(v[1], -inside, inside), 0.0, 0.0}};
}

// HestonHedge ---------------------------------------------------------------

HestonHedge::HestonHedge(HestonConfig cfg) : cfg_(cfg) { cfg_.validate(); }

EnvState HestonHedge::reset() const { return {0, {cfg_.s0, cfg_.nu0, 0.0, cfg_.b0}}; }

void HestonHedge::features(const EnvState& s, std::span<double> out) const {
  out[0] = static_cast<double>(s.t) / cfg_.T;
  // Log-moneyness in units of the volatility over the whole horizon, for the
  // same reason as in StatArb.
  out[1] = std::log(s.x[0] / cfg_.strike) / std::sqrt(cfg_.theta * cfg_.T * cfg_.dt);
  out[2] = s.x[2];
}

Transition HestonHedge::step_with_noise(const EnvState& s, double action,
                                        std::span<const double> noise) const {
  check_not_terminal(s);
  const double S = s.x[0];
  const double nu = s.x[1];
  const double a_prev = s.x[2];
  const double B = s.x[3];
  const double a = std::clamp(action, -cfg_.a_max, cfg_.a_max);
  const double dt = cfg_.dt;

  const double nu_plus = std::max(nu, 0.0);
  const double z_s = noise[0];
  const double z_nu = cfg_.rho * z_s + std::sqrt(1.0 - cfg_.rho * cfg_.rho) * noise[1];
  const double S_next = S * std::exp((cfg_.mu - 0.5 * nu_plus) * dt + std::sqrt(nu_plus * dt) * z_s);
  double nu_next = nu + cfg_.kappa * (cfg_.theta - nu_plus) * dt +
                   cfg_.vol_of_vol * std::sqrt(nu_plus * dt) * z_nu;
  if (nu >= 0.0) nu_next += 0.25 * cfg_.vol_of_vol * cfg_.vol_of_vol * dt * (z_nu * z_nu - 1.0);

  const double trade = a - a_prev;
  const double y = B + a_prev * S;
  const double bank_plus = B - trade * S - std::abs(trade) * cfg_.epsilon;
  const double growth = std::exp(cfg_.r * dt);
  double bank_next;
  double y_next;
  if (s.t + 1 < cfg_.T) {
    bank_next = growth * bank_plus;
    y_next = bank_next + a * S_next;
  } else {
    bank_next = growth * bank_plus + a * S_next - std::abs(a) * cfg_.epsilon -
                std::max(S_next - cfg_.strike, 0.0);
    y_next = bank_next;
  }
  return {action, a, {s.t + 1, {S_next, nu_next, a, bank_next}}, y - y_next};
}

double HestonHedge::bank_before_payoff(const EnvState& terminal) const {
  return terminal.x[3] + std::max(terminal.x[0] - cfg_.strike, 0.0);
}

std::vector<GridAxis> HestonHedge::default_grid() const {
  return {{"price", 51, 0.8 * cfg_.s0, 1.2 * cfg_.s0}, {"holding", 51, 0.0, std::min(1.0, cfg_.a_max)}};
}

EnvState HestonHedge::grid_state(int t, std::span<const double> v) const {
  return {t, {v[0], cfg_.theta, v[1], cfg_.b0}};
}

// CliffWalk -----------------------------------------------------------------

CliffWalk::CliffWalk(CliffConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void CliffWalk::features(const EnvState& s, std::span<double> out) const {
  out[0] = static_cast<double>(s.t) / cfg_.T;
  out[1] = s.x[0] / cfg_.T;
}

Transition CliffWalk::step_with_noise(const EnvState& s, double action,
                                      std::span<const double>) const {
  check_not_terminal(s);
  const int t_next = s.t + 1;
  const double x_next = s.x[0] + action;
  double cost = 1.0 + action * action;
  if (x_next <= cfg_.cliff && t_next >= cfg_.cliff_first && t_next <= cfg_.cliff_last) {
    cost += cfg_.cliff_cost;
  }
  if (t_next == cfg_.T) cost += x_next * x_next;
  return {action, action, {t_next, {x_next, 0.0, 0.0, 0.0}}, cost};
}

std::vector<GridAxis> CliffWalk::default_grid() const { return {{"position", 121, -2.0, 10.0}}; }

EnvState CliffWalk::grid_state(int t, std::span<const double> v) const { return {t, {v[0], 0.0, 0.0, 0.0}}; }

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg) {
  switch (cfg.kind) {
    case EnvKind::StatArb:
      return std::make_unique<StatArb>(cfg.statarb);
    case EnvKind::HestonHedge:
      return std::make_unique<HestonHedge>(cfg.heston);
    case EnvKind::CliffWalk:
      return std::make_unique<CliffWalk>(cfg.cliff);
  }
  throw ConfigError("unknown environment kind");
}

std::vector<Transition> inner_transitions(const Environment& env, const EnvState& s,
                                          const nn::GaussianPolicy& policy, int M, Rng& rng,
                                          bool stochastic) {
  if (M < 1) throw ParameterError("inner_transitions: M must be at least 1");
  if (s.t >= env.horizon()) throw EpisodeComplete("inner_transitions at a terminal state");
  const auto m = policy.moments(nn::Matrix(env.features(s)));
  const double mean = m.mean(0);
  const double std = m.std(0);
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) {
    const double z = stochastic ? rng.normal() : 0.0;
    out.push_back(env.step(s, mean + std * z, rng));
  }
  return out;
}

double ValueFunction::operator()(const Environment& env, const EnvState& s) const {
  if (s.t >= env.horizon()) return 0.0;
  return value_scale * net->forward_scalar(env.features(s));
}

std::vector<double> ValueFunction::batch(const Environment& env, std::span<const EnvState> states) const {
  std::vector<double> out(states.size(), 0.0);
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].t < env.horizon()) live.push_back(i);
  }
  if (live.empty()) return out;
  nn::Matrix inputs(env.feature_dim(), static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k) {
    env.features(states[live[k]], std::span<double>(inputs.col(static_cast<Eigen::Index>(k)).data(),
                                                    static_cast<std::size_t>(env.feature_dim())));
  }
  const nn::Matrix v = net->forward(inputs);
  for (std::size_t k = 0; k < live.size(); ++k) out[live[k]] = value_scale * v(0, static_cast<Eigen::Index>(k));
  return out;
}

double estimate_dynamic_risk_at_s0(const Environment& env, const nn::GaussianPolicy& policy,
                                   const ValueFunction& value, const risk::RiskSpec& risk, int n,
                                   Rng& rng) {
  const EnvState s0 = env.reset();
  const auto inner = inner_transitions(env, s0, policy, n, rng);
  std::vector<EnvState> next;
  next.reserve(inner.size());
  for (const auto& tr : inner) next.push_back(tr.next_state);
  const auto v = value.batch(env, next);
  std::vector<double> z(inner.size());
  for (std::size_t i = 0; i < inner.size(); ++i) {
    z[i] = inner[i].cost + v[i];
    if (!std::isfinite(z[i])) throw NumericalError("non-finite risk-to-go sample at s0");
  }
  return risk::evaluate(risk, risk::EmpiricalDistribution::uniform(std::move(z)));
}

double black_scholes_call(double S, double K, double vol, double tau, double r) {
  if (!(S > 0) || !(K > 0)) throw ParameterError("black_scholes_call: S and K must be positive");
  if (!(vol >= 0) || !(tau >= 0)) throw ParameterError("black_scholes_call: vol and tau must be >= 0");
  const double discount = std::exp(-r * tau);
  const double sd = vol * std::sqrt(tau);
  if (sd == 0.0) return std::max(S - K * discount, 0.0);
  const double d1 = (std::log(S / K) + r * tau) / sd + 0.5 * sd;
  const double d2 = d1 - sd;
  return S * normal_cdf(d1) - K * discount * normal_cdf(d2);
}

Calibration calibrate_b0(const HestonHedge& env, const std::function<double()>& risk_of_costs,
                         double target) {
  if (!std::isfinite(target)) throw ParameterError("calibrate_b0: target must be finite");
  const auto& c = env.config();
  Calibration out;
  out.guess = black_scholes_call(c.s0, c.strike, std::sqrt(c.theta), c.T * c.dt, c.r);
  const double at_guess = risk_of_costs();
  if (!std::isfinite(at_guess)) throw NumericalError("calibrate_b0: non-finite risk estimate");
  out.risk_at_guess = at_guess - out.guess;
  out.b0 = out.guess + (out.risk_at_guess - target);
  const double again = risk_of_costs();
  if (!std::isfinite(again)) throw NumericalError("calibrate_b0: non-finite risk estimate");
  out.risk_at_b0 = again - out.b0;
  return out;
}

}  // namespace dynrisk::env
