#include "dynrisk/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "dynrisk/checkpoint.hpp"
#include "dynrisk/errors.hpp"

namespace dynrisk::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

// Field registry ------------------------------------------------------------

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& name, const std::string& value, const char* expected) {
  throw ConfigError(name + ": expected " + expected + ", got '" + value + "'");
}

template <class T>
T parse_number(const std::string& name, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || text.empty()) {
    bad_value(name, text, std::is_floating_point_v<T> ? "a number" : "an integer");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) bad_value(name, text, "a finite number");
  }
  return v;
}

std::vector<int> parse_int_list(const std::string& name, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(parse_number<int>(name, b == std::string::npos ? "" : item.substr(b, e - b + 1)));
  }
  if (out.empty()) bad_value(name, text, "a comma-separated list of integers");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class T, class Member>
Field number(std::string section, std::string key, Member member) {
  const std::string name = section + "." + key;
  return {section, key,
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(member(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(member(const_cast<RunConfig&>(c)));
            }
          },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_number<T>(name, v); }};
}

#define DOUBLE(sec, key, expr) number<double>(sec, key, [](RunConfig& c) -> double& { return expr; })
#define INT(sec, key, expr) number<int>(sec, key, [](RunConfig& c) -> int& { return expr; })

Field optional_double(std::string section, std::string key, std::optional<double> RunConfig::*member) {
  const std::string name = section + "." + key;
  return {section, key,
          [member](const RunConfig& c) { return (c.*member) ? format_double(*(c.*member)) : std::string(); },
          [member, name](RunConfig& c, const std::string& v) {
            if (v.empty()) {
              c.*member = std::nullopt;
            } else {
              c.*member = parse_number<double>(name, v);
            }
          }};
}

Field int_list(std::string section, std::string key, std::vector<int> ac::TrainConfig::*member) {
  const std::string name = section + "." + key;
  return {section, key, [member](const RunConfig& c) { return join(c.train.*member); },
          [member, name](RunConfig& c, const std::string& v) { c.train.*member = parse_int_list(name, v); }};
}

Field choice(std::string section, std::string key, std::string RunConfig::*member,
             std::vector<std::string> allowed) {
  const std::string name = section + "." + key;
  return {section, key, [member](const RunConfig& c) { return c.*member; },
          [member, name, allowed](RunConfig& c, const std::string& v) {
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
              std::string list;
              for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
              throw ConfigError(name + ": expected one of " + list + ", got '" + v + "'");
            }
            c.*member = v;
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"env", "name", [](const RunConfig& c) { return std::string(env::to_string(c.train.env.kind)); },
                 [](RunConfig& c, const std::string& s) { c.train.env.kind = env::parse_env_kind(s); }});
    v.push_back(INT("env", "statarb.T", c.train.env.statarb.T));
    v.push_back(DOUBLE("env", "statarb.kappa", c.train.env.statarb.kappa));
    v.push_back(DOUBLE("env", "statarb.mu", c.train.env.statarb.mu));
    v.push_back(DOUBLE("env", "statarb.sigma", c.train.env.statarb.sigma));
    v.push_back(DOUBLE("env", "statarb.phi", c.train.env.statarb.phi));
    v.push_back(DOUBLE("env", "statarb.psi", c.train.env.statarb.psi));
    v.push_back(DOUBLE("env", "statarb.q_max", c.train.env.statarb.q_max));
    v.push_back(DOUBLE("env", "statarb.u_max", c.train.env.statarb.u_max));
    v.push_back(DOUBLE("env", "statarb.s0", c.train.env.statarb.s0));
    v.push_back(DOUBLE("env", "statarb.dt", c.train.env.statarb.dt));
    v.push_back(INT("env", "heston.T", c.train.env.heston.T));
    v.push_back(DOUBLE("env", "heston.mu", c.train.env.heston.mu));
    v.push_back(DOUBLE("env", "heston.kappa", c.train.env.heston.kappa));
    v.push_back(DOUBLE("env", "heston.theta", c.train.env.heston.theta));
    v.push_back(DOUBLE("env", "heston.vol_of_vol", c.train.env.heston.vol_of_vol));
    v.push_back(DOUBLE("env", "heston.rho", c.train.env.heston.rho));
    v.push_back(DOUBLE("env", "heston.strike", c.train.env.heston.strike));
    v.push_back(DOUBLE("env", "heston.epsilon", c.train.env.heston.epsilon));
    v.push_back(DOUBLE("env", "heston.r", c.train.env.heston.r));
    v.push_back(DOUBLE("env", "heston.s0", c.train.env.heston.s0));
    v.push_back(DOUBLE("env", "heston.nu0", c.train.env.heston.nu0));
    v.push_back(DOUBLE("env", "heston.dt", c.train.env.heston.dt));
    v.push_back(DOUBLE("env", "heston.a_max", c.train.env.heston.a_max));
    v.push_back(DOUBLE("env", "heston.b0", c.train.env.heston.b0));
    v.push_back(DOUBLE("env", "heston.risk_target", c.train.env.heston.risk_target));
    v.push_back(INT("env", "heston.calibration_samples", c.calibration_samples));
    v.push_back(INT("env", "cliff.T", c.train.env.cliff.T));
    v.push_back(DOUBLE("env", "cliff.cliff", c.train.env.cliff.cliff));
    v.push_back(DOUBLE("env", "cliff.cliff_cost", c.train.env.cliff.cliff_cost));
    v.push_back(INT("env", "cliff.cliff_first", c.train.env.cliff.cliff_first));
    v.push_back(INT("env", "cliff.cliff_last", c.train.env.cliff.cliff_last));
    v.push_back(DOUBLE("env", "cliff.a_max", c.train.env.cliff.a_max));
    v.push_back(DOUBLE("env", "cliff.sigma", c.train.env.cliff.sigma));

    v.push_back({"risk", "kind", [](const RunConfig& c) { return std::string(risk::to_string(c.train.risk.kind)); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.train.risk.kind = risk::parse_risk_kind(s);
                   } catch (const ParameterError& e) {
                     throw ConfigError(std::string("risk.kind: ") + e.what());
                   }
                 }});
    v.push_back(optional_double("risk", "alpha", &RunConfig::alpha));
    v.push_back(optional_double("risk", "beta", &RunConfig::beta));

    v.push_back(int_list("nn", "critic_hidden", &ac::TrainConfig::critic_hidden));
    v.push_back(int_list("nn", "policy_hidden", &ac::TrainConfig::policy_hidden));
    v.push_back(DOUBLE("nn", "critic_lr", c.train.critic_lr));
    v.push_back(DOUBLE("nn", "actor_lr", c.train.actor_lr));
    v.push_back(DOUBLE("nn", "std_floor", c.train.std_floor));
    v.push_back(DOUBLE("nn", "init_std_fraction", c.train.init_std_fraction));
    v.push_back(DOUBLE("nn", "value_scale", c.train.value_scale));

    v.push_back(choice("train", "preset", &RunConfig::preset, {"none", "full", "desk"}));
    v.push_back(INT("train", "n_epochs", c.train.n_epochs));
    v.push_back(INT("train", "n_epochs_v", c.train.n_epochs_v));
    v.push_back(INT("train", "batch_v", c.train.batch_v));
    v.push_back(INT("train", "n_epochs_pi", c.train.n_epochs_pi));
    v.push_back(INT("train", "batch_pi", c.train.batch_pi));
    v.push_back(INT("train", "n_episodes", c.train.n_episodes));
    v.push_back(INT("train", "n_transitions", c.train.n_transitions));
    v.push_back(INT("train", "diag_transitions", c.train.diag_transitions));
    v.push_back(DOUBLE("train", "grad_clip", c.train.grad_clip));
    v.push_back(number<std::uint64_t>("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    v.push_back(INT("train", "threads", c.train.threads));

    v.push_back(INT("eval", "n_episodes", c.eval_episodes));
    v.push_back(choice("eval", "mode", &RunConfig::eval_mode, {"auto", "mean", "stochastic"}));
    v.push_back({"eval", "grid", [](const RunConfig& c) { return c.eval_grid; },
                 [](RunConfig& c, const std::string& s) { c.eval_grid = s; }});
    return v;
  }();
  return f;
}

#undef DOUBLE
#undef INT

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + section + "." + key + "'");
}

void apply_env_defaults(RunConfig& cfg) {
  // Cliff costs reach the hundreds; the critic regresses in units of 10.
  cfg.train.value_scale = cfg.train.env.kind == env::EnvKind::CliffWalk ? 10.0 : 1.0;
}

std::string sha1_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

void set_field(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  find_field(section, key).set(cfg, value);
}

std::string get_field(const RunConfig& cfg, const std::string& section, const std::string& key) {
  return find_field(section, key).get(cfg);
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  auto& t = cfg.train;
  const ac::TrainConfig d;
  if (name != "none" && name != "full" && name != "desk") {
    throw ConfigError("unknown preset '" + name + "' (expected none, full or desk)");
  }
  t.n_epochs = d.n_epochs;
  t.n_epochs_v = d.n_epochs_v;
  t.batch_v = d.batch_v;
  t.n_epochs_pi = d.n_epochs_pi;
  t.batch_pi = d.batch_pi;
  t.n_episodes = d.n_episodes;
  t.n_transitions = d.n_transitions;
  t.critic_lr = d.critic_lr;
  t.actor_lr = d.actor_lr;
  t.std_floor = d.std_floor;
  if (name == "desk") {
    // Tuned per environment on one core; each run trains in a few minutes.
    switch (t.env.kind) {
      case env::EnvKind::StatArb:
        t.n_epochs = 2500;
        t.n_episodes = t.batch_v = t.batch_pi = 30;
        t.n_transitions = 400;
        t.critic_lr = t.actor_lr = 1e-3;
        // Exploration that survives to the end; evaluation uses the mean.
        t.std_floor = 0.2;
        break;
      case env::EnvKind::HestonHedge:
        t.n_epochs = 3000;
        t.n_episodes = t.batch_v = t.batch_pi = 30;
        t.n_transitions = 100;
        t.actor_lr = 3e-3;
        break;
      case env::EnvKind::CliffWalk:
        t.n_epochs = 1500;
        t.n_episodes = 100;
        t.batch_v = t.batch_pi = 64;
        t.n_transitions = 200;
        break;
    }
  }
  cfg.preset = name;
}

void finalize(RunConfig& cfg) {
  auto& r = cfg.train.risk;
  if (r.kind == risk::RiskKind::Expectation) {
    r.alpha = cfg.alpha.value_or(1.0);
    r.beta = cfg.beta.value_or(0.0);
  } else {
    if (!cfg.alpha) throw ConfigError("missing required field risk.alpha for risk '" + std::string(to_string(r.kind)) + "'");
    r.alpha = *cfg.alpha;
    if (r.kind == risk::RiskKind::PenalizedCVaR) {
      if (!cfg.beta) throw ConfigError("missing required field risk.beta for risk 'cvar-pen'");
      r.beta = *cfg.beta;
    } else {
      r.beta = cfg.beta.value_or(0.0);
    }
  }
  try {
    r.validate();
    cfg.train.validate();
    env::make_environment(cfg.train.env);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.eval_episodes < 0) throw ConfigError("eval.n_episodes must be >= 0");
  if (cfg.calibration_samples < 1) throw ConfigError("env.heston.calibration_samples must be >= 1");
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_ini(std::istream& in, const std::string& origin) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [section, body] : pt) {
    if (body.empty()) throw ConfigError(origin + ": key '" + section + "' outside of a section");
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

namespace {

void apply_entry(RunConfig& cfg, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError("configuration key '" + dotted + "' needs a section");
  set_field(cfg, dotted.substr(0, dot), dotted.substr(dot + 1), value);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  RunConfig cfg;
  for (const auto& [k, v] : parse_ini(in, "config")) apply_entry(cfg, k, v);
  return cfg;
}

std::string git_blob_sha1(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return sha1_hex(blob);
}

GridSpec parse_grid(const std::string& spec, const env::Environment& env) {
  GridSpec g;
  g.axes = env.default_grid();
  if (spec.empty()) return g;
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(item);
  if (parts.size() != g.axes.size()) {
    throw ConfigError("grid '" + spec + "' has " + std::to_string(parts.size()) + " axes, " +
                      std::string(env::to_string(env.kind())) + " needs " + std::to_string(g.axes.size()));
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ps(parts[i]);
    while (std::getline(ps, item, ':')) f.push_back(item);
    if (f.size() != 3) throw ConfigError("grid axis '" + parts[i] + "' must look like n:lo:hi");
    g.axes[i].n = parse_number<int>("grid", f[0]);
    g.axes[i].lo = parse_number<double>("grid", f[1]);
    g.axes[i].hi = parse_number<double>("grid", f[2]);
    if (g.axes[i].n < 1) throw ConfigError("grid axis '" + parts[i] + "' needs at least one point");
  }
  return g;
}

// Commands ------------------------------------------------------------------

namespace {

struct Options {
  std::string env, risk, config, out, preset, grid, checkpoint, dist, mode;
  double alpha = 0, beta = 0;
  std::uint64_t seed = 0;
  int threads = 0, n_episodes = 0, n_epochs = 0;
  std::vector<std::string> sets;
  std::map<std::string, bool> given;
  bool has(const std::string& k) const { return given.count(k) && given.at(k); }
};

RunConfig build_config(const Options& o, std::optional<RunConfig> base, const std::string& command) {
  std::vector<std::pair<std::string, std::string>> file;
  if (o.has("config")) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot read config file " + o.config);
    file = parse_ini(in, o.config);
  }
  auto file_value = [&](const std::string& k) -> std::optional<std::string> {
    std::optional<std::string> v;
    for (const auto& [fk, fv] : file) {
      if (fk == k) v = fv;
    }
    return v;
  };

  RunConfig cfg = base.value_or(RunConfig{});
  if (!base) {
    std::string env_name = o.has("env") ? o.env : file_value("env.name").value_or("statarb");
    cfg.train.env.kind = env::parse_env_kind(env_name);
    apply_env_defaults(cfg);
    apply_preset(cfg, o.has("preset") ? o.preset : file_value("train.preset").value_or("none"));
  } else if (o.has("preset")) {
    apply_preset(cfg, o.preset);
  }
  for (const auto& [k, v] : file) apply_entry(cfg, k, v);

  if (o.has("env")) cfg.train.env.kind = env::parse_env_kind(o.env);
  if (o.has("risk")) set_field(cfg, "risk", "kind", o.risk);
  if (o.has("alpha")) cfg.alpha = o.alpha;
  if (o.has("beta")) cfg.beta = o.beta;
  if (o.has("seed")) cfg.train.seed = o.seed;
  if (o.has("threads")) cfg.train.threads = o.threads;
  if (o.has("n-epochs")) cfg.train.n_epochs = o.n_epochs;
  if (o.has("n-episodes")) {
    if (command == "train") {
      cfg.train.n_episodes = o.n_episodes;
    } else {
      cfg.eval_episodes = o.n_episodes;
    }
  }
  if (o.has("grid")) cfg.eval_grid = o.grid;
  if (o.has("mode")) set_field(cfg, "eval", "mode", o.mode);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    apply_entry(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  finalize(cfg);
  return cfg;
}

std::string default_run_name(const RunConfig& cfg) {
  const auto& r = cfg.train.risk;
  std::string name = std::string(env::to_string(cfg.train.env.kind)) + "_" + std::string(risk::to_string(r.kind));
  if (r.kind != risk::RiskKind::Expectation) name += "_a" + format_double(r.alpha);
  if (r.kind == risk::RiskKind::PenalizedCVaR) name += "_b" + format_double(r.beta);
  return name + "_seed" + std::to_string(cfg.train.seed);
}

fs::path resolve_out(const Options& o, const RunConfig& cfg) {
  fs::path p = o.has("out") ? fs::path(o.out) : fs::path(default_run_name(cfg));
  if (p.is_absolute()) return p;
  const char* root = std::getenv("DYNRISK_OUT");
  return (root && *root) ? fs::path(root) / p : p;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("cannot write " + path.string());
    out_ << header << '\n';
  }
  template <class... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(values), first = false), ...);
    out_ << '\n';
  }
  void flush() { out_.flush(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& path, const RunConfig& cfg, const std::string& config_text,
                    const fs::path& out_dir, const std::vector<std::string>& files, bool complete,
                    const std::string& command, const std::string& error = {}) {
  json m = {{"command", command},
            {"complete", complete},
            {"config_sha1", git_blob_sha1(config_text)},
            {"seed", cfg.train.seed},
            {"output_dir", out_dir.string()},
            {"files", files},
            {"config", config_text}};
  if (!error.empty()) m["error"] = error;
  io::save_json(path, m);
}

json policy_meta(const RunConfig& cfg, const env::Environment& env) {
  return {{"env", std::string(env::to_string(env.kind()))},
          {"feature_dim", env.feature_dim()},
          {"risk", cfg.train.risk.describe()}};
}

int cmd_train(const Options& o) {
  RunConfig cfg = build_config(o, std::nullopt, "train");
  const fs::path dir = resolve_out(o, cfg);
  fs::create_directories(dir);
  const std::string config_text = serialize(cfg);
  std::vector<std::string> files;
  write_text(dir / "config.ini", config_text);
  files.push_back("config.ini");
  write_manifest(dir / "manifest.json", cfg, config_text, dir, files, false, "train");

  try {
    auto env = env::make_environment(cfg.train.env);
    CsvWriter log(dir / "train_log.csv", "epoch,mean_cost,risk_at_s0,critic_loss,grad_norm,wall_time_s");
    files.push_back("train_log.csv");
    auto st = ac::initial_state(cfg.train, *env);
    ac::train_from(st, cfg.train, *env, [&](const ac::TrainState& s) {
      const auto& r = s.log.back();
      log.row(r.epoch, r.mean_cost, r.risk_at_s0, r.critic_loss, r.grad_norm, r.wall_time_s);
      log.flush();
    });

    json meta = policy_meta(cfg, *env);
    if (auto* heston = dynamic_cast<env::HestonHedge*>(env.get())) {
      const env::ValueFunction value{&st.critic, cfg.train.value_scale};
      std::uint64_t call = 0;
      const auto risk_of_costs = [&] {
        Rng rng(cfg.train.seed, {0xca11, call++});
        return env::estimate_dynamic_risk_at_s0(*heston, st.policy, value, cfg.train.risk,
                                                cfg.calibration_samples, rng);
      };
      const auto cal = env::calibrate_b0(*heston, risk_of_costs, cfg.train.env.heston.risk_target);
      meta["b0"] = cal.b0;
      io::save_json(dir / "calibration.json", {{"black_scholes_guess", cal.guess},
                                               {"risk_at_guess", cal.risk_at_guess},
                                               {"b0", cal.b0},
                                               {"target", cfg.train.env.heston.risk_target},
                                               {"risk_at_b0", cal.risk_at_b0}});
      files.push_back("calibration.json");
    }
    io::save_json(dir / "policy.json", io::to_json(io::PolicyCheckpoint{st.policy, st.policy_opt, meta}));
    io::save_json(dir / "critic.json",
                  io::to_json(io::CriticCheckpoint{st.critic, st.critic_opt, cfg.train.value_scale,
                                                   policy_meta(cfg, *env)}));
    files.push_back("policy.json");
    files.push_back("critic.json");
    write_manifest(dir / "manifest.json", cfg, config_text, dir, files, true, "train");
    std::cout << json{{"output_dir", dir.string()},
                      {"epochs", st.log.size()},
                      {"risk_at_s0", st.log.empty() ? json(nullptr) : json(st.log.back().risk_at_s0)}}
                     .dump()
              << '\n';
  } catch (const std::exception& e) {
    write_manifest(dir / "manifest.json", cfg, config_text, dir, files, false, "train", e.what());
    throw;
  }
  return kOk;
}

int cmd_eval(const Options& o) {
  // The checkpoint's own configuration is the base; --config and flags refine it.
  Options probe = o;
  fs::path ckpt;
  std::optional<RunConfig> base;
  if (o.has("checkpoint")) {
    ckpt = o.checkpoint;
  } else {
    ckpt = resolve_out(probe, build_config(o, std::nullopt, "eval"));
  }
  if (fs::exists(ckpt / "config.ini")) {
    std::ifstream in(ckpt / "config.ini", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    base = parse_config(ss.str());
  }
  RunConfig cfg = build_config(o, base, "eval");
  const fs::path dir = o.has("out") || !o.has("checkpoint") ? resolve_out(o, cfg) : ckpt;

  auto pc = io::policy_from_json(io::load_json(ckpt / "policy.json"));
  auto cc = io::critic_from_json(io::load_json(ckpt / "critic.json"));
  const std::string trained_env = pc.meta.value("env", "");
  if (!trained_env.empty() && trained_env != env::to_string(cfg.train.env.kind)) {
    throw ConfigError("checkpoint was trained on '" + trained_env + "', not '" +
                      std::string(env::to_string(cfg.train.env.kind)) + "'");
  }
  if (pc.meta.contains("b0")) cfg.train.env.heston.b0 = pc.meta.at("b0").get<double>();
  const auto env = env::make_environment(cfg.train.env);
  if (pc.policy.feature_dim() != env->feature_dim() || cc.network.input_dim() != env->feature_dim()) {
    throw ConfigError("checkpoint feature dimension does not match environment '" +
                      std::string(env::to_string(env->kind())) + "'");
  }
  const int n = cfg.eval_episodes;
  if (n == 0) {
    std::cout << json{{"episodes", 0}}.dump() << '\n';
    return kOk;
  }
  const bool stochastic = cfg.eval_mode == "stochastic" ||
                          (cfg.eval_mode == "auto" && env->kind() == env::EnvKind::CliffWalk);
  const auto grid = parse_grid(cfg.eval_grid, *env);
  fs::create_directories(dir);
  std::vector<std::string> files;

  const auto rep = ac::evaluate_policy(pc.policy, *env, n, cfg.train.seed, stochastic, cfg.train.threads);
  {
    CsvWriter w(dir / "terminal_distribution.csv", "episode,terminal_value,total_cost");
    for (std::size_t i = 0; i < rep.size(); ++i) w.row(i, rep.terminal_values[i], rep.total_costs[i]);
    files.push_back("terminal_distribution.csv");
  }
  {
    CsvWriter w(dir / "quantiles.csv", "t,coordinate,q10,q50,q90");
    for (std::size_t t = 0; t < rep.tracked.size(); ++t) {
      w.row(t, env->tracked_name(), ac::quantile(rep.tracked[t], 0.1), ac::quantile(rep.tracked[t], 0.5),
            ac::quantile(rep.tracked[t], 0.9));
    }
    files.push_back("quantiles.csv");
  }
  if (const auto* heston = dynamic_cast<const env::HestonHedge*>(env.get())) {
    CsvWriter w(dir / "hedge_scatter.csv", "episode,S_T,bank_before_payoff,terminal_value");
    for (std::size_t i = 0; i < rep.size(); ++i) {
      w.row(i, rep.terminal_states[i].x[0], heston->bank_before_payoff(rep.terminal_states[i]),
            rep.terminal_values[i]);
    }
    files.push_back("hedge_scatter.csv");
  }
  {
    std::string axes;
    for (const auto& a : grid.axes) axes += "," + a.name;
    CsvWriter pw(dir / "policy_grid.csv", "t" + axes + ",mean,std");
    CsvWriter vw(dir / "value_grid.csv", "t" + axes + ",value");
    std::size_t count = 1;
    for (const auto& a : grid.axes) count *= static_cast<std::size_t>(a.n);
    const env::ValueFunction value{&cc.network, cc.value_scale};
    for (int t = 0; t < env->horizon(); ++t) {
      std::vector<env::EnvState> states;
      std::vector<std::vector<double>> coords;
      states.reserve(count);
      for (std::size_t idx = 0; idx < count; ++idx) {
        std::vector<double> c(grid.axes.size());
        std::size_t rest = idx;
        for (std::size_t k = grid.axes.size(); k-- > 0;) {
          const auto nk = static_cast<std::size_t>(grid.axes[k].n);
          c[k] = grid.axes[k].at(static_cast<int>(rest % nk));
          rest /= nk;
        }
        states.push_back(env->grid_state(t, c));
        coords.push_back(std::move(c));
      }
      nn::Matrix feats(env->feature_dim(), static_cast<Eigen::Index>(count));
      for (std::size_t k = 0; k < count; ++k) {
        env->features(states[k], std::span<double>(feats.col(static_cast<Eigen::Index>(k)).data(),
                                                   static_cast<std::size_t>(env->feature_dim())));
      }
      const auto m = pc.policy.moments(feats);
      const auto v = value.batch(*env, states);
      for (std::size_t k = 0; k < count; ++k) {
        std::string prefix = std::to_string(t);
        for (double c : coords[k]) prefix += "," + format_double(c);
        pw.row(prefix, m.mean(static_cast<Eigen::Index>(k)), m.std(static_cast<Eigen::Index>(k)));
        vw.row(prefix, v[k]);
      }
    }
    files.push_back("policy_grid.csv");
    files.push_back("value_grid.csv");
  }
  const std::string config_text = serialize(cfg);
  write_manifest(dir / "eval_manifest.json", cfg, config_text, dir, files, true, "eval");

  std::cout << json{{"output_dir", dir.string()},
                    {"episodes", n},
                    {"stochastic", stochastic},
                    {"terminal_q10", ac::quantile(rep.terminal_values, 0.1)},
                    {"terminal_q50", ac::quantile(rep.terminal_values, 0.5)},
                    {"terminal_q90", ac::quantile(rep.terminal_values, 0.9)}}
                   .dump()
            << '\n';
  return kOk;
}

risk::EmpiricalDistribution read_distribution(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read distribution file " + path);
  std::vector<double> z, w;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (lineno == 1 && line == "outcome,weight") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'outcome,weight', got '" + line + "'");
    }
    const std::string where = path + ":" + std::to_string(lineno);
    z.push_back(parse_number<double>(where + " outcome", line.substr(0, comma)));
    w.push_back(parse_number<double>(where + " weight", line.substr(comma + 1)));
    if (w.back() < 0) throw ConfigError(where + ": negative weight");
  }
  if (z.empty()) throw ConfigError(path + ": no outcomes");
  double total = 0.0;
  for (double x : w) total += x;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError(path + ": weights sum to " + format_double(total) + ", expected 1 within 1e-9");
  }
  for (double& x : w) x /= total;
  return risk::EmpiricalDistribution(std::move(z), std::move(w));
}

int cmd_risk_eval(const Options& o) {
  if (!o.has("dist")) throw ConfigError("risk-eval needs --dist FILE");
  RunConfig cfg = build_config(o, std::nullopt, "risk-eval");
  const auto dist = read_distribution(o.dist);
  const auto sp = risk::saddle_point(cfg.train.risk, dist);
  json out = {{"risk", cfg.train.risk.describe()},
              {"value", sp.value},
              {"saddle_point",
               {{"xi", sp.xi},
                {"lambda", sp.lambda},
                {"conjugate_value", sp.conjugate_value},
                {"conjugate_grad_weight", sp.conjugate_grad_weight}}}};
  std::cout << out.dump() << '\n';
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Risk-averse actor-critic for dynamic convex risk measures"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::pair<std::string, CLI::Option*>> tracked;

  auto common = [&](CLI::App* sub) {
    tracked.emplace_back("env", sub->add_option("--env", o.env, "statarb | heston | cliff"));
    tracked.emplace_back("risk", sub->add_option("--risk", o.risk, "mean | cvar | cvar-pen"));
    tracked.emplace_back("alpha", sub->add_option("--alpha", o.alpha, "CVaR level"));
    tracked.emplace_back("beta", sub->add_option("--beta", o.beta, "entropy penalty"));
    tracked.emplace_back("seed", sub->add_option("--seed", o.seed, "master seed"));
    tracked.emplace_back("config", sub->add_option("--config", o.config, "INI configuration file"));
    tracked.emplace_back("out", sub->add_option("--out", o.out, "output directory"));
    tracked.emplace_back("preset", sub->add_option("--preset", o.preset, "none | full | desk"));
    tracked.emplace_back("threads", sub->add_option("--threads", o.threads, "worker threads, 0 = all cores"));
    tracked.emplace_back("n-episodes", sub->add_option("--n-episodes", o.n_episodes, "episode count"));
    tracked.emplace_back("n-epochs", sub->add_option("--n-epochs", o.n_epochs, "outer training epochs"));
    tracked.emplace_back("grid", sub->add_option("--grid", o.grid, "state grid n:lo:hi,n:lo:hi"));
    sub->add_option("--set", o.sets, "override section.key=value")->take_all();
  };
  auto* train = app.add_subcommand("train", "train a policy and critic");
  common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a trained policy");
  common(eval);
  tracked.emplace_back("checkpoint", eval->add_option("--checkpoint", o.checkpoint, "training output directory"));
  tracked.emplace_back("mode", eval->add_option("--mode", o.mode, "auto | mean | stochastic"));
  auto* reval = app.add_subcommand("risk-eval", "evaluate a risk measure on a weighted sample");
  common(reval);
  tracked.emplace_back("dist", reval->add_option("--dist", o.dist, "CSV of outcome,weight"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  for (const auto& [name, opt] : tracked) {
    if (opt->count() > 0) o.given[name] = true;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    return cmd_risk_eval(o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("dynrisk");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dynrisk::cli
