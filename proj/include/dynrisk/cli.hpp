#pragma once

// Command-line front end: INI configuration, presets, run manifests and the
// train / eval / risk-eval commands.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynrisk/actor_critic.hpp"

namespace dynrisk::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfigError = 2, kNumericalError = 3 };

struct RunConfig {
  ac::TrainConfig train;
  std::optional<double> alpha;  // required for cvar and cvar-pen
  std::optional<double> beta;   // required for cvar-pen
  std::string preset = "none";
  int eval_episodes = 30000;
  std::string eval_mode = "auto";  // auto | mean | stochastic
  std::string eval_grid;           // empty: environment default
  int calibration_samples = 30000;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// "section.key" names of every configuration field, in file order.
std::vector<std::string> config_keys();

/// Sets one field from its textual value. ConfigError on unknown keys or
/// unparsable values.
void set_field(RunConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value);
std::string get_field(const RunConfig& cfg, const std::string& section, const std::string& key);

/// Applies a named preset ("none", "full", "desk") for the configured environment.
void apply_preset(RunConfig& cfg, const std::string& name);

/// Copies alpha/beta into the risk spec and validates everything.
/// ConfigError naming the missing field when alpha or beta is required but unset.
void finalize(RunConfig& cfg);

std::string serialize(const RunConfig& cfg);
/// Parses INI text into (section, key, value) triples, in file order.
std::vector<std::pair<std::string, std::string>> parse_ini(std::istream& in, const std::string& origin);
RunConfig parse_config(const std::string& text);

/// Git blob hash ("blob <len>\0" + content) in lowercase hex.
std::string git_blob_sha1(const std::string& content);

struct GridSpec {
  std::vector<env::GridAxis> axes;
};
/// "n:lo:hi,n:lo:hi"; axis count must match the environment's default grid.
GridSpec parse_grid(const std::string& spec, const env::Environment& env);

/// Shortest round-trip decimal form.
std::string format_double(double v);

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace dynrisk::cli
