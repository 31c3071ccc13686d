#pragma once

// Versioned JSON checkpoints for networks, policies and their Adam state.
// Doubles are written in shortest round-trip form, so save/load is bitwise.

#include <json.hpp>

#include <filesystem>
#include <optional>

#include "dynrisk/neural.hpp"

namespace dynrisk::io {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json network_to_json(const nn::DenseNetwork& net);
nn::DenseNetwork network_from_json(const nlohmann::json& j);

nlohmann::json adam_to_json(const nn::AdamState& state);
nn::AdamState adam_from_json(const nlohmann::json& j);

struct CriticCheckpoint {
  nn::DenseNetwork network;
  nn::AdamState optimizer;
  double value_scale = 1.0;
  nlohmann::json meta = nlohmann::json::object();
};

struct PolicyCheckpoint {
  nn::GaussianPolicy policy;
  nn::AdamState optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json to_json(const CriticCheckpoint& c);
nlohmann::json to_json(const PolicyCheckpoint& c);
CriticCheckpoint critic_from_json(const nlohmann::json& j);
PolicyCheckpoint policy_from_json(const nlohmann::json& j);

void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace dynrisk::io
