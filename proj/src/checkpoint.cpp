#include "dynrisk/checkpoint.hpp"

#include <fstream>
#include <string>
#include <vector>

#include "dynrisk/errors.hpp"

namespace dynrisk::io {

using nlohmann::json;

namespace {

json vec_to_json(const nn::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nn::Vector vec_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const nn::Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string head_name(nn::HeadKind k) {
  switch (k) {
    case nn::HeadKind::Identity:
      return "identity";
    case nn::HeadKind::BoundedMean:
      return "bounded_mean";
    case nn::HeadKind::SoftplusStd:
      return "softplus_std";
  }
  return "identity";
}

nn::HeadKind head_kind(const std::string& name) {
  if (name == "identity") return nn::HeadKind::Identity;
  if (name == "bounded_mean") return nn::HeadKind::BoundedMean;
  if (name == "softplus_std") return nn::HeadKind::SoftplusStd;
  throw ConfigError("checkpoint: unknown output head '" + name + "'");
}

void check_format(const json& j, const char* format) {
  if (!j.is_object() || j.value("format", "") != format) {
    throw ConfigError(std::string("checkpoint: expected format '") + format + "'");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + j.value("version", json()).dump());
  }
}

}  // namespace

json network_to_json(const nn::DenseNetwork& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weights(l);
    const auto b = net.bias(l);
    layers.push_back({{"shape", {w.rows(), w.cols()}},
                      {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"head", {{"kind", head_name(net.head().kind)}, {"param", net.head().param}}},
          {"layers", std::move(layers)}};
}

nn::DenseNetwork network_from_json(const json& j) {
  try {
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.empty()) throw ConfigError("checkpoint: network has no layers");
    std::vector<int> sizes;
    std::vector<double> flat;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto shape = layers[l].at("shape").get<std::vector<int>>();
      if (shape.size() != 2) throw ConfigError("checkpoint: layer shape must have two entries");
      if (l == 0) sizes.push_back(shape[1]);
      if (shape[1] != sizes.back()) throw ConfigError("checkpoint: layer shapes do not chain");
      sizes.push_back(shape[0]);
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(shape[0]) * shape[1] ||
          b.size() != static_cast<std::size_t>(shape[0])) {
        throw ConfigError("checkpoint: layer " + std::to_string(l) + " has wrong array sizes");
      }
      flat.insert(flat.end(), w.begin(), w.end());
      flat.insert(flat.end(), b.begin(), b.end());
    }
    const nn::OutputHead head{head_kind(j.at("head").at("kind").get<std::string>()),
                              j.at("head").at("param").get<double>()};
    nn::Vector params = Eigen::Map<const nn::Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    return nn::DenseNetwork(std::move(sizes), head, std::move(params));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed network: ") + e.what());
  }
}

json adam_to_json(const nn::AdamState& s) {
  return {{"step", s.step},       {"lr", s.lr},   {"beta1", s.beta1},
          {"beta2", s.beta2},     {"eps", s.eps}, {"first_moment", vec_to_json(s.first_moment)},
          {"second_moment", vec_to_json(s.second_moment)}};
}

nn::AdamState adam_from_json(const json& j) {
  try {
    nn::AdamState s;
    s.step = j.at("step").get<std::int64_t>();
    s.lr = j.at("lr").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    s.first_moment = vec_from_json(j.at("first_moment"));
    s.second_moment = vec_from_json(j.at("second_moment"));
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed optimizer state: ") + e.what());
  }
}

json to_json(const CriticCheckpoint& c) {
  return {{"format", "dynrisk-critic"},
          {"version", kCheckpointVersion},
          {"network", network_to_json(c.network)},
          {"value_scale", c.value_scale},
          {"optimizer", adam_to_json(c.optimizer)},
          {"meta", c.meta}};
}

json to_json(const PolicyCheckpoint& c) {
  json std_part;
  if (c.policy.has_fixed_std()) {
    std_part = {{"fixed", c.policy.fixed_std()}};
  } else {
    std_part = {{"network", network_to_json(c.policy.std_net())}};
  }
  return {{"format", "dynrisk-policy"},
          {"version", kCheckpointVersion},
          {"mean_net", network_to_json(c.policy.mean_net())},
          {"std", std::move(std_part)},
          {"optimizer", adam_to_json(c.optimizer)},
          {"meta", c.meta}};
}

namespace {

// Anything a malformed document can trigger becomes a ConfigError.
template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed ") + what + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("checkpoint: invalid ") + what + ": " + e.what());
  }
}

CriticCheckpoint critic_from_json_unguarded(const json& j) {
  check_format(j, "dynrisk-critic");
  CriticCheckpoint c;
  c.network = network_from_json(j.at("network"));
  c.value_scale = j.value("value_scale", 1.0);
  c.optimizer = adam_from_json(j.at("optimizer"));
  c.meta = j.value("meta", json::object());
  if (c.optimizer.first_moment.size() != c.network.num_parameters()) {
    throw ConfigError("checkpoint: critic optimizer state does not match the network");
  }
  return c;
}

PolicyCheckpoint policy_from_json_unguarded(const json& j) {
  check_format(j, "dynrisk-policy");
  PolicyCheckpoint c;
  try {
    auto mean_net = network_from_json(j.at("mean_net"));
    const auto& s = j.at("std");
    if (s.contains("fixed")) {
      c.policy = nn::GaussianPolicy(std::move(mean_net), s.at("fixed").get<double>());
    } else {
      c.policy = nn::GaussianPolicy(std::move(mean_net), network_from_json(s.at("network")));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed policy: ") + e.what());
  }
  c.optimizer = adam_from_json(j.at("optimizer"));
  c.meta = j.value("meta", json::object());
  if (c.optimizer.first_moment.size() != c.policy.num_parameters()) {
    throw ConfigError("checkpoint: policy optimizer state does not match the networks");
  }
  return c;
}

}  // namespace

CriticCheckpoint critic_from_json(const json& j) {
  return guarded("critic", [&] { return critic_from_json_unguarded(j); });
}

PolicyCheckpoint policy_from_json(const json& j) {
  return guarded("policy", [&] { return policy_from_json_unguarded(j); });
}

void save_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace dynrisk::io
