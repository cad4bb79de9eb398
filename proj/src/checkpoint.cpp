#include "agentpose/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

#include "agentpose/error.hpp"

namespace agentpose {

using nlohmann::json;

void Checkpoint::add(const std::string& prefix, const nn::ParameterSet& set) {
  for (const auto& name : set.names()) params[prefix + "." + name] = set.at(name).clone();
}

void Checkpoint::restore(const std::string& prefix, nn::ParameterSet& set) const {
  for (const auto& name : set.names()) {
    const std::string key = prefix + "." + name;
    auto it = params.find(key);
    if (it == params.end()) throw InvalidArgument("checkpoint has no parameter '" + key + "'");
    NdArray& dst = set.at(name);
    if (it->second.shape() != dst.shape())
      throw InvalidArgument("checkpoint parameter '" + key + "' has shape " + shape_str(it->second.shape()) +
                            ", model expects " + shape_str(dst.shape()));
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  }
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw InvalidArgument("checkpoint has no metadata '" + key + "'");
  return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json params = json::object();
  for (const auto& [name, arr] : ckpt.params)
    params[name] = {{"shape", arr.shape()}, {"data", std::vector<double>(arr.data().begin(), arr.data().end())}};
  const json j = {
      {"format", "agentpose-checkpoint"},
      {"version", 1},
      {"kind", ckpt.kind},
      {"config_hash", ckpt.config_hash},
      {"schedule",
       {{"n_steps", ckpt.schedule.n_steps},
        {"beta_min", ckpt.schedule.beta_min},
        {"beta_max", ckpt.schedule.beta_max},
        {"mode", ckpt.schedule.mode == vpsde::ScheduleMode::kDiscrete ? "discrete" : "continuous"}}},
      {"meta", ckpt.meta},
      {"params", params},
  };
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << j.dump(1) << "\n";
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  try {
    const json j = json::parse(is);
    if (j.at("format") != "agentpose-checkpoint") throw IoError("not a checkpoint: " + path.string());
    ckpt.kind = j.at("kind");
    ckpt.config_hash = j.at("config_hash");
    const auto& s = j.at("schedule");
    ckpt.schedule.n_steps = s.at("n_steps");
    ckpt.schedule.beta_min = s.at("beta_min");
    ckpt.schedule.beta_max = s.at("beta_max");
    ckpt.schedule.mode = s.at("mode") == "discrete" ? vpsde::ScheduleMode::kDiscrete : vpsde::ScheduleMode::kContinuous;
    ckpt.meta = j.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& [name, p] : j.at("params").items())
      ckpt.params[name] = NdArray::from(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace agentpose
