#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "agentpose/ndarray.hpp"
#include "agentpose/nn.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose {

/// Self-describing parameter container: arrays keyed by parameter path plus
/// the noise-schedule metadata and free-form string metadata.
struct Checkpoint {
  std::string kind;  // "teacher" or "student"
  std::string config_hash;
  vpsde::ScheduleParams schedule;
  std::map<std::string, std::string> meta;
  std::map<std::string, NdArray> params;

  /// Adds every array of `set` under "<prefix>.<name>".
  void add(const std::string& prefix, const nn::ParameterSet& set);
  /// Copies the stored values into `set` (names under `prefix`); throws
  /// InvalidArgument on missing names or shape mismatches.
  void restore(const std::string& prefix, nn::ParameterSet& set) const;
  const std::string& meta_at(const std::string& key) const;
};

/// JSON file; doubles are written in shortest round-trip form.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IoError for missing or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace agentpose
