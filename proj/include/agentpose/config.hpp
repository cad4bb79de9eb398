#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "agentpose/score_agent.hpp"
#include "agentpose/synthetic_pose.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose {

// plain: backbone -> head, task loss only.
// kd-only: adapters + autoencoder latent space, feature and logit distillation, no agent.
// agentpose: the full noisy-feature calibration path.
enum class Mode { kPlain, kKdOnly, kAgentPose };
// joint: agent and autoencoder train alongside the student.
// pretrain: both are fitted on teacher features first and then held fixed.
enum class AgentTraining { kJoint, kPretrain };

std::string to_string(Mode m);
std::string to_string(AgentTraining m);

struct ExperimentConfig {
  std::uint64_t seed = 0;

  struct Dataset {
    pose::DatasetConfig generator;
    std::uint64_t seed = 7;
    std::size_t bins = 32;
    double label_sigma = 1.0;
    std::string cache;  // optional dataset cache path
  } dataset;

  struct Model {
    std::string teacher_tier = "L";
    std::string student_tier = "T";
    std::size_t feature_size = 1;  // H = W of the feature map
  } model;

  vpsde::ScheduleParams schedule;

  struct Agent {
    double t_s = 0.4;
    std::size_t n_infer_steps = 5;
    std::size_t latent_dim = 16;
    std::size_t width = 16;
    std::size_t embed_dim = 16;
    agent::ScoreTarget target = agent::ScoreTarget::kConsistent;
    agent::DsmWeighting weighting = agent::DsmWeighting::kSigmaSquared;
    AgentTraining training = AgentTraining::kJoint;
    std::size_t pretrain_epochs = 200;
    bool stochastic = true;
  } agent;

  struct Teacher {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double lr = 1e-2;
    std::string checkpoint;  // default: <out>/teacher.ckpt.json
  } teacher;

  struct Distill {
    Mode mode = Mode::kAgentPose;
    std::size_t e_max = 60;
    std::size_t batch_size = 64;
    double lr_student = 1e-2;
    double lr_agent = 2e-3;
    double lr_autoencoder = 1e-2;
    double lr_floor = 1e-5;
    double weight_decay = 0.0;
    std::string checkpoint;  // default: <out>/student.ckpt.json
  } distill;

  struct Eval {
    std::vector<double> taus{0.05, 0.1, 0.2};
    std::size_t energy_samples = 1000;
  } eval;

  struct Sweep {
    std::string axis = "t_s";
    std::vector<double> values{0.2, 0.4, 0.6, 0.8};
    std::vector<std::uint64_t> seeds;  // empty: the run seed only
  } sweep;

  pose::PoseNetConfig teacher_net() const;
  pose::PoseNetConfig student_net() const;
};

/// Parses a config document; unknown keys and invalid values throw
/// ConfigError naming the field path.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Throws ConfigError for values outside their domains.
void validate(const ExperimentConfig& cfg);

/// Canonical TOML rendering of every field (round-trips through parse_config).
std::string to_toml(const ExperimentConfig& cfg);

/// FNV-1a 64 of the canonical rendering, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Applies a sweep axis value ("t_s", "latent_dim" or "infer_steps").
void apply_axis(ExperimentConfig& cfg, std::string_view axis, double value);

}  // namespace agentpose
