#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agentpose/autoencoder.hpp"
#include "agentpose/checkpoint.hpp"
#include "agentpose/config.hpp"
#include "agentpose/losses.hpp"
#include "agentpose/optim.hpp"
#include "agentpose/score_agent.hpp"
#include "agentpose/synthetic_pose.hpp"

namespace agentpose::pipeline {

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  losses::LossReport report;
};

/// Loads `dataset.cache` when it exists (it must match the config), otherwise
/// generates the dataset and writes the cache if a path is configured.
pose::Dataset acquire_dataset(const ExperimentConfig& cfg);

/// Student network plus whatever the mode inserts between backbone and head.
/// Plain mode constructs neither adapters, autoencoder nor agent.
struct StudentModel {
  Mode mode = Mode::kPlain;
  pose::ToyPoseNet net;
  std::optional<ae::StudentAdapters> adapters;
  std::optional<ae::LinearAutoencoder> autoencoder;
  std::optional<agent::ScoreNetwork> agent;

  /// Student-side parameters: backbone, head and adapters.
  nn::ParameterSet student_parameters() const;
  std::size_t parameter_count() const;
};

StudentModel make_student(const ExperimentConfig& cfg, Rng& rng);

struct TeacherRun {
  pose::ToyPoseNet net;
  std::vector<MetricsRow> metrics;
};

/// Supervised training on the task loss alone.
TeacherRun train_teacher(const ExperimentConfig& cfg, const pose::Dataset& ds);

/// Which objective terms enter the total (all by default).
struct TermSwitches {
  bool task = true, rec = true, diff = true, fea = true, logit = true;
};

/// Joint student / autoencoder / agent training against a frozen teacher.
class Distiller {
 public:
  Distiller(const ExperimentConfig& cfg, const pose::ToyPoseNet& teacher, const pose::Dataset& ds);

  /// Objective of one step on the given training samples; no optimizer step.
  std::pair<NdArray, losses::LossReport> objective(std::span<const std::size_t> samples, std::size_t epoch,
                                                   const TermSwitches& terms = {});
  /// Runs all E_max epochs; returns one metrics row per optimizer step.
  std::vector<MetricsRow> run();

  StudentModel& model() { return model_; }
  const StudentModel& model() const { return model_; }

 private:
  void pretrain();

  ExperimentConfig cfg_;
  const pose::ToyPoseNet& teacher_;
  const pose::Dataset& ds_;
  vpsde::NoiseSchedule schedule_;
  StudentModel model_;
  NdArray teacher_features_;  // cached over the training split, in ds_.train order
  NdArray teacher_logits_;
  std::vector<std::size_t> train_pos_;  // sample index -> row in the caches
  Rng shuffle_rng_, dsm_rng_, noise_rng_;
  bool agent_frozen_ = false;
};

struct EvalReport {
  std::vector<std::pair<double, double>> pck;  // (tau, student PCK)
  std::vector<std::pair<double, double>> teacher_pck;
  std::optional<double> energy_pre;  // student latents vs teacher latents
  std::optional<double> energy_post;
  std::optional<double> rec_mse;  // autoencoder reconstruction MSE on validation teacher features
  double pck_at(double tau) const;
};

/// Validation PCK at each configured tau and latent feature distances.
EvalReport evaluate(const ExperimentConfig& cfg, const StudentModel& student, const pose::ToyPoseNet& teacher,
                    const pose::Dataset& ds);

/// Validation PCK of a bare network (no agent path).
std::vector<std::pair<double, double>> network_pck(const pose::ToyPoseNet& net, const pose::Dataset& ds,
                                                   std::span<const double> taus, std::size_t bins);

/// Multiply-accumulates of one inference forward pass per sample.
std::size_t inference_macs(const ExperimentConfig& cfg);

Checkpoint teacher_checkpoint(const ExperimentConfig& cfg, const pose::ToyPoseNet& net);
pose::ToyPoseNet teacher_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ckpt);
Checkpoint student_checkpoint(const ExperimentConfig& cfg, const StudentModel& model);
/// Architecture (mode, latent size, agent shape) comes from the checkpoint.
StudentModel student_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ckpt);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);

// Command runners behind the CLI. Each writes into `out` (created if needed).
void run_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_train_teacher(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_distill(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_eval(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Completed cells are persisted as they finish; the first failing cell
/// is rethrown after the partial report is written. A configured teacher
/// checkpoint is shared by every seed; otherwise one teacher is trained per seed.
void run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace agentpose::pipeline
