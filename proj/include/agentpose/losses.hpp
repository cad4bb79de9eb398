#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "agentpose/ndarray.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose::losses {

/// R(E) = 1 - (E - 1) / E_max, for 1 <= E <= E_max.
double weight_decay_r(std::size_t epoch, std::size_t e_max);

/// Soft per-axis bin targets (B x K x 2 x L) and per-keypoint mask (B x K).
struct SimccLabels {
  NdArray targets;
  NdArray weights;

  std::size_t batch() const { return targets.dim(0); }
  std::size_t keypoints() const { return targets.dim(1); }
  std::size_t bins() const { return targets.dim(3); }
  /// Throws InvalidArgument unless every target vector sums to 1 (within tol)
  /// and the mask lies in [0, 1].
  void validate(double tol = 1e-6) const;
};

/// -1/(N K L) sum_n sum_k W_nk sum_l V_l log P_l, per axis, axes summed.
NdArray simcc_task_loss(const NdArray& pred_logits, const SimccLabels& labels);

/// Same reduction with teacher softmax as targets and no mask. Teacher
/// logits never receive gradient.
NdArray logit_distill_loss(const NdArray& student_logits, const NdArray& teacher_logits);

/// ||F_tea_hat - F_stu_bar||^2 / (C H W), averaged over the batch. The
/// teacher side is detached here.
NdArray feature_distill_loss(const vpsde::FeatureBatch& latent_teacher, const vpsde::FeatureBatch& student_latent);

struct LossReport {
  double task = 0, rec = 0, diff = 0, fea = 0, logit = 0;
  double r_of_e = 1;
  double total = 0;

  static constexpr const char* kCsvHeader = "epoch,step,task,rec,diff,fea,logit,r_of_e,total";
  std::string csv_row(std::size_t epoch, std::size_t step) const;
};

/// Differentiable parts of the objective; undefined terms count as zero.
struct LossTerms {
  NdArray task, rec, diff, fea, logit;
};

/// total = task + rec + diff + R(E) (fea + logit), evaluated left to right.
double compose_total(double task, double rec, double diff, double fea, double logit, double r);

/// Numeric report for finished parts.
LossReport total_loss(const LossReport& parts, std::size_t epoch, std::size_t e_max);

/// Differentiable total plus its report.
std::pair<NdArray, LossReport> total_objective(const LossTerms& terms, std::size_t epoch, std::size_t e_max);

// Gradient routing: which objective term may update which parameter group.
enum class ParamGroup { kTeacher, kAutoencoder, kAgent, kStudent };
enum class Term { kTask, kRec, kDiff, kFea, kLogit };

inline constexpr std::array<std::array<bool, 4>, 5> kRouting = {{
    //            teacher  autoenc  agent  student
    /* task  */ {{false, false, false, true}},
    /* rec   */ {{false, true, false, false}},
    /* diff  */ {{false, false, true, false}},
    /* fea   */ {{false, false, false, true}},
    /* logit */ {{false, false, false, true}},
}};

constexpr bool routes(Term term, ParamGroup group) {
  return kRouting[static_cast<std::size_t>(term)][static_cast<std::size_t>(group)];
}

}  // namespace agentpose::losses
