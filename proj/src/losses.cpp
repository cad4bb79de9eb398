#include "agentpose/losses.hpp"

#include <cmath>
#include <cstdio>

#include "agentpose/error.hpp"
#include "agentpose/kernels.hpp"

namespace agentpose::losses {

using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;

double weight_decay_r(std::size_t epoch, std::size_t e_max) {
  if (epoch < 1 || epoch > e_max)
    throw InvalidArgument("weight_decay_r: need 1 <= E <= E_max, got E=" + std::to_string(epoch) +
                          " E_max=" + std::to_string(e_max));
  // Single rounding: R(1) = 1 and R(E_max) = 1/E_max exactly.
  return static_cast<double>(e_max - epoch + 1) / static_cast<double>(e_max);
}

void SimccLabels::validate(double tol) const {
  if (targets.ndim() != 4 || targets.dim(2) != 2) throw InvalidArgument("SimccLabels: targets must be B x K x 2 x L");
  if (weights.ndim() != 2 || weights.dim(0) != targets.dim(0) || weights.dim(1) != targets.dim(1))
    throw InvalidArgument("SimccLabels: weights must be B x K");
  const std::size_t l = targets.dim(3);
  for (std::size_t r = 0; r < targets.size() / l; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < l; ++j) s += targets[r * l + j];
    if (std::abs(s - 1.0) > tol) throw InvalidArgument("SimccLabels: target vector " + std::to_string(r) + " sums to " + std::to_string(s));
  }
  for (double w : weights.data())
    if (w < 0.0 || w > 1.0) throw InvalidArgument("SimccLabels: mask entries must lie in [0, 1]");
}

namespace {

// -1/(N K L) * sum(coef * log_softmax(logits)).
NdArray weighted_cross_entropy(const NdArray& logits, std::vector<double> coef) {
  const std::size_t n = logits.dim(0), k = logits.dim(1), l = logits.dim(3);
  const NdArray c = NdArray::from(logits.shape(), std::move(coef));
  return scale(sum(mul(log_softmax(logits), c)), -1.0 / static_cast<double>(n * k * l));
}

void require_simcc_shape(const NdArray& logits, const char* op) {
  if (logits.ndim() != 4 || logits.dim(2) != 2)
    throw InvalidArgument(std::string(op) + ": logits must be B x K x 2 x L, got " + shape_str(logits.shape()));
  if (logits.dim(3) < 2) throw InvalidArgument(std::string(op) + ": need at least 2 bins");
}

}  // namespace

NdArray simcc_task_loss(const NdArray& pred_logits, const SimccLabels& labels) {
  require_simcc_shape(pred_logits, "simcc_task_loss");
  if (pred_logits.shape() != labels.targets.shape())
    throw InvalidArgument("simcc_task_loss: logits " + shape_str(pred_logits.shape()) + " vs targets " +
                          shape_str(labels.targets.shape()));
  labels.validate();
  const std::size_t l = pred_logits.dim(3), per_kp = 2 * l;
  std::vector<double> coef(labels.targets.data().begin(), labels.targets.data().end());
  for (std::size_t i = 0; i < coef.size(); ++i) coef[i] *= labels.weights[i / per_kp];
  return weighted_cross_entropy(pred_logits, std::move(coef));
}

NdArray logit_distill_loss(const NdArray& student_logits, const NdArray& teacher_logits) {
  require_simcc_shape(student_logits, "logit_distill_loss");
  if (student_logits.shape() != teacher_logits.shape())
    throw InvalidArgument("logit_distill_loss: shape mismatch " + shape_str(student_logits.shape()) + " vs " +
                          shape_str(teacher_logits.shape()));
  const std::size_t l = teacher_logits.dim(3), rows = teacher_logits.size() / l;
  std::vector<double> p(teacher_logits.size());
  kernels::log_softmax_rows(rows, l, teacher_logits.data(), p);
  for (auto& v : p) v = std::exp(v);
  return weighted_cross_entropy(student_logits, std::move(p));
}

NdArray feature_distill_loss(const FeatureBatch& latent_teacher, const FeatureBatch& student_latent) {
  if (latent_teacher.origin() != FeatureOrigin::kLatentTeacher)
    throw InvalidArgument("feature_distill_loss: teacher side must be latent teacher features, got " +
                          to_string(latent_teacher.origin()));
  if (student_latent.origin() != FeatureOrigin::kDenoisedStudent && student_latent.origin() != FeatureOrigin::kStudent)
    throw InvalidArgument("feature_distill_loss: student side must be latent student features, got " +
                          to_string(student_latent.origin()));
  const auto& a = latent_teacher.values();
  const auto& b = student_latent.values();
  if (a.shape() != b.shape())
    throw InvalidArgument("feature_distill_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  // Per-sample norm / (C H W), then batch mean: one division by the element count.
  return scale(sum(square(sub(a.detach(), b))), 1.0 / static_cast<double>(a.size()));
}

std::string LossReport::csv_row(std::size_t epoch, std::size_t step) const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", epoch, step, task, rec, diff,
                fea, logit, r_of_e, total);
  return buf;
}

double compose_total(double task, double rec, double diff, double fea, double logit, double r) {
  return task + rec + diff + r * (fea + logit);
}

LossReport total_loss(const LossReport& parts, std::size_t epoch, std::size_t e_max) {
  for (double v : {parts.task, parts.rec, parts.diff, parts.fea, parts.logit})
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite loss term");
  LossReport out = parts;
  out.r_of_e = weight_decay_r(epoch, e_max);
  out.total = compose_total(out.task, out.rec, out.diff, out.fea, out.logit, out.r_of_e);
  return out;
}

std::pair<NdArray, LossReport> total_objective(const LossTerms& terms, std::size_t epoch, std::size_t e_max) {
  auto value = [](const NdArray& a) { return a.defined() ? a.item() : 0.0; };
  LossReport parts{value(terms.task), value(terms.rec), value(terms.diff), value(terms.fea), value(terms.logit)};
  LossReport report = total_loss(parts, epoch, e_max);

  auto acc = [](NdArray lhs, const NdArray& rhs) {
    if (!rhs.defined()) return lhs;
    return lhs.defined() ? add(lhs, rhs) : rhs;
  };
  NdArray distill;
  distill = acc(distill, terms.fea);
  distill = acc(distill, terms.logit);
  NdArray total;
  total = acc(total, terms.task);
  total = acc(total, terms.rec);
  total = acc(total, terms.diff);
  if (distill.defined()) total = acc(total, scale(distill, report.r_of_e));
  if (!total.defined()) total = NdArray::scalar(0.0);
  return {total, report};
}

}  // namespace agentpose::losses
