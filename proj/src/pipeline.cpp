#include "agentpose/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "agentpose/error.hpp"
#include "agentpose/metrics.hpp"

namespace agentpose::pipeline {

using nlohmann::json;
using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t {
  kStudentInit = 1,
  kAdapterInit,
  kAutoencoderInit,
  kAgentInit,
  kShuffle,
  kDsm,
  kNoise,
  kEval,
  kTeacherInit,
  kTeacherShuffle,
  kPretrain,
};

constexpr std::size_t kEvalBatch = 256;

agent::ScoreNetworkConfig agent_config(const ExperimentConfig& cfg) {
  return {.channels = cfg.agent.latent_dim, .width = cfg.agent.width, .embed_dim = cfg.agent.embed_dim};
}

NdArray stack_images(const pose::Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t g = ds.config.grid;
  std::vector<double> v;
  v.reserve(idx.size() * g * g);
  for (auto i : idx) v.insert(v.end(), ds.samples.at(i).image.begin(), ds.samples.at(i).image.end());
  return NdArray::from({idx.size(), 1, g, g}, std::move(v));
}

// Rows of `x` (leading axis) in the given order.
NdArray gather_rows(const NdArray& x, std::span<const std::size_t> rows) { return agent::gather_batch(x, rows); }

NdArray concat_rows(const std::vector<NdArray>& parts) {
  Shape shape = parts.front().shape();
  shape[0] = 0;
  std::vector<double> v;
  for (const auto& p : parts) {
    shape[0] += p.dim(0);
    v.insert(v.end(), p.data().begin(), p.data().end());
  }
  return NdArray::from(std::move(shape), std::move(v));
}

void ensure_dir(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json pck_json(const std::vector<std::pair<double, double>>& pck) {
  json j = json::object();
  for (const auto& [tau, v] : pck) {
    char key[32];
    std::snprintf(key, sizeof key, "%g", tau);
    j[key] = v;
  }
  return j;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_json(const losses::LossReport& r) {
  return {{"task", r.task}, {"rec", r.rec},       {"diff", r.diff}, {"fea", r.fea},
          {"logit", r.logit}, {"r_of_e", r.r_of_e}, {"total", r.total}};
}

json eval_json(const EvalReport& e) {
  return {{"pck", pck_json(e.pck)},
          {"teacher_pck", pck_json(e.teacher_pck)},
          {"energy_distance_pre", optional_json(e.energy_pre)},
          {"energy_distance_post", optional_json(e.energy_post)},
          {"reconstruction_mse", optional_json(e.rec_mse)}};
}

json summary_base(const std::string& command, const ExperimentConfig& cfg) {
  return {{"command", command},
          {"config_hash", config_hash(cfg)},
          {"seed", cfg.seed},
          {"metrics_schema", 1}};
}

std::filesystem::path teacher_path(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  return cfg.teacher.checkpoint.empty() ? out / "teacher.ckpt.json" : std::filesystem::path(cfg.teacher.checkpoint);
}

std::filesystem::path student_path(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  return cfg.distill.checkpoint.empty() ? out / "student.ckpt.json" : std::filesystem::path(cfg.distill.checkpoint);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t linear_macs(std::size_t in, std::size_t out) { return in * out; }

}  // namespace

// ---- dataset ----------------------------------------------------------------

pose::Dataset acquire_dataset(const ExperimentConfig& cfg) {
  const auto& path = cfg.dataset.cache;
  if (!path.empty() && std::filesystem::exists(path)) {
    pose::Dataset ds = pose::load_dataset(path);
    if (!(ds.config == cfg.dataset.generator) || ds.seed != cfg.dataset.seed)
      throw ConfigError("dataset.cache", "cache " + path + " was generated from a different dataset config");
    return ds;
  }
  pose::Dataset ds = pose::generate_dataset(cfg.dataset.generator, cfg.dataset.seed);
  if (!path.empty()) pose::save_dataset(ds, path);
  return ds;
}

// ---- models -------------------------------------------------------------------

nn::ParameterSet StudentModel::student_parameters() const {
  nn::ParameterSet set;
  for (const auto& name : net.parameters().names()) set.add(name, net.parameters().at(name));
  if (adapters) {
    auto copy = *adapters;
    copy.register_in(set);
  }
  return set;
}

std::size_t StudentModel::parameter_count() const {
  std::size_t n = student_parameters().count();
  if (autoencoder) n += autoencoder->parameters().count();
  if (agent) n += agent->parameters().count();
  return n;
}

StudentModel make_student(const ExperimentConfig& cfg, Rng& rng) {
  Rng init = rng.split(kStudentInit);
  StudentModel m{cfg.distill.mode, pose::ToyPoseNet(cfg.student_net(), init), {}, {}, {}};
  if (m.mode == Mode::kPlain) return m;
  const std::size_t c_stu = cfg.student_net().channels, c_tea = cfg.teacher_net().channels, d = cfg.agent.latent_dim;
  Rng ad = rng.split(kAdapterInit), ae_rng = rng.split(kAutoencoderInit);
  m.adapters = ae::StudentAdapters::orthogonal(c_stu, d, c_stu, ad);
  m.autoencoder = ae::LinearAutoencoder(c_tea, d, ae_rng);
  if (m.mode == Mode::kAgentPose) {
    Rng ag = rng.split(kAgentInit);
    m.agent = agent::ScoreNetwork(agent_config(cfg), ag);
  }
  return m;
}

// ---- teacher ------------------------------------------------------------------

TeacherRun train_teacher(const ExperimentConfig& cfg, const pose::Dataset& ds) {
  const Rng root(cfg.seed);
  Rng init = root.split(kTeacherInit), shuffle_rng = root.split(kTeacherShuffle);
  TeacherRun run{pose::ToyPoseNet(cfg.teacher_net(), init), {}};
  AdamW opt(run.net.parameters().arrays(), {.lr = cfg.teacher.lr});
  std::vector<std::size_t> order = ds.train;
  const std::size_t b = cfg.teacher.batch_size;
  const std::size_t steps_per_epoch = (order.size() + b - 1) / b;
  const std::size_t total = steps_per_epoch * cfg.teacher.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.teacher.epochs; ++epoch) {
    agent::shuffle(order, shuffle_rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto idx = std::span(order).subspan(s * b, std::min(b, order.size() - s * b));
      const pose::Batch batch = pose::make_batch(ds, idx, cfg.dataset.bins, cfg.dataset.label_sigma);
      const NdArray logits = run.net.head(run.net.features(batch.images));
      losses::LossTerms terms;
      terms.task = losses::simcc_task_loss(logits, batch.labels);
      auto [loss, report] = losses::total_objective(terms, epoch, cfg.teacher.epochs);
      opt.set_lr(cosine_lr(cfg.teacher.lr, cfg.distill.lr_floor, step, total));
      backward(loss);
      opt.step();
      run.metrics.push_back({epoch, step, report});
    }
  }
  return run;
}

// ---- distillation -----------------------------------------------------------

Distiller::Distiller(const ExperimentConfig& cfg, const pose::ToyPoseNet& teacher, const pose::Dataset& ds)
    : cfg_(cfg),
      teacher_(teacher),
      ds_(ds),
      schedule_(cfg.schedule),
      model_([&] {
        Rng root(cfg.seed);
        return make_student(cfg, root);
      }()),
      shuffle_rng_(Rng(cfg.seed).split(kShuffle)),
      dsm_rng_(Rng(cfg.seed).split(kDsm)),
      noise_rng_(Rng(cfg.seed).split(kNoise)) {
  const auto tc = teacher.config();
  const auto sc = cfg.teacher_net();
  if (tc.grid != ds.config.grid || tc.keypoints != ds.config.keypoints || tc.bins != cfg.dataset.bins)
    throw InvalidArgument("teacher network does not match the dataset (grid/keypoints/bins)");
  if (tc.feat_h != sc.feat_h || tc.feat_w != sc.feat_w || tc.channels != sc.channels)
    throw InvalidArgument("teacher feature map does not match the configured teacher tier");
  if (ds.train.empty()) throw InvalidArgument("dataset has no training samples");

  // The teacher is frozen: its features and logits are constants of the run.
  std::vector<NdArray> feats, logits;
  for (std::size_t first = 0; first < ds.train.size(); first += kEvalBatch) {
    const auto idx = std::span(ds.train).subspan(first, std::min(kEvalBatch, ds.train.size() - first));
    const NdArray f = teacher.features(stack_images(ds, idx), true).detach();
    feats.push_back(f);
    logits.push_back(teacher.head(f, true).detach());
  }
  teacher_features_ = concat_rows(feats);
  teacher_logits_ = concat_rows(logits);
  train_pos_.assign(ds.samples.size(), 0);
  for (std::size_t r = 0; r < ds.train.size(); ++r) train_pos_[ds.train[r]] = r;

  if (model_.mode != Mode::kPlain && cfg.agent.training == AgentTraining::kPretrain) pretrain();
}

void Distiller::pretrain() {
  // Autoencoder first, then the agent on the (fixed) latent teacher features.
  const FeatureBatch f_tea(teacher_features_, FeatureOrigin::kTeacher);
  Rng rng = Rng(cfg_.seed).split(kPretrain);
  auto& autoenc = *model_.autoencoder;
  AdamW opt(autoenc.parameters().arrays(), {.lr = cfg_.distill.lr_autoencoder});
  const std::size_t n = f_tea.batch(), b = cfg_.distill.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t steps_per_epoch = (n + b - 1) / b;
  const std::size_t total = steps_per_epoch * cfg_.agent.pretrain_epochs;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg_.agent.pretrain_epochs; ++e) {
    agent::shuffle(order, rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto idx = std::span(order).subspan(s * b, std::min(b, n - s * b));
      const FeatureBatch x(gather_rows(teacher_features_, idx), FeatureOrigin::kTeacher);
      opt.set_lr(cosine_lr(cfg_.distill.lr_autoencoder, cfg_.distill.lr_floor, step, total));
      backward(ae::rec_loss(x, ae::decode(autoenc, ae::encode(autoenc, x))));
      opt.step();
    }
  }
  if (model_.agent) {
    const FeatureBatch latents = ae::detached(ae::encode(autoenc, f_tea));
    agent::AgentTrainConfig acfg{.net = agent_config(cfg_),
                                 .dsm = {.target = cfg_.agent.target, .weighting = cfg_.agent.weighting},
                                 .epochs = cfg_.agent.pretrain_epochs,
                                 .batch_size = cfg_.distill.batch_size,
                                 .lr = cfg_.distill.lr_agent,
                                 .lr_floor = cfg_.distill.lr_floor,
                                 .seed = rng.next_u64()};
    model_.agent->parameters().assign_values(agent::train_agent(latents, schedule_, acfg).net.parameters());
  }
  agent_frozen_ = true;
}

std::pair<NdArray, losses::LossReport> Distiller::objective(std::span<const std::size_t> samples, std::size_t epoch,
                                                            const TermSwitches& on) {
  const pose::Batch batch = pose::make_batch(ds_, samples, cfg_.dataset.bins, cfg_.dataset.label_sigma);
  std::vector<std::size_t> rows;
  rows.reserve(samples.size());
  for (auto i : samples) rows.push_back(train_pos_.at(i));

  losses::LossTerms terms;
  if (model_.mode == Mode::kPlain) {
    const NdArray logits = model_.net.head(model_.net.features(batch.images));
    if (on.task) terms.task = losses::simcc_task_loss(logits, batch.labels);
    return losses::total_objective(terms, epoch, cfg_.distill.e_max);
  }

  const FeatureBatch f_tea(gather_rows(teacher_features_, rows), FeatureOrigin::kTeacher);
  const NdArray logits_tea = gather_rows(teacher_logits_, rows);
  const auto& autoenc = *model_.autoencoder;
  const FeatureBatch latent = ae::encode(autoenc, f_tea);
  if (on.rec && !agent_frozen_) terms.rec = ae::rec_loss(f_tea, ae::decode(autoenc, latent));
  if (on.diff && model_.agent && !agent_frozen_)
    terms.diff = agent::dsm_loss(*model_.agent, ae::detached(latent), schedule_, dsm_rng_,
                                 {.target = cfg_.agent.target, .weighting = cfg_.agent.weighting});

  std::optional<vpsde::ScoreFn> score;
  if (model_.agent) score = agent::make_score_fn(*model_.agent, cfg_.agent.target, schedule_, true);
  const pose::AgentBundle bundle{.adapters = &*model_.adapters,
                                 .score = score ? &*score : nullptr,
                                 .schedule = &schedule_,
                                 .t_s = cfg_.agent.t_s,
                                 .steps = cfg_.agent.n_infer_steps,
                                 .rng = &noise_rng_,
                                 .calibrate = {.stochastic = cfg_.agent.stochastic}};
  const pose::PoseOutput out = pose::forward_pose(model_.net, batch.images, &bundle);
  if (on.task) terms.task = losses::simcc_task_loss(out.logits, batch.labels);
  if (on.logit) terms.logit = losses::logit_distill_loss(out.logits, logits_tea);
  if (on.fea) terms.fea = losses::feature_distill_loss(ae::detached(latent), *out.post);
  return losses::total_objective(terms, epoch, cfg_.distill.e_max);
}

std::vector<MetricsRow> Distiller::run() {
  const double lr_s = cfg_.distill.lr_student, lr_a = cfg_.distill.lr_agent, lr_ae = cfg_.distill.lr_autoencoder;
  const double wd = cfg_.distill.weight_decay, floor = cfg_.distill.lr_floor;
  AdamW opt_student(model_.student_parameters().arrays(), {.lr = lr_s, .weight_decay = wd});
  std::optional<AdamW> opt_agent, opt_ae;
  if (model_.agent && !agent_frozen_) opt_agent.emplace(model_.agent->parameters().arrays(), AdamWConfig{.lr = lr_a});
  if (model_.autoencoder && !agent_frozen_)
    opt_ae.emplace(model_.autoencoder->parameters().arrays(), AdamWConfig{.lr = lr_ae});

  std::vector<std::size_t> order = ds_.train;
  const std::size_t b = cfg_.distill.batch_size;
  const std::size_t steps_per_epoch = (order.size() + b - 1) / b;
  const std::size_t total = steps_per_epoch * cfg_.distill.e_max;
  std::vector<MetricsRow> rows;
  rows.reserve(total);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg_.distill.e_max; ++epoch) {
    agent::shuffle(order, shuffle_rng_);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto idx = std::span(order).subspan(s * b, std::min(b, order.size() - s * b));
      auto [loss, report] = objective(idx, epoch, {});
      backward(loss);
      opt_student.set_lr(cosine_lr(lr_s, floor, step, total));
      opt_student.step();
      if (opt_agent) {
        opt_agent->set_lr(cosine_lr(lr_a, floor, step, total));
        opt_agent->step();
      }
      if (opt_ae) {
        opt_ae->set_lr(cosine_lr(lr_ae, floor, step, total));
        opt_ae->step();
      }
      rows.push_back({epoch, step, report});
    }
  }
  return rows;
}

// ---- evaluation -------------------------------------------------------------

double EvalReport::pck_at(double tau) const {
  for (const auto& [t, v] : pck)
    if (t == tau) return v;
  throw InvalidArgument("no PCK recorded at tau " + std::to_string(tau));
}

namespace {

std::vector<std::pair<double, double>> pck_from_logits(const NdArray& logits, const pose::Dataset& ds,
                                                       std::span<const double> taus) {
  const auto pred = pose::decode_simcc(logits, ds.config.grid);
  std::vector<pose::Point> gt;
  std::vector<std::uint8_t> vis;
  for (auto i : ds.val) {
    gt.insert(gt.end(), ds.samples[i].keypoints.begin(), ds.samples[i].keypoints.end());
    vis.insert(vis.end(), ds.samples[i].visible.begin(), ds.samples[i].visible.end());
  }
  std::vector<std::pair<double, double>> out;
  for (double tau : taus) out.emplace_back(tau, pose::pck(pred, gt, vis, tau, ds.config.grid));
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> network_pck(const pose::ToyPoseNet& net, const pose::Dataset& ds,
                                                   std::span<const double> taus, std::size_t /*bins*/) {
  std::vector<NdArray> logits;
  for (std::size_t first = 0; first < ds.val.size(); first += kEvalBatch) {
    const auto idx = std::span(ds.val).subspan(first, std::min(kEvalBatch, ds.val.size() - first));
    logits.push_back(net.head(net.features(stack_images(ds, idx), true), true).detach());
  }
  return pck_from_logits(concat_rows(logits), ds, taus);
}

EvalReport evaluate(const ExperimentConfig& cfg, const StudentModel& student, const pose::ToyPoseNet& teacher,
                    const pose::Dataset& ds) {
  if (ds.val.empty()) throw InvalidArgument("dataset has no validation samples");
  const vpsde::NoiseSchedule schedule(cfg.schedule);
  Rng rng = Rng(cfg.seed).split(kEval);
  std::optional<vpsde::ScoreFn> score;
  if (student.agent) score = agent::make_score_fn(*student.agent, cfg.agent.target, schedule, true);
  std::optional<pose::AgentBundle> bundle;
  if (student.adapters)
    bundle = pose::AgentBundle{.adapters = &*student.adapters,
                               .score = score ? &*score : nullptr,
                               .schedule = &schedule,
                               .t_s = cfg.agent.t_s,
                               .steps = cfg.agent.n_infer_steps,
                               .rng = &rng,
                               .calibrate = {.stochastic = cfg.agent.stochastic}};

  std::vector<NdArray> logits, pre, post, tea;
  for (std::size_t first = 0; first < ds.val.size(); first += kEvalBatch) {
    const auto idx = std::span(ds.val).subspan(first, std::min(kEvalBatch, ds.val.size() - first));
    const NdArray images = stack_images(ds, idx);
    const pose::PoseOutput out = pose::forward_pose(student.net, images, bundle ? &*bundle : nullptr);
    logits.push_back(out.logits.detach());
    if (student.autoencoder) {
      pre.push_back(out.pre->values().detach());
      post.push_back(out.post->values().detach());
      tea.push_back(teacher.features(images, true).detach());
    }
  }
  EvalReport report;
  report.pck = pck_from_logits(concat_rows(logits), ds, cfg.eval.taus);
  report.teacher_pck = network_pck(teacher, ds, cfg.eval.taus, cfg.dataset.bins);
  if (student.autoencoder) {
    const FeatureBatch f_tea(concat_rows(tea), FeatureOrigin::kTeacher);
    report.rec_mse = ae::reconstruction_mse(*student.autoencoder, f_tea);
    const std::size_t n = std::min(cfg.eval.energy_samples, ds.val.size());
    std::vector<std::size_t> first_n(n);
    std::iota(first_n.begin(), first_n.end(), std::size_t{0});
    const NdArray latent = gather_rows(ae::encode(*student.autoencoder, f_tea).values().detach(), first_n);
    report.energy_pre = metrics::energy_distance(gather_rows(concat_rows(pre), first_n), latent);
    report.energy_post = metrics::energy_distance(gather_rows(concat_rows(post), first_n), latent);
  }
  return report;
}

std::size_t inference_macs(const ExperimentConfig& cfg) {
  const pose::PoseNetConfig s = cfg.student_net();
  const std::size_t hw = s.feat_h * s.feat_w, pixels = s.grid * s.grid;
  std::size_t macs = 0, in = s.kernel * s.kernel;
  for (std::size_t d = 0; d < s.depth; ++d, in = s.width) macs += pixels * linear_macs(in, s.width);
  macs += linear_macs(2 * s.grid * s.width, s.channels * hw) + linear_macs(s.channels * hw, s.keypoints * 2 * s.bins);
  if (cfg.distill.mode == Mode::kPlain) return macs;
  const std::size_t d = cfg.agent.latent_dim;
  macs += hw * (linear_macs(s.channels, d) + linear_macs(d, s.channels));
  if (cfg.distill.mode == Mode::kKdOnly) return macs;
  const auto a = agent_config(cfg);
  const std::size_t bn = a.bottleneck();
  const std::size_t per_call = hw * (linear_macs(d, a.width) + linear_macs(a.width, d) +
                                     2 * (linear_macs(a.width, bn) + linear_macs(bn, bn) + linear_macs(bn, a.width) +
                                          linear_macs(a.embed_dim, bn)));
  return macs + cfg.agent.n_infer_steps * per_call;
}

// ---- checkpoints ------------------------------------------------------------

Checkpoint teacher_checkpoint(const ExperimentConfig& cfg, const pose::ToyPoseNet& net) {
  Checkpoint c{.kind = "teacher", .config_hash = config_hash(cfg), .schedule = cfg.schedule, .meta = {}, .params = {}};
  c.meta = {{"tier", cfg.model.teacher_tier},
            {"grid", std::to_string(cfg.dataset.generator.grid)},
            {"keypoints", std::to_string(cfg.dataset.generator.keypoints)},
            {"bins", std::to_string(cfg.dataset.bins)},
            {"feature_size", std::to_string(cfg.model.feature_size)},
            {"seed", std::to_string(cfg.seed)}};
  c.add("teacher", net.parameters());
  return c;
}

pose::ToyPoseNet teacher_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ckpt) {
  if (ckpt.kind != "teacher") throw InvalidArgument("expected a teacher checkpoint, got '" + ckpt.kind + "'");
  ExperimentConfig c = cfg;
  c.model.teacher_tier = ckpt.meta_at("tier");
  if (ckpt.meta_at("grid") != std::to_string(cfg.dataset.generator.grid) ||
      ckpt.meta_at("keypoints") != std::to_string(cfg.dataset.generator.keypoints) ||
      ckpt.meta_at("bins") != std::to_string(cfg.dataset.bins) ||
      ckpt.meta_at("feature_size") != std::to_string(cfg.model.feature_size))
    throw InvalidArgument("teacher checkpoint is incompatible with the dataset/model config");
  if (c.model.teacher_tier != cfg.model.teacher_tier)
    throw InvalidArgument("teacher checkpoint tier " + c.model.teacher_tier + " differs from model.teacher_tier " +
                          cfg.model.teacher_tier);
  Rng rng(0);
  pose::ToyPoseNet net(c.teacher_net(), rng);
  ckpt.restore("teacher", net.parameters());
  return net;
}

Checkpoint student_checkpoint(const ExperimentConfig& cfg, const StudentModel& model) {
  Checkpoint c{.kind = "student", .config_hash = config_hash(cfg), .schedule = cfg.schedule, .meta = {}, .params = {}};
  c.meta = {{"mode", to_string(model.mode)},
            {"tier", cfg.model.student_tier},
            {"latent_dim", std::to_string(cfg.agent.latent_dim)},
            {"agent_width", std::to_string(cfg.agent.width)},
            {"agent_embed_dim", std::to_string(cfg.agent.embed_dim)},
            {"score_target", cfg.agent.target == agent::ScoreTarget::kConsistent ? "consistent" : "paper-literal"},
            {"seed", std::to_string(cfg.seed)}};
  c.add("student", model.student_parameters());
  if (model.autoencoder) c.add("autoencoder", model.autoencoder->parameters());
  if (model.agent) c.add("agent", model.agent->parameters());
  return c;
}

StudentModel student_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ckpt) {
  if (ckpt.kind != "student") throw InvalidArgument("expected a student checkpoint, got '" + ckpt.kind + "'");
  ExperimentConfig c = cfg;
  const std::string& mode = ckpt.meta_at("mode");
  c.distill.mode = mode == "plain" ? Mode::kPlain : mode == "kd-only" ? Mode::kKdOnly : Mode::kAgentPose;
  c.model.student_tier = ckpt.meta_at("tier");
  c.agent.latent_dim = std::stoul(ckpt.meta_at("latent_dim"));
  c.agent.width = std::stoul(ckpt.meta_at("agent_width"));
  c.agent.embed_dim = std::stoul(ckpt.meta_at("agent_embed_dim"));
  Rng rng(0);
  StudentModel m = make_student(c, rng);
  auto set = m.student_parameters();
  ckpt.restore("student", set);
  if (m.autoencoder) ckpt.restore("autoencoder", m.autoencoder->parameters());
  if (m.agent) ckpt.restore("agent", m.agent->parameters());
  return m;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::string text = std::string(losses::LossReport::kCsvHeader) + "\n";
  for (const auto& r : rows) text += r.report.csv_row(r.epoch, r.step) + "\n";
  write_text(path, text);
}

// ---- commands ---------------------------------------------------------------

void run_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  ensure_dir(out);
  const pose::Dataset ds = acquire_dataset(cfg);
  pose::save_dataset(ds, out / "dataset.bin");
  json s = summary_base("gen-data", cfg);
  s["dataset"] = {{"samples", ds.samples.size()}, {"train", ds.train.size()}, {"val", ds.val.size()},
                  {"seed", ds.seed}, {"file", "dataset.bin"}};
  write_json(out / "summary.json", s);
}

void run_train_teacher(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  ensure_dir(out);
  const auto t0 = std::chrono::steady_clock::now();
  const pose::Dataset ds = acquire_dataset(cfg);
  const TeacherRun run = train_teacher(cfg, ds);
  save_checkpoint(teacher_checkpoint(cfg, run.net), teacher_path(cfg, out));
  write_metrics_csv(out / "metrics.csv", run.metrics);
  json s = summary_base("train-teacher", cfg);
  s["teacher_pck"] = pck_json(network_pck(run.net, ds, cfg.eval.taus, cfg.dataset.bins));
  s["final"] = report_json(run.metrics.back().report);
  s["parameters"] = run.net.parameters().count();
  write_json(out / "summary.json", s);
  write_json(out / "timing.json", {{"wall_clock_s", seconds_since(t0)}});
}

void run_distill(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  ensure_dir(out);
  const auto t0 = std::chrono::steady_clock::now();
  const pose::Dataset ds = acquire_dataset(cfg);
  const pose::ToyPoseNet teacher = teacher_from_checkpoint(cfg, load_checkpoint(teacher_path(cfg, out)));
  Distiller distiller(cfg, teacher, ds);
  const auto rows = distiller.run();
  save_checkpoint(student_checkpoint(cfg, distiller.model()), student_path(cfg, out));
  write_metrics_csv(out / "metrics.csv", rows);
  json s = summary_base("distill", cfg);
  s["mode"] = to_string(cfg.distill.mode);
  s["final"] = report_json(rows.back().report);
  s["eval"] = eval_json(evaluate(cfg, distiller.model(), teacher, ds));
  s["parameters"] = distiller.model().parameter_count();
  write_json(out / "summary.json", s);
  write_json(out / "timing.json", {{"wall_clock_s", seconds_since(t0)}});
}

void run_eval(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  ensure_dir(out);
  const auto t0 = std::chrono::steady_clock::now();
  const pose::Dataset ds = acquire_dataset(cfg);
  const pose::ToyPoseNet teacher = teacher_from_checkpoint(cfg, load_checkpoint(teacher_path(cfg, out)));
  const StudentModel student = student_from_checkpoint(cfg, load_checkpoint(student_path(cfg, out)));
  json s = summary_base("eval", cfg);
  s["mode"] = to_string(student.mode);
  s["eval"] = eval_json(evaluate(cfg, student, teacher, ds));
  write_json(out / "summary.json", s);
  write_json(out / "timing.json", {{"wall_clock_s", seconds_since(t0)}});
}

void run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  ensure_dir(out);
  const pose::Dataset ds = acquire_dataset(cfg);
  const std::vector<std::uint64_t> seeds = cfg.sweep.seeds.empty() ? std::vector{cfg.seed} : cfg.sweep.seeds;
  const double main_tau = 0.1;

  std::string cells = "axis,value,seed,pck_0.05,pck_0.1,pck_0.2,energy_pre,energy_post,rec_mse,cost_macs\n";
  const auto cells_path = out / "sweep_cells.csv";
  write_text(cells_path, cells);
  struct Cell {
    double value;
    double pck;
    std::optional<double> energy_post, rec_mse;
  };
  std::vector<Cell> done;
  std::exception_ptr failure;
  std::string failed_cell;
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };

  for (std::uint64_t seed : seeds) {
    if (failure) break;
    ExperimentConfig base = cfg;
    base.seed = seed;
    std::optional<pose::ToyPoseNet> teacher;
    for (double value : cfg.sweep.values) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%g_seed%llu", cfg.sweep.axis.c_str(), value,
                    static_cast<unsigned long long>(seed));
      try {
        if (!teacher)
          teacher = cfg.teacher.checkpoint.empty() ? train_teacher(base, ds).net
                                                   : teacher_from_checkpoint(base, load_checkpoint(cfg.teacher.checkpoint));
        ExperimentConfig cell = base;
        apply_axis(cell, cfg.sweep.axis, value);
        validate(cell);
        Distiller distiller(cell, *teacher, ds);
        const auto rows = distiller.run();
        const EvalReport rep = evaluate(cell, distiller.model(), *teacher, ds);
        ensure_dir(out / "cells" / name);
        write_metrics_csv(out / "cells" / name / "metrics.csv", rows);
        std::optional<double> p05, p10, p20;
        for (const auto& [tau, v] : rep.pck) {
          if (tau == 0.05) p05 = v;
          if (tau == 0.1) p10 = v;
          if (tau == 0.2) p20 = v;
        }
        char value_str[40];
        std::snprintf(value_str, sizeof value_str, "%.17g", value);
        cells += cfg.sweep.axis + "," + value_str + "," + std::to_string(seed) + "," + fmt(p05) + "," + fmt(p10) +
                 "," + fmt(p20) + "," + fmt(rep.energy_pre) + "," + fmt(rep.energy_post) + "," + fmt(rep.rec_mse) +
                 "," + std::to_string(inference_macs(cell)) + "\n";
        write_text(cells_path, cells);
        done.push_back({value, p10 ? *p10 : rep.pck.front().second, rep.energy_post, rep.rec_mse});
      } catch (...) {
        failure = std::current_exception();
        failed_cell = name;
        break;
      }
    }
  }

  // Aggregate per value over the completed seeds.
  std::string table = "value,seeds,mean_pck,std_pck,mean_energy_post,mean_rec_mse,cost_macs\n";
  json rows = json::array();
  for (double value : cfg.sweep.values) {
    std::vector<const Cell*> group;
    for (const auto& c : done)
      if (c.value == value) group.push_back(&c);
    if (group.empty()) continue;
    const double n = static_cast<double>(group.size());
    double mean = 0.0, var = 0.0;
    for (auto* c : group) mean += c->pck / n;
    for (auto* c : group) var += (c->pck - mean) * (c->pck - mean);
    const double sd = group.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    auto mean_of = [&](auto member) -> std::optional<double> {
      double m = 0.0;
      for (auto* c : group) {
        if (!(c->*member)) return std::nullopt;
        m += *(c->*member) / n;
      }
      return m;
    };
    ExperimentConfig cell = cfg;
    apply_axis(cell, cfg.sweep.axis, value);
    const auto e = mean_of(&Cell::energy_post), r = mean_of(&Cell::rec_mse);
    char value_str[40];
    std::snprintf(value_str, sizeof value_str, "%.17g", value);
    table += std::string(value_str) + "," + std::to_string(group.size()) + "," + fmt(mean) + "," + fmt(sd) + "," +
             fmt(e) + "," + fmt(r) + "," + std::to_string(inference_macs(cell)) + "\n";
    rows.push_back({{"value", value},
                    {"seeds", group.size()},
                    {"mean_pck", mean},
                    {"std_pck", sd},
                    {"mean_energy_post", optional_json(e)},
                    {"mean_rec_mse", optional_json(r)},
                    {"cost_macs", inference_macs(cell)}});
  }
  write_text(out / "sweep.csv", table);
  json s = summary_base("sweep", cfg);
  s["axis"] = cfg.sweep.axis;
  s["pck_tau"] = main_tau;
  s["rows"] = rows;
  s["complete"] = !failure;
  if (failure) s["failed_cell"] = failed_cell;
  write_json(out / "summary.json", s);
  if (failure) std::rethrow_exception(failure);
}

}  // namespace agentpose::pipeline
