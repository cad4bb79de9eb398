#include "agentpose/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "agentpose/error.hpp"
#include "agentpose/toml.hpp"

namespace agentpose {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kPlain: return "plain";
    case Mode::kKdOnly: return "kd-only";
    case Mode::kAgentPose: return "agentpose";
  }
  return "unknown";
}

std::string to_string(AgentTraining m) { return m == AgentTraining::kJoint ? "joint" : "pretrain"; }

namespace {

template <class E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> names;
};

const EnumNames<Mode> kModes{{{Mode::kPlain, "plain"}, {Mode::kKdOnly, "kd-only"}, {Mode::kAgentPose, "agentpose"}}};
const EnumNames<AgentTraining> kTrainings{{{AgentTraining::kJoint, "joint"}, {AgentTraining::kPretrain, "pretrain"}}};
const EnumNames<agent::ScoreTarget> kTargets{
    {{agent::ScoreTarget::kConsistent, "consistent"}, {agent::ScoreTarget::kPaperLiteral, "paper-literal"}}};
const EnumNames<agent::DsmWeighting> kWeightings{
    {{agent::DsmWeighting::kSigmaSquared, "sigma-squared"}, {agent::DsmWeighting::kNone, "none"}}};
const EnumNames<vpsde::ScheduleMode> kScheduleModes{
    {{vpsde::ScheduleMode::kDiscrete, "discrete"}, {vpsde::ScheduleMode::kContinuous, "continuous"}}};

// Every config field, in canonical order. The visitor sees (path, field).
template <class V>
void visit_fields(ExperimentConfig& c, V& v) {
  v("seed", c.seed);
  v("dataset.n", c.dataset.generator.n);
  v("dataset.keypoints", c.dataset.generator.keypoints);
  v("dataset.grid", c.dataset.generator.grid);
  v("dataset.blob_sigma", c.dataset.generator.blob_sigma);
  v("dataset.distractors", c.dataset.generator.distractors);
  v("dataset.distractor_amplitude", c.dataset.generator.distractor_amplitude);
  v("dataset.pixel_noise", c.dataset.generator.pixel_noise);
  v("dataset.p_invisible", c.dataset.generator.p_invisible);
  v("dataset.val_fraction", c.dataset.generator.val_fraction);
  v("dataset.seed", c.dataset.seed);
  v("dataset.bins", c.dataset.bins);
  v("dataset.label_sigma", c.dataset.label_sigma);
  v("dataset.cache", c.dataset.cache);
  v("model.teacher_tier", c.model.teacher_tier);
  v("model.student_tier", c.model.student_tier);
  v("model.feature_size", c.model.feature_size);
  v("schedule.n_steps", c.schedule.n_steps);
  v("schedule.beta_min", c.schedule.beta_min);
  v("schedule.beta_max", c.schedule.beta_max);
  v("schedule.mode", c.schedule.mode, kScheduleModes);
  v("agent.t_s", c.agent.t_s);
  v("agent.n_infer_steps", c.agent.n_infer_steps);
  v("agent.latent_dim", c.agent.latent_dim);
  v("agent.width", c.agent.width);
  v("agent.embed_dim", c.agent.embed_dim);
  v("agent.score_target", c.agent.target, kTargets);
  v("agent.dsm_weighting", c.agent.weighting, kWeightings);
  v("agent.training", c.agent.training, kTrainings);
  v("agent.pretrain_epochs", c.agent.pretrain_epochs);
  v("agent.stochastic", c.agent.stochastic);
  v("teacher.epochs", c.teacher.epochs);
  v("teacher.batch_size", c.teacher.batch_size);
  v("teacher.lr", c.teacher.lr);
  v("teacher.checkpoint", c.teacher.checkpoint);
  v("distill.mode", c.distill.mode, kModes);
  v("distill.e_max", c.distill.e_max);
  v("distill.batch_size", c.distill.batch_size);
  v("distill.lr_student", c.distill.lr_student);
  v("distill.lr_agent", c.distill.lr_agent);
  v("distill.lr_autoencoder", c.distill.lr_autoencoder);
  v("distill.lr_floor", c.distill.lr_floor);
  v("distill.weight_decay", c.distill.weight_decay);
  v("distill.checkpoint", c.distill.checkpoint);
  v("eval.taus", c.eval.taus);
  v("eval.energy_samples", c.eval.energy_samples);
  v("sweep.axis", c.sweep.axis);
  v("sweep.values", c.sweep.values);
  v("sweep.seeds", c.sweep.seeds);
}

class Reader {
 public:
  explicit Reader(const toml::Document& doc) : doc_(doc) {}

  void operator()(const std::string& path, bool& out) {
    if (const auto* v = find(path)) {
      if (!v->is_bool()) type_error(path, "a boolean", *v);
      out = std::get<bool>(v->data);
    }
  }
  void operator()(const std::string& path, std::string& out) {
    if (const auto* v = find(path)) {
      if (!v->is_string()) type_error(path, "a string", *v);
      out = std::get<std::string>(v->data);
    }
  }
  void operator()(const std::string& path, double& out) {
    if (const auto* v = find(path)) out = to_double(path, *v);
  }
  template <class U>
    requires std::is_unsigned_v<U>
  void operator()(const std::string& path, U& out) {
    if (const auto* v = find(path)) out = to_unsigned<U>(path, *v);
  }
  void operator()(const std::string& path, std::vector<double>& out) {
    if (const auto* v = find(path)) {
      if (!v->is_array()) type_error(path, "an array", *v);
      out.clear();
      for (const auto& item : std::get<toml::Array>(v->data)) out.push_back(to_double(path, item));
    }
  }
  void operator()(const std::string& path, std::vector<std::uint64_t>& out) {
    if (const auto* v = find(path)) {
      if (!v->is_array()) type_error(path, "an array", *v);
      out.clear();
      for (const auto& item : std::get<toml::Array>(v->data)) out.push_back(to_unsigned<std::uint64_t>(path, item));
    }
  }
  template <class E>
  void operator()(const std::string& path, E& out, const EnumNames<E>& names) {
    const auto* v = find(path);
    if (!v) return;
    if (!v->is_string()) type_error(path, "a string", *v);
    const auto& s = std::get<std::string>(v->data);
    std::string options;
    for (const auto& [e, name] : names.names) {
      if (name == s) {
        out = e;
        return;
      }
      options += (options.empty() ? "" : ", ") + name;
    }
    throw ConfigError(path, "unknown value \"" + s + "\" (expected one of " + options + ")");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : doc_.entries)
      if (!used_.count(key)) throw ConfigError(key, "unknown key (line " + std::to_string(value.line) + ")");
    std::set<std::string> sections;
    for (const auto& key : used_) sections.insert(key.substr(0, key.find('.')));
    for (const auto& t : doc_.tables)
      if (!sections.count(t) && !known_section(t)) throw ConfigError(t, "unknown table");
  }

 private:
  static bool known_section(const std::string& t) {
    static const std::set<std::string> kSections{"dataset", "model", "schedule", "agent",
                                                 "teacher", "distill", "eval",  "sweep"};
    return kSections.count(t) > 0;
  }
  const toml::Value* find(const std::string& path) {
    auto it = doc_.entries.find(path);
    if (it == doc_.entries.end()) return nullptr;
    used_.insert(path);
    return &it->second;
  }
  [[noreturn]] static void type_error(const std::string& path, const char* want, const toml::Value& v) {
    throw ConfigError(path, std::string("expected ") + want + ", got " + v.type_name());
  }
  static double to_double(const std::string& path, const toml::Value& v) {
    if (v.is_float()) return std::get<double>(v.data);
    if (v.is_int()) return static_cast<double>(std::get<std::int64_t>(v.data));
    type_error(path, "a number", v);
  }
  template <class U>
  static U to_unsigned(const std::string& path, const toml::Value& v) {
    if (!v.is_int()) type_error(path, "an integer", v);
    const auto i = std::get<std::int64_t>(v.data);
    if (i < 0) throw ConfigError(path, "must be non-negative");
    return static_cast<U>(i);
  }

  const toml::Document& doc_;
  std::set<std::string> used_;
};

class Writer {
 public:
  template <class T>
  void operator()(const std::string& path, T& value) {
    emit(path, toml::format(to_value(value)));
  }
  template <class E>
  void operator()(const std::string& path, E& value, const EnumNames<E>& names) {
    for (const auto& [e, name] : names.names)
      if (e == value) emit(path, toml::format(toml::Value{name}));
  }
  std::string str() const { return out_.str(); }

 private:
  static toml::Value to_value(bool v) { return {v}; }
  static toml::Value to_value(const std::string& v) { return {v}; }
  static toml::Value to_value(double v) { return {v}; }
  template <class U>
    requires std::is_unsigned_v<U>
  static toml::Value to_value(U v) {
    return {static_cast<std::int64_t>(v)};
  }
  template <class T>
  static toml::Value to_value(const std::vector<T>& v) {
    toml::Array a;
    for (const auto& x : v) a.push_back(to_value(x));
    return {a};
  }
  void emit(const std::string& path, const std::string& value) {
    const auto dot = path.find('.');
    const std::string table = dot == std::string::npos ? "" : path.substr(0, dot);
    if (table != table_) {
      out_ << "\n[" << table << "]\n";
      table_ = table;
    }
    out_ << path.substr(dot == std::string::npos ? 0 : dot + 1) << " = " << value << "\n";
  }
  std::ostringstream out_;
  std::string table_;
};

void require(bool ok, const char* field, const std::string& msg) {
  if (!ok) throw ConfigError(field, msg);
}

}  // namespace

pose::PoseNetConfig ExperimentConfig::teacher_net() const {
  pose::PoseNetConfig c = pose::tier_config(model.teacher_tier);
  c.keypoints = dataset.generator.keypoints;
  c.grid = dataset.generator.grid;
  c.bins = dataset.bins;
  c.feat_h = c.feat_w = model.feature_size;
  return c;
}

pose::PoseNetConfig ExperimentConfig::student_net() const {
  pose::PoseNetConfig c = pose::tier_config(model.student_tier);
  c.keypoints = dataset.generator.keypoints;
  c.grid = dataset.generator.grid;
  c.bins = dataset.bins;
  c.feat_h = c.feat_w = model.feature_size;
  return c;
}

void validate(const ExperimentConfig& c) {
  const auto& g = c.dataset.generator;
  require(g.n >= 2, "dataset.n", "need at least 2 samples");
  require(g.keypoints >= 1, "dataset.keypoints", "must be at least 1");
  require(g.grid >= 2, "dataset.grid", "must be at least 2");
  require(g.blob_sigma > 0.0, "dataset.blob_sigma", "must be positive");
  require(g.distractor_amplitude >= 0.0, "dataset.distractor_amplitude", "must be non-negative");
  require(g.pixel_noise >= 0.0, "dataset.pixel_noise", "must be non-negative");
  require(g.p_invisible >= 0.0 && g.p_invisible < 1.0, "dataset.p_invisible", "must lie in [0, 1)");
  require(g.val_fraction > 0.0 && g.val_fraction < 1.0, "dataset.val_fraction", "must lie in (0, 1)");
  require(c.dataset.bins >= g.grid, "dataset.bins", "must be at least dataset.grid");
  require(c.dataset.label_sigma >= 0.0, "dataset.label_sigma", "must be non-negative");
  require(pose::is_known_tier(c.model.teacher_tier), "model.teacher_tier",
          "unknown tier \"" + c.model.teacher_tier + "\" (expected T, S, M or L)");
  require(pose::is_known_tier(c.model.student_tier), "model.student_tier",
          "unknown tier \"" + c.model.student_tier + "\" (expected T, S, M or L)");
  require(c.model.feature_size >= 1, "model.feature_size", "must be at least 1");
  require(c.schedule.n_steps >= 2, "schedule.n_steps", "must be at least 2");
  require(c.schedule.beta_min > 0.0 && c.schedule.beta_min < 1.0, "schedule.beta_min", "must lie in (0, 1)");
  require(c.schedule.beta_max > c.schedule.beta_min && c.schedule.beta_max < 1.0, "schedule.beta_max",
          "must lie in (beta_min, 1)");
  require(c.agent.t_s > 0.0 && c.agent.t_s <= 1.0, "agent.t_s", "must lie in (0, 1]");
  require(c.agent.n_infer_steps >= 1, "agent.n_infer_steps", "must be at least 1");
  const std::size_t c_tea = pose::tier_config(c.model.teacher_tier).channels;
  require(c.agent.latent_dim >= 1 && c.agent.latent_dim <= c_tea, "agent.latent_dim",
          "must lie in [1, " + std::to_string(c_tea) + "] (teacher channels)");
  require(c.agent.width >= 1, "agent.width", "must be at least 1");
  require(c.agent.embed_dim >= 2 && c.agent.embed_dim % 2 == 0, "agent.embed_dim", "must be even and at least 2");
  require(c.teacher.epochs >= 1, "teacher.epochs", "must be at least 1");
  require(c.teacher.batch_size >= 1, "teacher.batch_size", "must be at least 1");
  require(c.teacher.lr > 0.0, "teacher.lr", "must be positive");
  require(c.distill.e_max >= 1, "distill.e_max", "must be at least 1");
  require(c.distill.batch_size >= 1, "distill.batch_size", "must be at least 1");
  require(c.distill.lr_student > 0.0, "distill.lr_student", "must be positive");
  require(c.distill.lr_agent > 0.0, "distill.lr_agent", "must be positive");
  require(c.distill.lr_autoencoder > 0.0, "distill.lr_autoencoder", "must be positive");
  require(c.distill.lr_floor >= 0.0, "distill.lr_floor", "must be non-negative");
  require(c.distill.weight_decay >= 0.0, "distill.weight_decay", "must be non-negative");
  require(!c.eval.taus.empty(), "eval.taus", "must not be empty");
  for (double t : c.eval.taus) require(t > 0.0, "eval.taus", "thresholds must be positive");
  require(c.eval.energy_samples >= 2, "eval.energy_samples", "must be at least 2");
  require(c.sweep.axis == "t_s" || c.sweep.axis == "latent_dim" || c.sweep.axis == "infer_steps", "sweep.axis",
          "unknown axis \"" + c.sweep.axis + "\" (expected t_s, latent_dim or infer_steps)");
  require(!c.sweep.values.empty(), "sweep.values", "must not be empty");
  for (double v : c.sweep.values) {
    ExperimentConfig probe = c;
    try {
      apply_axis(probe, c.sweep.axis, v);
    } catch (const ConfigError& e) {
      throw ConfigError("sweep.values", e.what());
    }
  }
}

void apply_axis(ExperimentConfig& cfg, std::string_view axis, double value) {
  auto as_count = [&](const char* field) {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError(field, "sweep value must be a positive integer");
    return static_cast<std::size_t>(value);
  };
  if (axis == "t_s") {
    if (!(value > 0.0 && value <= 1.0)) throw ConfigError("agent.t_s", "sweep value must lie in (0, 1]");
    cfg.agent.t_s = value;
  } else if (axis == "latent_dim") {
    cfg.agent.latent_dim = as_count("agent.latent_dim");
  } else if (axis == "infer_steps") {
    cfg.agent.n_infer_steps = as_count("agent.n_infer_steps");
  } else {
    throw ConfigError("sweep.axis", "unknown axis \"" + std::string(axis) + "\"");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  const toml::Document doc = toml::parse(text);
  ExperimentConfig cfg;
  Reader reader(doc);
  visit_fields(cfg, reader);
  reader.reject_unknown();
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string to_toml(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  Writer writer;
  visit_fields(copy, writer);
  std::string s = writer.str();
  return s.substr(s.find_first_not_of('\n'));
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_toml(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace agentpose
