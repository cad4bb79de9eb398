#include "agentpose/synthetic_pose.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "agentpose/error.hpp"
#include "agentpose/score_agent.hpp"

namespace agentpose::pose {

using vpsde::FeatureBatch;
using vpsde::FeatureOrigin;

KeypointStyle keypoint_style(std::size_t k) {
  static constexpr BlobShape kShapes[4] = {BlobShape::kMonopole, BlobShape::kMonopole, BlobShape::kDipoleX,
                                           BlobShape::kDipoleY};
  const double magnitude = 1.0 + 0.5 * static_cast<double>(k / 4);
  return {kShapes[k % 4], k % 4 == 1 ? -magnitude : magnitude};
}

namespace {

// Dipoles are Gaussian derivatives scaled to peak magnitude |amp| at one sigma.
void add_blob(std::vector<double>& img, std::size_t g, double cx, double cy, KeypointStyle style, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const double dipole = std::exp(0.5) / sigma;
  for (std::size_t y = 0; y < g; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - cy;
    for (std::size_t x = 0; x < g; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      double v = style.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
      if (style.shape == BlobShape::kDipoleX) v *= dx * dipole;
      if (style.shape == BlobShape::kDipoleY) v *= dy * dipole;
      img[y * g + x] += v;
    }
  }
}

SyntheticSample render_sample(const DatasetConfig& cfg, Rng rng) {
  const std::size_t g = cfg.grid;
  const double gd = static_cast<double>(g);
  SyntheticSample s;
  s.image.assign(g * g, 0.0);
  s.keypoints.resize(cfg.keypoints);
  s.visible.resize(cfg.keypoints);
  for (std::size_t k = 0; k < cfg.keypoints; ++k) {
    s.keypoints[k] = {rng.uniform() * gd, rng.uniform() * gd};
    s.visible[k] = rng.uniform() >= cfg.p_invisible ? 1 : 0;
  }
  for (std::size_t k = 0; k < cfg.keypoints; ++k)
    if (s.visible[k]) add_blob(s.image, g, s.keypoints[k][0], s.keypoints[k][1], keypoint_style(k), cfg.blob_sigma);
  for (std::size_t d = 0; d < cfg.distractors; ++d) {
    const double x = rng.uniform() * gd, y = rng.uniform() * gd;
    const double amp = rng.uniform(-cfg.distractor_amplitude, cfg.distractor_amplitude);
    add_blob(s.image, g, x, y, {BlobShape::kMonopole, amp}, cfg.blob_sigma);
  }
  if (cfg.pixel_noise > 0.0)
    for (auto& v : s.image) v += cfg.pixel_noise * rng.normal();
  return s;
}

nlohmann::json config_json(const DatasetConfig& c) {
  return {{"n", c.n},
          {"keypoints", c.keypoints},
          {"grid", c.grid},
          {"blob_sigma", c.blob_sigma},
          {"distractors", c.distractors},
          {"distractor_amplitude", c.distractor_amplitude},
          {"pixel_noise", c.pixel_noise},
          {"p_invisible", c.p_invisible},
          {"val_fraction", c.val_fraction}};
}

DatasetConfig config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.n = j.at("n");
  c.keypoints = j.at("keypoints");
  c.grid = j.at("grid");
  c.blob_sigma = j.at("blob_sigma");
  c.distractors = j.at("distractors");
  c.distractor_amplitude = j.at("distractor_amplitude");
  c.pixel_noise = j.at("pixel_noise");
  c.p_invisible = j.at("p_invisible");
  c.val_fraction = j.at("val_fraction");
  return c;
}

constexpr char kMagic[8] = {'A', 'P', 'D', 'S', '0', '0', '0', '1'};

template <class T>
void write_raw(std::ostream& os, const T* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
}
template <class T>
void read_raw(std::istream& is, T* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw IoError("dataset cache truncated");
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.n == 0 || cfg.keypoints == 0 || cfg.grid == 0)
    throw InvalidArgument("generate_dataset: n, keypoints and grid must be at least 1");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0))
    throw InvalidArgument("generate_dataset: val_fraction must lie in [0, 1)");
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.samples.resize(cfg.n);
  const Rng root(seed);
  const auto n = static_cast<std::ptrdiff_t>(cfg.n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) ds.samples[static_cast<std::size_t>(i)] = render_sample(cfg, root.split(static_cast<std::uint64_t>(i)));

  std::vector<std::size_t> order(cfg.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = root.split(~std::uint64_t{0});
  agent::shuffle(order, split_rng);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(cfg.n)));
  ds.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(ds.val.begin(), ds.val.end());
  std::sort(ds.train.begin(), ds.train.end());
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write dataset cache " + path.string());
  const std::string header = nlohmann::json{{"format", "agentpose-dataset"},
                                            {"version", 1},
                                            {"seed", ds.seed},
                                            {"generator", config_json(ds.config)},
                                            {"train", ds.train},
                                            {"val", ds.val}}
                                 .dump();
  os.write(kMagic, sizeof kMagic);
  const std::uint64_t len = header.size();
  write_raw(os, &len, 1);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& s : ds.samples) {
    write_raw(os, s.image.data(), s.image.size());
    for (const auto& p : s.keypoints) write_raw(os, p.data(), 2);
    write_raw(os, s.visible.data(), s.visible.size());
  }
  if (!os) throw IoError("failed writing dataset cache " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset cache " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError("not a dataset cache: " + path.string());
  std::uint64_t len = 0;
  read_raw(is, &len, 1);
  std::string header(len, '\0');
  read_raw(is, header.data(), len);
  const auto j = nlohmann::json::parse(header);
  Dataset ds;
  ds.seed = j.at("seed");
  ds.config = config_from_json(j.at("generator"));
  ds.train = j.at("train").get<std::vector<std::size_t>>();
  ds.val = j.at("val").get<std::vector<std::size_t>>();
  const std::size_t g = ds.config.grid, k = ds.config.keypoints;
  ds.samples.resize(ds.config.n);
  for (auto& s : ds.samples) {
    s.image.resize(g * g);
    s.keypoints.resize(k);
    s.visible.resize(k);
    read_raw(is, s.image.data(), s.image.size());
    for (auto& p : s.keypoints) read_raw(is, p.data(), 2);
    read_raw(is, s.visible.data(), k);
  }
  return ds;
}

NdArray encode_simcc(std::span<const Point> coords, std::size_t grid, std::size_t bins, double sigma) {
  if (bins < grid) throw InvalidArgument("encode_simcc: need bins >= grid");
  if (sigma < 0.0) throw InvalidArgument("encode_simcc: sigma must be non-negative");
  const double scale = static_cast<double>(bins) / static_cast<double>(grid);
  std::vector<double> out(coords.size() * 2 * bins, 0.0);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const double c = coords[k][axis];
      if (!(c >= 0.0 && c < static_cast<double>(grid)))
        throw InvalidArgument("encode_simcc: coordinate " + std::to_string(c) + " outside [0, G)");
      double* v = out.data() + (k * 2 + axis) * bins;
      const double mu = c * scale;
      if (sigma == 0.0) {
        v[std::min(static_cast<std::size_t>(std::lround(mu)), bins - 1)] = 1.0;
        continue;
      }
      double total = 0.0;
      for (std::size_t l = 0; l < bins; ++l) {
        const double d = static_cast<double>(l) - mu;
        v[l] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += v[l];
      }
      for (std::size_t l = 0; l < bins; ++l) v[l] /= total;
    }
  }
  return NdArray::from({coords.size(), 2, bins}, std::move(out));
}

std::vector<Point> decode_simcc(const NdArray& logits, std::size_t grid) {
  if (logits.ndim() < 3 || logits.shape()[logits.ndim() - 2] != 2)
    throw InvalidArgument("decode_simcc: expected ... x 2 x L logits");
  const std::size_t bins = logits.shape().back();
  const std::size_t n_points = logits.size() / (2 * bins);
  const double to_grid = static_cast<double>(grid) / static_cast<double>(bins);
  std::vector<Point> out(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const double* v = logits.data().data() + (p * 2 + axis) * bins;
      const std::size_t best = static_cast<std::size_t>(std::max_element(v, v + bins) - v);
      out[p][axis] = static_cast<double>(best) * to_grid;
    }
  }
  return out;
}

double pck(std::span<const Point> pred, std::span<const Point> gt, std::span<const std::uint8_t> visible, double tau,
           std::size_t grid) {
  if (!(tau > 0.0)) throw InvalidArgument("pck: tau must be positive");
  if (pred.size() != gt.size() || gt.size() != visible.size()) throw InvalidArgument("pck: size mismatch");
  const double radius = tau * static_cast<double>(grid);
  std::size_t hits = 0, count = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!visible[i]) continue;
    ++count;
    if (std::hypot(pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]) < radius) ++hits;
  }
  if (count == 0) throw UndefinedMetric("pck: no visible keypoints");
  return static_cast<double>(hits) / static_cast<double>(count);
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, std::size_t bins, double label_sigma) {
  const std::size_t g = ds.config.grid, k = ds.config.keypoints, b = indices.size();
  std::vector<double> images;
  std::vector<double> targets;
  std::vector<double> weights;
  images.reserve(b * g * g);
  targets.reserve(b * k * 2 * bins);
  Batch out;
  for (auto i : indices) {
    const auto& s = ds.samples.at(i);
    images.insert(images.end(), s.image.begin(), s.image.end());
    const NdArray t = encode_simcc(s.keypoints, g, bins, label_sigma);
    targets.insert(targets.end(), t.data().begin(), t.data().end());
    for (std::size_t q = 0; q < k; ++q) weights.push_back(s.visible[q] ? 1.0 : 0.0);
    out.keypoints.insert(out.keypoints.end(), s.keypoints.begin(), s.keypoints.end());
    out.visible.insert(out.visible.end(), s.visible.begin(), s.visible.end());
  }
  out.images = NdArray::from({b, 1, g, g}, std::move(images));
  out.labels = {NdArray::from({b, k, 2, bins}, std::move(targets)), NdArray::from({b, k}, std::move(weights))};
  return out;
}

bool is_known_tier(std::string_view tier) { return tier == "T" || tier == "S" || tier == "M" || tier == "L"; }

PoseNetConfig tier_config(std::string_view tier) {
  PoseNetConfig c;
  if (tier == "T") {
    c.depth = 1, c.width = 4, c.channels = 16;
  } else if (tier == "S") {
    c.depth = 1, c.width = 8, c.channels = 16;
  } else if (tier == "M") {
    c.depth = 2, c.width = 8, c.channels = 32;
  } else if (tier == "L") {
    c.depth = 2, c.width = 16, c.channels = 32;
  } else {
    throw InvalidArgument("unknown capacity tier '" + std::string(tier) + "'");
  }
  return c;
}

ToyPoseNet::ToyPoseNet(const PoseNetConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.depth == 0 || cfg.width == 0 || cfg.channels == 0 || cfg.keypoints == 0 || cfg.bins < 2 || cfg.grid == 0 ||
      cfg.kernel % 2 == 0)
    throw InvalidArgument("ToyPoseNet: invalid configuration");
  std::size_t in = cfg.kernel * cfg.kernel;
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    stages_.push_back(nn::make_linear(in, cfg.width, rng));
    stages_.back().register_in(params_, "backbone." + std::to_string(d));
    in = cfg.width;
  }
  feature_proj_ = nn::make_linear(2 * cfg.grid * cfg.width, cfg.channels * cfg.feat_h * cfg.feat_w, rng);
  feature_proj_.register_in(params_, "backbone.features");
  head_ = nn::make_linear(cfg.channels * cfg.feat_h * cfg.feat_w, cfg.keypoints * 2 * cfg.bins, rng);
  head_.register_in(params_, "head");
}

NdArray ToyPoseNet::features(const NdArray& images, bool frozen) const {
  const std::size_t g = cfg_.grid;
  if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != g || images.dim(3) != g)
    throw InvalidArgument("ToyPoseNet: expected B x 1 x " + std::to_string(g) + " x " + std::to_string(g) +
                          " images, got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0);
  NdArray h = im2col_rows(reshape(images, {b * g * g, 1}), b, g, g, cfg_.kernel);
  for (const auto& stage : stages_) h = gelu(stage.forward(h, frozen));
  h = axis_profiles_rows(h, b, g, g);
  return reshape(feature_proj_.forward(h, frozen), {b, cfg_.channels, cfg_.feat_h, cfg_.feat_w});
}

NdArray ToyPoseNet::head(const NdArray& features, bool frozen) const {
  if (features.ndim() != 4 || features.dim(1) != cfg_.channels || features.dim(2) != cfg_.feat_h ||
      features.dim(3) != cfg_.feat_w)
    throw InvalidArgument("ToyPoseNet: head expects B x " + std::to_string(cfg_.channels) + " x " +
                          std::to_string(cfg_.feat_h) + " x " + std::to_string(cfg_.feat_w) + " features, got " +
                          shape_str(features.shape()));
  const std::size_t b = features.dim(0);
  NdArray flat = reshape(features, {b, cfg_.channels * cfg_.feat_h * cfg_.feat_w});
  return reshape(head_.forward(flat, frozen), {b, cfg_.keypoints, 2, cfg_.bins});
}

PoseOutput forward_pose(const ToyPoseNet& net, const NdArray& images, const AgentBundle* bundle) {
  PoseOutput out;
  out.features = net.features(images);
  if (!bundle) {
    out.logits = net.head(out.features);
    return out;
  }
  if (!bundle->adapters) throw InvalidArgument("forward_pose: agent bundle without adapters");
  const auto& ad = *bundle->adapters;
  if (ad.pre.in_features() != net.config().channels || ad.post.out_features() != net.config().channels)
    throw InvalidArgument("forward_pose: adapters do not match the network's feature channels");
  FeatureBatch pre(ad.pre.forward_nchw(out.features), FeatureOrigin::kStudent);
  out.pre = pre;
  if (bundle->score) {
    if (!bundle->schedule || !bundle->rng) throw InvalidArgument("forward_pose: agent bundle needs a schedule and rng");
    std::optional<FeatureBatch> noisy;
    if (bundle->inject_noise) {
      noisy = vpsde::perturb(pre, bundle->t_s, *bundle->schedule, *bundle->rng).noisy;
    } else {
      const double keep = bundle->schedule->marginal_coeffs(bundle->t_s).mean_scale;
      noisy = FeatureBatch(scale(pre.values(), keep), FeatureOrigin::kNoisy, bundle->t_s);
    }
    out.post = vpsde::calibrate(*noisy, *bundle->score, bundle->t_s, bundle->steps, *bundle->schedule,
                                *bundle->rng, bundle->calibrate);
  } else {
    out.post = pre;
  }
  out.logits = net.head(ad.post.forward_nchw(out.post->values()));
  return out;
}

}  // namespace agentpose::pose
