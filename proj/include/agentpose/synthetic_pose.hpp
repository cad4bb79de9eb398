#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentpose/autoencoder.hpp"
#include "agentpose/losses.hpp"
#include "agentpose/ndarray.hpp"
#include "agentpose/nn.hpp"
#include "agentpose/vpsde.hpp"

namespace agentpose::pose {

using Point = std::array<double, 2>;  // (x, y) in grid units, [0, G)

struct DatasetConfig {
  std::size_t n = 5000;
  std::size_t keypoints = 4;
  std::size_t grid = 16;
  double blob_sigma = 1.0;
  std::size_t distractors = 2;
  double distractor_amplitude = 0.5;  // uniform in [-a, a]
  double pixel_noise = 0.05;
  double p_invisible = 0.1;
  double val_fraction = 0.2;

  bool operator==(const DatasetConfig&) const = default;
};

struct SyntheticSample {
  std::vector<double> image;  // G x G, row-major (y, x)
  std::vector<Point> keypoints;
  std::vector<std::uint8_t> visible;
};

struct Dataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::vector<SyntheticSample> samples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

enum class BlobShape { kMonopole, kDipoleX, kDipoleY };

struct KeypointStyle {
  BlobShape shape;
  double amplitude;
};

/// Rendering that identifies keypoint k: +blob, -blob, x-dipole, y-dipole,
/// repeating with amplitude growing by 0.5 every four keypoints.
KeypointStyle keypoint_style(std::size_t k);

/// Renders keypoint blobs plus random distractors and pixel noise.
Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed);

/// Binary cache: magic, JSON header (generator config + seed), raw samples.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Per-axis Gaussian-smoothed one-hot over `bins` (K x 2 x L), centred at
/// coord * L / G; sigma == 0 gives an exact one-hot.
NdArray encode_simcc(std::span<const Point> coords, std::size_t grid, std::size_t bins, double sigma);
/// Per-axis argmax (ties -> lower bin) mapped back to grid units.
std::vector<Point> decode_simcc(const NdArray& logits, std::size_t grid);

/// Fraction of visible keypoints with Euclidean error < tau * G.
double pck(std::span<const Point> pred, std::span<const Point> gt, std::span<const std::uint8_t> visible, double tau,
           std::size_t grid);

struct Batch {
  NdArray images;  // B x 1 x G x G
  losses::SimccLabels labels;
  std::vector<Point> keypoints;  // B*K
  std::vector<std::uint8_t> visible;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, std::size_t bins, double label_sigma);

struct PoseNetConfig {
  std::size_t depth = 1;   // one k x k stage followed by depth - 1 pointwise stages
  std::size_t width = 4;   // channels of every backbone stage
  std::size_t kernel = 5;  // odd size of the first, spatial stage
  std::size_t channels = 16;
  std::size_t keypoints = 4;
  std::size_t bins = 32;
  std::size_t grid = 16;
  std::size_t feat_h = 1;
  std::size_t feat_w = 1;
};

/// Capacity tiers as (depth, width, channels): T (1, 4, 16), S (1, 8, 16),
/// M (2, 8, 32), L (2, 16, 32). Throws InvalidArgument for unknown names.
PoseNetConfig tier_config(std::string_view tier);
bool is_known_tier(std::string_view tier);

/// Backbone: a k x k convolution and pointwise stages over the image, then
/// per-channel column and row means projected to a C x H x W map. The SimCC
/// head is one dense layer.
class ToyPoseNet {
 public:
  ToyPoseNet(const PoseNetConfig& cfg, Rng& rng);

  const PoseNetConfig& config() const noexcept { return cfg_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

  NdArray features(const NdArray& images, bool frozen = false) const;
  /// Features (B x C x H x W) -> logits (B x K x 2 x L).
  NdArray head(const NdArray& features, bool frozen = false) const;

 private:
  PoseNetConfig cfg_;
  std::vector<nn::Linear> stages_;
  nn::Linear feature_proj_;
  nn::Linear head_;
  nn::ParameterSet params_;
};

/// Inserting the agent between backbone and head. `score` may be null,
/// which keeps the adapters but skips perturbation and calibration.
struct AgentBundle {
  const ae::StudentAdapters* adapters = nullptr;
  const vpsde::ScoreFn* score = nullptr;
  const vpsde::NoiseSchedule* schedule = nullptr;
  double t_s = 0.4;
  std::size_t steps = 5;
  Rng* rng = nullptr;
  vpsde::CalibrateOptions calibrate;
  // false: the forward perturbation keeps only its mean (z = 0).
  bool inject_noise = true;
};

struct PoseOutput {
  NdArray features;                        // backbone output
  std::optional<vpsde::FeatureBatch> pre;  // pre-adapter latent (before noise)
  std::optional<vpsde::FeatureBatch> post; // calibrated latent
  NdArray logits;
};

PoseOutput forward_pose(const ToyPoseNet& net, const NdArray& images, const AgentBundle* bundle = nullptr);

}  // namespace agentpose::pose
