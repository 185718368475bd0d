#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "mvd/dataset.hpp"
#include "mvd/denoiser.hpp"

namespace mvd {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 1;
  double lr = 1e-4;
  int views_per_sample = 5;  // the first sampled view conditions, the rest are targets
  double cfg_dropout = 0.1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  bool cosine_decay = false;  // lr follows a half cosine to 0 over `steps`
  double grad_clip = 0.0;     // global gradient norm limit, 0 = off
  // Exponential moving average of the weights, 0 = off. When on, the model
  // (and every checkpoint) carries the averaged weights.
  double ema_decay = 0.0;

  void validate() const;
};

struct TrainResult {
  std::vector<double> losses;  // one per optimizer step
};

struct TrainHooks {
  std::function<void(int step, double loss)> on_step;
  std::function<void(int step, const Denoiser& model)> on_checkpoint;
};

// Step s draws everything from derive_seed(seed, "train-step", s), so the run
// is a pure function of (dataset, config, initial parameters).
TrainResult train(Denoiser& model, const Dataset& data, const TrainConfig& config,
                  const NoiseSchedule& schedule, const DepthSampleParams& depth,
                  const TrainHooks& hooks = {});

// Picks the scene and views for one training sample.
TrainingExample make_example(const Dataset& data, int views_per_sample, Rng& rng);

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses);

struct SampleConfig {
  double omega = 2.0;
  std::uint64_t seed = 0;
  int threads = 1;
  DepthSampleParams depth;
  DepthRange range;
  // Steps t whose state x_t (before the update at t) is recorded.
  std::vector<int> snapshot_steps;
  // Optional x_T per target, replacing the seeded draw (the draw still
  // happens, so later noise is unchanged).
  std::vector<Image> initial_state;
};

struct SampleResult {
  ViewSet views;  // targets hold the generated RGB-D, clamped to [-1, 1]
  std::map<int, std::vector<Image>> snapshots;

  explicit SampleResult(const Camera& input_camera) : views(input_camera) {}
};

SampleResult sample(const Denoiser& model, const Image& input_rgb, const Camera& input_camera,
                    const std::vector<Camera>& target_cameras, const NoiseSchedule& schedule,
                    const SampleConfig& config);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;  // [0, 1]

  std::size_t size() const { return points.size(); }
};

struct Extraction {
  PointCloud cloud;
  bool empty_cloud = false;
};

inline constexpr double kDefaultForegroundThreshold = 0.98;

// Unprojects pixels whose metric depth is below threshold * far.
Extraction extract_pointcloud(std::span<const Image> rgbd, std::span<const Camera> cameras,
                              const DepthRange& range,
                              double threshold = kDefaultForegroundThreshold);
Extraction extract_pointcloud(const ViewSet& viewset, const DepthRange& range,
                              double threshold = kDefaultForegroundThreshold);

// ASCII PLY with float x y z and uchar red green blue.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

// Writes generated targets as a one-scene dataset (depth threshold decides
// the mask) plus input_rgb.png and input_camera.json for the conditioning view.
void write_generated(const std::filesystem::path& dir, const ViewSet& views,
                     const RigConfig& rig, double threshold = kDefaultForegroundThreshold);

}  // namespace mvd
