#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvd/autodiff.hpp"
#include "mvd/frustum.hpp"
#include "mvd/params.hpp"
#include "mvd/scene.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

struct DenoiserConfig {
  int image_size = 32;
  int channels = 64;  // widest backbone level; the full-resolution level uses half
  int time_dim = 32;
  int emb_dim = 64;
  int attn_heads = 4;
  bool use_frustum = true;  // false: no aggregator and no cross-attention
  AggregatorConfig aggregator;

  int level0_channels() const { return channels / 2; }
  void validate() const;
};

// UNet over concat(x_t, y padded to 4 channels) with two stride-2 levels.
// Camera (target_from_input, row-major) and time condition every residual
// block. At the 16x16 level each position cross-attends to the D frustum
// entries of its own grid cell; those blocks are residual with a
// zero-initialized output projection.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  Denoiser(const DenoiserConfig& config, nn::ParamStore params);

  const DenoiserConfig& config() const { return config_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params() { return params_; }
  AggregatorParams aggregator() const { return AggregatorParams{config_.aggregator, &params_}; }

  // eps prediction (H x W x 4). `frustum` may be null (treated as the zero
  // frustum); it is ignored when use_frustum is off.
  Image forward(const Image& input_rgb, const Image& x_t, const Mat4& target_from_input,
                const FeatureFrustum* frustum, int t) const;

  // One line per parameter plus the total.
  std::string parameter_report() const;

 private:
  DenoiserConfig config_;
  nn::ParamStore params_;
};

void init_denoiser_params(nn::ParamStore& store, const DenoiserConfig& config, Rng& rng);

// Tape-level forward. x_t and y_pad are (H*W) x 4. frustum is
// (H'*W'*D) x C with rows (y*W' + x)*D + d, or an invalid Var for none;
// frustum_mask (optional) disables entries no view could see.
nn::Var denoiser_forward(nn::ParamBinding& bind, const DenoiserConfig& config, const nn::Var& x_t,
                         const nn::Var& y_pad, const Mat4& target_from_input,
                         const nn::Var& frustum, int depth_samples,
                         std::span<const std::uint8_t> frustum_mask, int t);

nn::Matrix camera_condition(const Mat4& target_from_input);
Image pad_rgb(const Image& rgb);

// ---- training objective -----------------------------------------------------

// One training sample: a conditioning view and clean posed RGB-D targets.
struct TrainingExample {
  Image input_rgb;
  Camera input_camera;
  std::vector<Image> targets;  // clean x_0, H x W x 4
  std::vector<Camera> cameras;

  explicit TrainingExample(const Camera& cam) : input_camera(cam) {}
};

// Everything random about one evaluation of the objective.
struct NoiseDraw {
  int t = 1;
  std::vector<Image> noise;          // per target, H x W x 4
  std::vector<std::vector<double>> depths;  // per target, metric, ray-major
  bool drop_condition = false;
};

// Depth samples for the frustum of one noisy view: the depth channel is
// sampled on the ray grid, clamped to [-1, 1.05], turned into D proposals in
// normalized space over [-1, 1] and mapped to metric depth.
std::vector<double> frustum_depths(const Image& x_t, int t, const DepthSampleParams& depth,
                                   const NoiseSchedule& schedule, const DepthRange& range,
                                   int stride, Rng& rng);

NoiseDraw draw_noise(const TrainingExample& example, const NoiseSchedule& schedule,
                     const DepthSampleParams& depth, const DepthRange& range, int stride,
                     double drop_probability, Rng& rng);

std::vector<Image> noisy_targets(const TrainingExample& example, const NoiseDraw& draw,
                                 const NoiseSchedule& schedule);

struct LossResult {
  double loss = 0.0;
  nn::Gradients grads;  // empty unless requested
};

// Mean squared error between the drawn noise and the prediction over every
// target and channel. Depth sample locations are constants.
LossResult diffusion_loss(const Denoiser& model, const TrainingExample& example,
                          const NoiseDraw& draw, const NoiseSchedule& schedule,
                          bool with_gradients);

}  // namespace mvd
