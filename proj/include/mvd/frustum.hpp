#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvd/autodiff.hpp"
#include "mvd/geometry.hpp"
#include "mvd/params.hpp"

namespace mvd {

// An H x W x C image is exactly an (H*W) x C row-major matrix.
nn::Matrix to_matrix(const Image& image);
Image to_image(const nn::Matrix& m, int height, int width);

// One input view plus N posed RGB-D target views (noisy during sampling).
struct ViewSet {
  Image input_rgb;  // H x W x 3
  Camera input_camera;
  std::vector<Image> target_images;  // H x W x 4, depth in channel 3
  std::vector<Camera> target_cameras;
  std::vector<std::vector<std::uint8_t>> foreground_masks;  // optional, dataset only

  explicit ViewSet(const Camera& input_cam) : input_camera(input_cam) {}

  int target_count() const { return static_cast<int>(target_images.size()); }
  void validate() const;
};

// Aggregated features for one target view; logical shape D x H' x W' x C.
struct FeatureFrustum {
  int depth_samples = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> all_invalid;  // per (d, y, x): no view saw the point

  FeatureFrustum() = default;
  FeatureFrustum(int d, int h, int w, int c)
      : depth_samples(d), height(h), width(w), channels(c),
        values(static_cast<std::size_t>(d) * h * w * c, 0.0),
        all_invalid(static_cast<std::size_t>(d) * h * w, 0) {}

  double& at(int d, int y, int x, int c) {
    return values[((static_cast<std::size_t>(d) * height + y) * width + x) * channels + c];
  }
  double at(int d, int y, int x, int c) const {
    return values[((static_cast<std::size_t>(d) * height + y) * width + x) * channels + c];
  }

  // Rows ordered (y * W' + x) * D + d, i.e. the D entries of a grid cell are
  // contiguous; this is the layout consumed by the denoiser's cross-attention.
  nn::Matrix to_tokens() const;
  static FeatureFrustum from_tokens(const nn::Matrix& tokens, int d, int h, int w);
};

struct SampleBundle {
  nn::Matrix features;  // (N+1) x C_in, zero rows where invalid
  std::vector<PluckerEmbedding> reference;  // per view, ray from the point to its camera
  PluckerEmbedding query;
  std::vector<std::uint8_t> valid;

  int entries() const { return static_cast<int>(valid.size()); }
};

struct AggregatorConfig {
  int feature_stride = 2;  // frustum grid = image / stride
  int tap_channels = 8;    // learned feature maps appended to the raw 4 channels
  int dim = 32;
  int heads = 4;
  int layers = 3;
  int out_channels = 32;
  int time_dim = 32;

  int source_channels() const { return 4 + tap_channels; }
  int token_channels() const { return source_channels() + 12; }
};

struct AggregatorParams {
  AggregatorConfig config;
  const nn::ParamStore* store = nullptr;
};

// Adds the "agg.*" parameters (tap convolution and transformer).
void init_aggregator_params(nn::ParamStore& store, const AggregatorConfig& config, Rng& rng);

// Per-view feature maps for gathering: index n < N are the targets, index N is
// the input view. Each map is H x W x (4 + tap_channels): raw RGB-D (input
// depth padded with zero) followed by silu(conv3x3(raw)).
struct SourceMaps {
  std::vector<Image> features;
  std::vector<Camera> cameras;
};

SourceMaps source_maps(const ViewSet& viewset, const AggregatorParams& params);

// Bilinear sampling support for a projected point. Valid iff the camera-frame
// depth exceeds kBehindCameraEps and the pixel lies in [0, W-1] x [0, H-1].
struct BilinearTap {
  bool valid = false;
  int index[4] = {0, 0, 0, 0};
  double weight[4] = {0, 0, 0, 0};
};
BilinearTap bilinear_tap(const Camera& camera, const Vec3& point_world);

SampleBundle gather(const SourceMaps& sources, const Vec3& point_world, const Ray& query_ray);
SampleBundle gather(const ViewSet& viewset, const AggregatorParams& params,
                    const Vec3& point_world, const Ray& query_ray);

struct AggregateResult {
  std::vector<double> feature;  // C
  std::vector<double> weights;  // per bundle entry, zero where invalid
  bool all_invalid = false;
};

AggregateResult aggregate(const SampleBundle& bundle, int t, const AggregatorParams& params);

// Ray grid for a target view: cell (y, x) shoots through the center of its
// stride x stride pixel block.
Vec2 frustum_ray_pixel(int y, int x, int stride);

// Normalized depth channel of `image` bilinearly sampled at the ray grid,
// row-major over (y, x).
std::vector<double> ray_depth_values(const Image& image, int stride);

// `depths` holds D metric depths per ray, ray-major (as from sample_depths).
FeatureFrustum build_frustum(const ViewSet& viewset, int target_index,
                             std::span<const double> depths, int t,
                             const AggregatorParams& params);

// Same aggregation at `dense_count` depths linearly spaced over [near, far]
// (the midpoint when dense_count == 1), shared by every ray.
FeatureFrustum build_frustum_dense(const ViewSet& viewset, int target_index, int dense_count,
                                   double near, double far, int t,
                                   const AggregatorParams& params);

std::vector<double> linspace_depths(int rays, int count, double near, double far);

// ---- tape-level building blocks (used by training and sampling) ------------

struct FrustumStats {
  std::size_t points = 0;
  std::size_t tokens = 0;
  std::size_t bytes = 0;  // gather taps + token matrices
};

std::vector<nn::Var> source_feature_vars(nn::ParamBinding& bind, std::span<const Image> raw_views,
                                         const AggregatorConfig& config, int height, int width);

// Raw 4-channel views in source order: targets, then the input (depth = 0).
std::vector<Image> raw_source_views(const ViewSet& viewset);

// Aggregated frustum tokens for one target, (H'*W'*D) x out_channels.
nn::Var frustum_tokens(nn::ParamBinding& bind, std::span<const nn::Var> sources,
                       std::span<const Camera> cameras, int target_index,
                       std::span<const double> depths, int depth_samples, int t,
                       const AggregatorConfig& config, std::vector<std::uint8_t>* all_invalid,
                       FrustumStats* stats = nullptr);

// Transformer over grouped tokens. tokens: (groups * len) x token_channels;
// rows of a group must already be in canonical order.
nn::Var aggregator_forward(nn::ParamBinding& bind, const nn::Var& tokens,
                           std::span<const std::uint8_t> valid, int len, int t,
                           const AggregatorConfig& config, std::vector<double>* weights);

}  // namespace mvd
