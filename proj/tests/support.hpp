#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "mvd/config.hpp"
#include "mvd/dataset.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/engine.hpp"
#include "mvd/frustum.hpp"

namespace mvd::test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mvd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small aggregator so the brute-force references stay fast.
inline AggregatorConfig small_aggregator(int stride = 2) {
  AggregatorConfig c;
  c.feature_stride = stride;
  c.tap_channels = 3;
  c.dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.out_channels = 5;
  c.time_dim = 6;
  return c;
}

inline DenoiserConfig small_denoiser(int image_size = 16, bool frustum = true) {
  DenoiserConfig c;
  c.image_size = image_size;
  c.channels = 8;
  c.time_dim = 8;
  c.emb_dim = 8;
  c.attn_heads = 2;
  c.use_frustum = frustum;
  c.aggregator = small_aggregator(2);
  return c;
}

inline RigConfig small_rig(int image_size = 16) {
  RigConfig r;
  r.image_size = image_size;
  return r;
}

// Input is view `input`; targets are the listed views, noised when sigma > 0.
inline ViewSet make_viewset(const SceneRecord& rec, int input, std::vector<int> targets,
                            double sigma = 0.0, std::uint64_t seed = 1) {
  ViewSet vs(rec.views[input].camera);
  vs.input_rgb = rec.views[input].rgb;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t : targets) {
    Image im = rec.views[t].rgbd();
    if (sigma > 0.0)
      for (double& v : im.data) v += sigma * normal(rng);
    vs.target_images.push_back(std::move(im));
    vs.target_cameras.push_back(rec.views[t].camera);
  }
  return vs;
}

inline void randomize(nn::ParamStore& store, const std::string& name, double scale, Rng& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  nn::Matrix& m = store.value(name);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mvd::test
