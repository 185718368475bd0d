#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvd/engine.hpp"

namespace mvd {

inline constexpr double kPsnrCap = 100.0;

// Both images in [0, 1]. 10 log10(1 / MSE), capped at kPsnrCap when
// MSE < 1e-10.
double psnr(const Image& a, const Image& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Mean local SSIM over the positions where the 11x11 Gaussian window fits
// (no padding), averaged over channels. Dynamic range 1.
double ssim(const Image& a, const Image& b);

// [-1, 1] RGB (3 channels, or the first 3 of an RGB-D image) to [0, 1] with
// every pixel outside `foreground` set to white.
Image to_unit_rgb(const Image& image, const std::vector<std::uint8_t>& foreground);
// Foreground from the depth channel: metric depth < threshold * far.
std::vector<std::uint8_t> depth_foreground(const Image& rgbd, const DepthRange& range,
                                           double threshold = kDefaultForegroundThreshold);

// Exact nearest neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  // Squared Euclidean distance to the nearest point, computed exactly as
  // squared_distance() does.
  double nearest_squared(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int point;
    int axis;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

double squared_distance(const Vec3& a, const Vec3& b);

// 0.5 * (mean_a min_b |a - b| + mean_b min_a |b - a|). Throws EmptyCloud.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
double chamfer(const PointCloud& a, const PointCloud& b);
double chamfer_brute_force(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct ReprojectionResult {
  double score = 0.0;  // mean absolute RGB difference in [0, 1] units
  std::size_t correspondences = 0;
  bool no_overlap = false;
};

inline constexpr double kOcclusionTolerance = 0.02;  // fraction of far - near

// For every ordered pair (i, j), i != j: foreground pixels of i are
// unprojected and projected into j and accepted when all four bilinear
// neighbours in j are foreground and the depths agree within the occlusion
// tolerance.
ReprojectionResult reprojection_consistency(std::span<const Image> rgbd,
                                            std::span<const Camera> cameras,
                                            const DepthRange& range,
                                            double threshold = kDefaultForegroundThreshold,
                                            double tolerance = kOcclusionTolerance);
ReprojectionResult reprojection_consistency(const ViewSet& views, const DepthRange& range,
                                            double threshold = kDefaultForegroundThreshold);

struct MetricReport {
  std::vector<double> view_psnr;
  std::vector<double> view_ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double chamfer = 0.0;
  bool chamfer_valid = false;
  double reprojection = 0.0;
  bool reprojection_valid = false;

  std::string to_csv() const;
  std::string to_json() const;
};

// Compares generated RGB-D views with reference views taken from the same
// cameras.
MetricReport evaluate(std::span<const Image> generated, std::span<const Image> reference,
                      std::span<const Camera> cameras, const DepthRange& range,
                      double threshold = kDefaultForegroundThreshold);

}  // namespace mvd
