#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "mvd/metrics.hpp"
#include "support.hpp"

using namespace mvd;

namespace {

Image filled(int h, int w, int c, double v) {
  Image im(h, w, c);
  std::fill(im.data.begin(), im.data.end(), v);
  return im;
}

Image random_unit(int h, int w, int c, Rng& rng) {
  Image im(h, w, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : im.data) v = u(rng);
  return im;
}

std::vector<Vec3> random_cloud(int n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> p(n);
  for (Vec3& v : p) v = Vec3(u(rng), u(rng), u(rng));
  return p;
}

struct Views {
  std::vector<Image> rgbd;
  std::vector<Camera> cams;
};

Views ground_truth(const SceneRecord& rec) {
  Views v;
  for (const RenderedView& r : rec.views) {
    v.rgbd.push_back(r.rgbd());
    v.cams.push_back(r.camera);
  }
  return v;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr") {
  const Image zeros = filled(8, 8, 3, 0.0), ones = filled(8, 8, 3, 1.0);
  CHECK(psnr(zeros, zeros) == kPsnrCap);
  CHECK(psnr(zeros, ones) == doctest::Approx(0.0));
  CHECK(psnr(zeros, filled(8, 8, 3, 0.1)) == doctest::Approx(20.0));
  Rng rng(1);
  const Image a = random_unit(8, 8, 3, rng), b = random_unit(8, 8, 3, rng);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(std::isfinite(psnr(a, b)));
  CHECK_THROWS_AS(psnr(a, filled(8, 9, 3, 0.0)), Error);
}

TEST_CASE("ssim") {
  Rng rng(2);
  const Image a = random_unit(16, 16, 3, rng), b = random_unit(16, 16, 3, rng);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
  Image neg = a;
  for (double& v : neg.data) v = 1.0 - v;
  CHECK(ssim(a, neg) < 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  const double s = ssim(a, b);
  CHECK((s >= -1.0 && s <= 1.0));
  // Constants: only the luminance term remains.
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double x = 0.2, y = 0.7;
  const double expected = (2 * x * y + c1) * c2 / ((x * x + y * y + c1) * c2);
  CHECK(ssim(filled(12, 12, 1, x), filled(12, 12, 1, y)) == doctest::Approx(expected).epsilon(1e-9));
  try {
    ssim(filled(10, 16, 3, 0.0), filled(10, 16, 3, 0.0));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooSmall);
  }
  CHECK_THROWS_AS(ssim(a, filled(16, 16, 1, 0.0)), Error);
}

TEST_CASE("remapping and foreground") {
  Image rgbd(1, 2, 4);
  rgbd.data = {-1.0, 0.0, 1.0, -1.0, 0.5, 0.5, 0.5, 1.0};
  const DepthRange range{1.0, 3.0};
  const auto fg = depth_foreground(rgbd, range);
  CHECK(fg == std::vector<std::uint8_t>{1, 0});
  const Image u = to_unit_rgb(rgbd, fg);
  CHECK(u.channels == 3);
  CHECK(u.data == std::vector<double>{0.0, 0.5, 1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("kd-tree equals brute force") {
  Rng rng(3);
  const auto a = random_cloud(1000, rng), b = random_cloud(1000, rng);
  const KdTree tree(b);
  for (const Vec3& q : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : b) best = std::min(best, squared_distance(p, q));
    CHECK(tree.nearest_squared(q) == best);
  }
  CHECK(chamfer(a, b) == chamfer_brute_force(a, b));
}

TEST_CASE("chamfer") {
  Rng rng(4);
  const auto a = random_cloud(300, rng), b = random_cloud(200, rng);
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer({Vec3(0, 0, 0)}, {Vec3(0, 1, 0)}) == doctest::Approx(1.0));
  CHECK(chamfer(a, b) == chamfer(b, a));
  CHECK(chamfer(a, b) > 0.0);
  auto a2 = a, b2 = b;
  const Vec3 shift(0.3, -2.0, 5.0);
  for (Vec3& p : a2) p += shift;
  for (Vec3& p : b2) p += shift;
  CHECK(std::abs(chamfer(a2, b2) - chamfer(a, b)) < 1e-9);
  try {
    chamfer(a, std::vector<Vec3>{});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCloud);
  }
}

TEST_CASE("reprojection consistency") {
  const Dataset data = generate_dataset(2, 21, RigConfig{});
  const DepthRange range = data.depth_range();
  for (const SceneRecord& rec : data.scenes) {
    const Views gt = ground_truth(rec);
    const ReprojectionResult r = reprojection_consistency(gt.rgbd, gt.cams, range);
    CHECK(!r.no_overlap);
    CHECK(r.correspondences > 100);
    CHECK(r.score < 0.05);

    const std::vector<Image> twin{gt.rgbd[3], gt.rgbd[3]};
    const std::vector<Camera> twin_cam{gt.cams[3], gt.cams[3]};
    CHECK(reprojection_consistency(twin, twin_cam, range).score < 1e-9);

    // Shuffled RGB in one view.
    Views shuffled = gt;
    Rng rng(5);
    Image& im = shuffled.rgbd[4];
    std::vector<std::size_t> order(im.pixel_count());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const Image orig = im;
    for (std::size_t p = 0; p < order.size(); ++p)
      for (int c = 0; c < 3; ++c) im.data[p * 4 + c] = orig.data[order[p] * 4 + c];
    CHECK(reprojection_consistency(shuffled.rgbd, shuffled.cams, range).score > r.score);

    // One view's colors replaced by noise.
    Views noisy = gt;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t p = 0; p < noisy.rgbd[2].pixel_count(); ++p)
      for (int c = 0; c < 3; ++c) noisy.rgbd[2].data[p * 4 + c] = u(rng);
    CHECK(reprojection_consistency(noisy.rgbd, noisy.cams, range).score > r.score);
  }
  // Background only: nothing to compare.
  const auto cams = make_rig(2, 30.0, 2.0, 8);
  const std::vector<Image> empty(2, filled(8, 8, 4, 1.0));
  CHECK(reprojection_consistency(empty, cams, range).no_overlap);
}

TEST_CASE("evaluate and report formats") {
  const Dataset data = generate_dataset(1, 22, RigConfig{});
  const Views gt = ground_truth(data.scenes[0]);
  const MetricReport self = evaluate(gt.rgbd, gt.rgbd, gt.cams, data.depth_range());
  CHECK(self.view_psnr.size() == 16);
  CHECK(self.mean_psnr == kPsnrCap);
  CHECK(std::abs(self.mean_ssim - 1.0) < 1e-9);
  CHECK(self.chamfer_valid);
  CHECK(self.chamfer == 0.0);
  CHECK(self.reprojection_valid);

  MetricReport r;
  r.view_psnr = {20.5, 30.0};
  r.view_ssim = {0.5, 0.75};
  r.mean_psnr = 25.25;
  r.mean_ssim = 0.625;
  r.chamfer = 0.125;
  r.chamfer_valid = true;
  CHECK(r.to_csv() ==
        "metric,view,value\npsnr,0,20.5\npsnr,1,30\nssim,0,0.5\nssim,1,0.75\n"
        "mean_psnr,,25.25\nmean_ssim,,0.625\nchamfer,,0.125\nreprojection_consistency,,\n");
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["view_psnr"][1] == 30.0);
  CHECK(j["mean_ssim"] == 0.625);
  CHECK(j["chamfer"] == 0.125);
  CHECK(j["reprojection_consistency"].is_null());
}

}
