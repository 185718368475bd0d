#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mvd/geometry.hpp"
#include "mvd/scene.hpp"

using namespace mvd;

namespace {

Camera simple_camera() {
  Mat3 k;
  k << 100, 0, 64, 0, 100, 64, 0, 0, 1;
  return Camera(k, Mat4::Identity(), 128, 128);
}

Mat4 random_rigid(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = Vec3(n(rng), n(rng), n(rng));
  return m;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("project hand examples") {
  const Camera cam = simple_camera();
  Projection p = project(cam, Vec3(0.5, 0, 2));
  CHECK(p.pixel.x() == doctest::Approx(89.0));
  CHECK(p.pixel.y() == doctest::Approx(64.0));
  CHECK(p.depth == doctest::Approx(2.0));
  p = project(cam, Vec3(0, 0, 3.5));
  CHECK(p.pixel.x() == 64.0);
  CHECK(p.pixel.y() == 64.0);
  CHECK(p.depth == 3.5);
}

TEST_CASE("projection error paths") {
  const Camera cam = simple_camera();
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code([&] { project(cam, Vec3(0, 0, -1)); }) == ErrorCode::BehindCamera);
  CHECK(code([&] { project(cam, Vec3(0, 0, 0)); }) == ErrorCode::BehindCamera);
  CHECK(code([&] { unproject(cam, Vec2(3, 3), 0.0); }) == ErrorCode::NonPositiveDepth);
  CHECK(code([&] { ray_for_pixel(cam, Vec2(-0.6, 3)); }) == ErrorCode::OutOfBounds);
  CHECK(code([&] { ray_to_camera_center(cam.center(), cam); }) == ErrorCode::DegenerateRay);
  Mat3 k = Mat3::Identity();
  k(0, 0) = -1;
  CHECK(code([&] { Camera(k, Mat4::Identity(), 8, 8); }) == ErrorCode::InvalidCamera);
  Mat4 bad = Mat4::Identity();
  bad(0, 0) = 2;
  CHECK(code([&] { Camera(Mat3::Identity(), bad, 8, 8); }) == ErrorCode::InvalidCamera);
}

TEST_CASE("project/unproject roundtrips on random cameras") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Camera base = simple_camera();
    const Camera cam = base.composed(random_rigid(rng));
    const Vec2 px(u(rng) * 127, u(rng) * 127);
    const double d = 1.0 + 2.0 * u(rng);
    const Vec3 p = unproject(cam, px, d);
    const Projection back = project(cam, p);
    worst = std::max({worst, (back.pixel - px).norm(), std::abs(back.depth - d)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("rigid transform consistency") {
  Rng rng(4);
  const Camera cam = simple_camera();
  for (int i = 0; i < 200; ++i) {
    const Mat4 t = random_rigid(rng);
    const Vec3 p(0.1 * i / 200.0, -0.2, 2.5);
    const Vec3 moved = (rigid_inverse(t) * p.homogeneous()).head<3>();
    const Projection a = project(cam, p);
    const Projection b = project(cam.composed(t), moved);
    CHECK((a.pixel - b.pixel).norm() < 1e-6);
    CHECK(std::abs(a.depth - b.depth) < 1e-6);
  }
}

TEST_CASE("rays") {
  Rng rng(5);
  const Camera cam = simple_camera().composed(random_rigid(rng));
  const Ray axis = ray_for_pixel(cam, Vec2(cam.cx(), cam.cy()));
  CHECK((axis.direction - cam.optical_axis()).norm() < 1e-12);
  CHECK((unproject(cam, Vec2(cam.cx(), cam.cy()), 2.0) - (cam.center() + 2.0 * cam.optical_axis()))
            .norm() < 1e-9);
  std::uniform_real_distribution<double> u(0.0, 127.0);
  for (int i = 0; i < 100; ++i) {
    const Vec2 px(u(rng), u(rng));
    const Ray r = ray_for_pixel(cam, px);
    CHECK(std::abs(r.direction.norm() - 1.0) < 1e-9);
    const Vec3 p = unproject(cam, px, 1.7);
    const double s = (p - r.origin).dot(r.direction);
    CHECK(s > 0);
    CHECK((r.origin + s * r.direction - p).norm() < 1e-7);
  }
}

TEST_CASE("ray to camera center") {
  const Camera cam = simple_camera();
  const Ray r = ray_to_camera_center(cam.center() + Vec3(0, 0, 2), cam);
  CHECK((r.direction - Vec3(0, 0, -1)).norm() < 1e-15);

  // Adjacent depth samples along a query ray: the reference direction turns
  // by no more than the angle the spacing subtends at the camera distance.
  const auto rig = make_rig(16, 30.0, 2.0, 32);
  const Ray q = ray_for_pixel(rig[0], Vec2(10.5, 20.5));
  const double step = 0.05;
  for (int k = 0; k < 30; ++k) {
    const Vec3 a = q.origin + (1.0 + k * step) * q.direction;
    const Vec3 b = a + step * q.direction;
    const Vec3 da = ray_to_camera_center(a, rig[5]).direction;
    const Vec3 db = ray_to_camera_center(b, rig[5]).direction;
    const double angle = std::acos(std::clamp(da.dot(db), -1.0, 1.0));
    const double dist = std::min((a - rig[5].center()).norm(), (b - rig[5].center()).norm());
    CHECK(angle <= 2.0 * std::asin(step / (2.0 * dist)) + 1e-12);
  }
}

TEST_CASE("plucker properties") {
  CHECK(plucker({Vec3(1, 0, 0), Vec3(0, 1, 0)}).moment == Vec3(0, 0, 1));
  CHECK(plucker({Vec3(0, 0, 0), Vec3(0.6, 0.8, 0)}).moment.norm() == 0.0);
  CHECK(plucker({Vec3(-2, -2, -2), Vec3(1, 1, 1).normalized()}).moment.norm() < 1e-12);
  Rng rng(9);
  std::normal_distribution<double> n(0.0, 3.0);
  double worst_orth = 0.0, worst_shift = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 o(n(rng), n(rng), n(rng));
    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
    const PluckerEmbedding a = plucker({o, d});
    worst_orth = std::max(worst_orth, std::abs(a.moment.dot(a.direction)));
    const PluckerEmbedding b = plucker({o + n(rng) * d, d});
    worst_shift = std::max(worst_shift, (a.moment - b.moment).norm());
  }
  CHECK(worst_orth < 1e-9);
  CHECK(worst_shift < 1e-9);
}

TEST_CASE("relative pose composes extrinsics") {
  Rng rng(3);
  const Camera a = simple_camera().composed(random_rigid(rng));
  const Camera b = simple_camera().composed(random_rigid(rng));
  const Mat4 rel = relative_pose(a, b);
  CHECK((rel * b.world_to_cam() - a.world_to_cam()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((relative_pose(a, a) - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rigid_inverse(rel) * rel - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("camera row-major serialization") {
  const auto rig = make_rig(16, 30.0, 2.0, 32);
  const Camera c = Camera::from_row_major(rig[3].intrinsics_row_major(),
                                          rig[3].world_to_cam_row_major(), 32, 32);
  CHECK(c.world_to_cam() == rig[3].world_to_cam());
  CHECK(c.intrinsics() == rig[3].intrinsics());
}

TEST_CASE("rig follows the 16-view, 30 degree convention") {
  const RigConfig defaults;
  CHECK(defaults.num_views == 16);
  CHECK(defaults.elevation_deg == 30.0);
  const auto rig = make_rig(defaults);
  REQUIRE(rig.size() == 16);
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const Vec3 c = rig[i].center();
    CHECK(std::abs(c.norm() - defaults.radius) < 1e-9);
    CHECK(std::asin(c.z() / c.norm()) * 180.0 / std::numbers::pi == doctest::Approx(30.0).epsilon(1e-9));
    const double az = std::atan2(c.y(), c.x());
    const double want = 2.0 * std::numbers::pi * static_cast<double>(i) / 16.0;
    CHECK(std::abs(std::remainder(az - want, 2.0 * std::numbers::pi)) < 1e-9);
    const Ray r = ray_for_pixel(rig[i], Vec2(rig[i].cx(), rig[i].cy()));
    CHECK(r.origin.cross(r.direction).norm() < 1e-9);
  }
  CHECK_THROWS_AS(make_rig(16, 30.0, 0.9, 32), Error);
}

}
