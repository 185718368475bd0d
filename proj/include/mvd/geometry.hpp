#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "mvd/common.hpp"

namespace mvd {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Pinhole camera. Pixel (0,0) is the center of the top-left pixel, +z looks
// forward, +x right, +y down. The extrinsic is stored world-to-camera.
class Camera {
 public:
  Camera(const Mat3& intrinsics, const Mat4& world_to_cam, int width, int height);

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                        double fov_y_rad, int width, int height);

  const Mat3& intrinsics() const { return intrinsics_; }
  const Mat4& world_to_cam() const { return world_to_cam_; }
  Mat4 cam_to_world() const;
  Mat3 rotation() const { return world_to_cam_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_cam_.topRightCorner<3, 1>(); }
  Vec3 center() const;
  Vec3 optical_axis() const;

  int width() const { return width_; }
  int height() const { return height_; }
  double fx() const { return intrinsics_(0, 0); }
  double fy() const { return intrinsics_(1, 1); }
  double cx() const { return intrinsics_(0, 2); }
  double cy() const { return intrinsics_(1, 2); }

  // Camera observing the world after it has been moved by `transform`:
  // world_to_cam' = world_to_cam * transform.
  Camera composed(const Mat4& transform) const;

  // Row-major flattening used by the manifest and the conditioning vector.
  std::array<double, 9> intrinsics_row_major() const;
  std::array<double, 16> world_to_cam_row_major() const;
  static Camera from_row_major(const std::array<double, 9>& k, const std::array<double, 16>& w2c,
                               int width, int height);

 private:
  Mat3 intrinsics_;
  Mat4 world_to_cam_;
  int width_;
  int height_;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

struct PluckerEmbedding {
  Vec3 direction;
  Vec3 moment;

  std::array<double, 6> as_array() const {
    return {direction.x(), direction.y(), direction.z(), moment.x(), moment.y(), moment.z()};
  }
};

struct Projection {
  Vec2 pixel;
  double depth;
};

inline constexpr double kBehindCameraEps = 1e-9;
inline constexpr double kDegenerateRayEps = 1e-12;

Projection project(const Camera& camera, const Vec3& point_world);
Vec3 unproject(const Camera& camera, const Vec2& pixel, double depth);
Ray ray_for_pixel(const Camera& camera, const Vec2& pixel);
PluckerEmbedding plucker(const Ray& ray);
Ray ray_to_camera_center(const Vec3& point_world, const Camera& camera);

// True when the pixel lies inside [-0.5, W-0.5] x [-0.5, H-0.5].
bool pixel_in_image(const Camera& camera, const Vec2& pixel);

// Transform taking coordinates in `reference`'s camera frame to `target`'s
// camera frame (target_from_reference).
Mat4 relative_pose(const Camera& target, const Camera& reference);

Mat4 rigid_inverse(const Mat4& transform);

}  // namespace mvd
