#include "mvd/geometry.hpp"

#include <cmath>
#include <string>

namespace mvd {

Camera::Camera(const Mat3& intrinsics, const Mat4& world_to_cam, int width, int height)
    : intrinsics_(intrinsics), world_to_cam_(world_to_cam), width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidCamera, "camera image size must be positive");
  }
  if (!(fx() > 0.0) || !(fy() > 0.0)) {
    throw Error(ErrorCode::InvalidCamera, "focal lengths must be positive");
  }
  if (cx() < 0.0 || cx() >= width || cy() < 0.0 || cy() >= height) {
    throw Error(ErrorCode::InvalidCamera, "principal point outside the image");
  }
  const Mat3 r = rotation();
  const double ortho_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho_err < 1e-9) || !(r.determinant() > 0.0)) {
    throw Error(ErrorCode::InvalidCamera, "rotation is not a proper orthonormal matrix");
  }
  const Eigen::RowVector4d last = world_to_cam.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(ErrorCode::InvalidCamera, "world_to_cam last row must be (0,0,0,1)");
  }
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_rad,
                       int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    // Looking along the up vector; pick any perpendicular.
    right = forward.cross(std::abs(forward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
  }
  right.normalize();
  const Vec3 down = forward.cross(right);

  Mat3 rot;
  rot.row(0) = right.transpose();
  rot.row(1) = down.transpose();
  rot.row(2) = forward.transpose();

  Mat4 w2c = Mat4::Identity();
  w2c.topLeftCorner<3, 3>() = rot;
  w2c.topRightCorner<3, 1>() = -rot * eye;

  const double focal = 0.5 * height / std::tan(0.5 * fov_y_rad);
  Mat3 k = Mat3::Identity();
  k(0, 0) = focal;
  k(1, 1) = focal;
  k(0, 2) = 0.5 * (width - 1);
  k(1, 2) = 0.5 * (height - 1);
  return Camera(k, w2c, width, height);
}

Mat4 rigid_inverse(const Mat4& transform) {
  Mat4 inv = Mat4::Identity();
  const Mat3 rt = transform.topLeftCorner<3, 3>().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * transform.topRightCorner<3, 1>();
  return inv;
}

Mat4 Camera::cam_to_world() const { return rigid_inverse(world_to_cam_); }

Vec3 Camera::center() const { return -rotation().transpose() * translation(); }

Vec3 Camera::optical_axis() const { return rotation().row(2).transpose(); }

Camera Camera::composed(const Mat4& transform) const {
  return Camera(intrinsics_, world_to_cam_ * transform, width_, height_);
}

std::array<double, 9> Camera::intrinsics_row_major() const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r * 3 + c] = intrinsics_(r, c);
  return out;
}

std::array<double, 16> Camera::world_to_cam_row_major() const {
  std::array<double, 16> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = world_to_cam_(r, c);
  return out;
}

Camera Camera::from_row_major(const std::array<double, 9>& k, const std::array<double, 16>& w2c,
                              int width, int height) {
  Mat3 km;
  Mat4 wm;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) km(r, c) = k[r * 3 + c];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) wm(r, c) = w2c[r * 4 + c];
  return Camera(km, wm, width, height);
}

Projection project(const Camera& camera, const Vec3& point_world) {
  const Vec3 pc = camera.rotation() * point_world + camera.translation();
  if (pc.z() <= kBehindCameraEps) {
    throw Error(ErrorCode::BehindCamera, "point is behind the camera");
  }
  const double u = camera.fx() * pc.x() / pc.z() + camera.cx();
  const double v = camera.fy() * pc.y() / pc.z() + camera.cy();
  return {Vec2(u, v), pc.z()};
}

Vec3 unproject(const Camera& camera, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "unproject requires positive depth");
  }
  const Vec3 pc((pixel.x() - camera.cx()) / camera.fx() * depth,
                (pixel.y() - camera.cy()) / camera.fy() * depth, depth);
  return camera.rotation().transpose() * (pc - camera.translation());
}

bool pixel_in_image(const Camera& camera, const Vec2& pixel) {
  return pixel.x() >= -0.5 && pixel.x() <= camera.width() - 0.5 && pixel.y() >= -0.5 &&
         pixel.y() <= camera.height() - 0.5;
}

Ray ray_for_pixel(const Camera& camera, const Vec2& pixel) {
  if (!pixel_in_image(camera, pixel)) {
    throw Error(ErrorCode::OutOfBounds, "pixel outside the image bounds");
  }
  const Vec3 dir_cam((pixel.x() - camera.cx()) / camera.fx(),
                     (pixel.y() - camera.cy()) / camera.fy(), 1.0);
  return {camera.center(), (camera.rotation().transpose() * dir_cam).normalized()};
}

PluckerEmbedding plucker(const Ray& ray) {
  const Vec3 d = ray.direction.normalized();
  return {d, ray.origin.cross(d)};
}

Ray ray_to_camera_center(const Vec3& point_world, const Camera& camera) {
  const Vec3 delta = camera.center() - point_world;
  const double len = delta.norm();
  if (len < kDegenerateRayEps) {
    throw Error(ErrorCode::DegenerateRay, "point coincides with the camera center");
  }
  return {point_world, delta / len};
}

Mat4 relative_pose(const Camera& target, const Camera& reference) {
  return target.world_to_cam() * reference.cam_to_world();
}

}  // namespace mvd
