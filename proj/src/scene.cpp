#include "mvd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mvd {

double Primitive::bounding_radius() const {
  return kind == PrimitiveKind::Sphere ? size.x() : size.norm();
}

double Primitive::sdf(const Vec3& p) const {
  const Vec3 local = p - center;
  if (kind == PrimitiveKind::Sphere) return local.norm() - size.x();
  const Vec3 q = local.cwiseAbs() - size;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double scene_sdf(const Scene& scene, const Vec3& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const Primitive& prim : scene.primitives) d = std::min(d, prim.sdf(p));
  return d;
}

Scene generate_scene(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "scene"));
  std::uniform_int_distribution<int> count_dist(2, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Scene scene;
  const int count = count_dist(rng);
  for (int i = 0; i < count; ++i) {
    Primitive prim;
    if (unit(rng) < 0.5) {
      prim.kind = PrimitiveKind::Sphere;
      const double r = 0.2 + 0.25 * unit(rng);
      prim.size = Vec3(r, r, r);
    } else {
      prim.kind = PrimitiveKind::Box;
      prim.size = Vec3(0.12 + 0.23 * unit(rng), 0.12 + 0.23 * unit(rng), 0.12 + 0.23 * unit(rng));
    }
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    const double max_dist = std::max(0.0, 0.95 - prim.bounding_radius());
    const double reach = i == 0 ? std::min(0.2, max_dist) : max_dist;
    prim.center = dir * (reach * unit(rng));
    prim.color = Vec3(0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng));
    scene.primitives.push_back(prim);
  }
  return scene;
}

namespace {

constexpr double kHitEps = 1e-9;

std::optional<Hit> intersect_sphere(const Primitive& s, const Ray& ray) {
  const Vec3 oc = ray.origin - s.center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - s.size.x() * s.size.x();
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  double t = -b - root;
  if (t <= kHitEps) t = -b + root;
  if (t <= kHitEps) return std::nullopt;
  const Vec3 p = ray.origin + t * ray.direction;
  return Hit{t, (p - s.center).normalized(), -1};
}

std::optional<Hit> intersect_box(const Primitive& b, const Ray& ray) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = 0;
  double near_sign = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = b.center[a] - b.size[a];
    const double hi = b.center[a] + b.size[a];
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o) / d;
    double t1 = (hi - o) / d;
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
      near_sign = sign;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near <= kHitEps) return std::nullopt;  // cameras are always outside the boxes
  Vec3 n = Vec3::Zero();
  n[near_axis] = near_sign;
  return Hit{t_near, n, -1};
}

}  // namespace

std::optional<Hit> intersect(const Scene& scene, const Ray& ray) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& prim = scene.primitives[i];
    std::optional<Hit> h = prim.kind == PrimitiveKind::Sphere ? intersect_sphere(prim, ray)
                                                              : intersect_box(prim, ray);
    if (h && (!best || h->distance < best->distance)) {
      best = h;
      best->primitive = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<Camera> make_rig(int num_views, double elevation_deg, double radius, int image_size,
                             double fill) {
  if (num_views < 1) throw Error(ErrorCode::InvalidArgument, "rig needs at least one view");
  if (!(radius > 1.0)) {
    throw Error(ErrorCode::InvalidRadius, "rig radius must exceed the unit scene sphere");
  }
  const double elev = elevation_deg * std::numbers::pi / 180.0;
  // Half-angle of the unit sphere seen from `radius`, widened so it covers
  // `fill` of the image height.
  const double half = std::atan(std::tan(std::asin(1.0 / radius)) / fill);
  std::vector<Camera> cams;
  cams.reserve(num_views);
  for (int i = 0; i < num_views; ++i) {
    const double az = 2.0 * std::numbers::pi * i / num_views;
    const Vec3 eye(radius * std::cos(elev) * std::cos(az), radius * std::cos(elev) * std::sin(az),
                   radius * std::sin(elev));
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), 2.0 * half, image_size,
                                   image_size));
  }
  return cams;
}

std::vector<Camera> make_rig(const RigConfig& rig) {
  return make_rig(rig.num_views, rig.elevation_deg, rig.radius, rig.image_size, rig.fill);
}

Image RenderedView::rgbd() const {
  Image out(rgb.height, rgb.width, 4);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb.at(y, x, c);
      out.at(y, x, 3) = depth.at(y, x, 0);
    }
  }
  return out;
}

RenderedView render(const Scene& scene, const Camera& camera, const DepthRange& range) {
  RenderedView view(camera);
  const Vec3 axis = camera.optical_axis();
  for (int y = 0; y < camera.height(); ++y) {
    for (int x = 0; x < camera.width(); ++x) {
      const Ray ray = ray_for_pixel(camera, Vec2(x, y));
      const std::optional<Hit> hit = intersect(scene, ray);
      if (!hit) continue;
      const Primitive& prim = scene.primitives[hit->primitive];
      const double shade = 0.3 + 0.7 * std::max(0.0, hit->normal.dot(kLightDirection));
      for (int c = 0; c < 3; ++c) {
        view.rgb.at(y, x, c) = 2.0 * std::clamp(prim.color[c] * shade, 0.0, 1.0) - 1.0;
      }
      const double z = hit->distance * ray.direction.dot(axis);
      view.depth.at(y, x, 0) = static_cast<float>(range.normalize(z));
      view.mask[static_cast<std::size_t>(y) * camera.width() + x] = 1;
    }
  }
  return view;
}

namespace {

Vec3 sample_on_primitive(const Primitive& prim, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (prim.kind == PrimitiveKind::Sphere) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec3 d(normal(rng), normal(rng), normal(rng));
    return prim.center + prim.size.x() * d.normalized();
  }
  // Pick a face proportional to its area.
  const Vec3& h = prim.size;
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const double total = areas[0] + areas[1] + areas[2];
  double pick = unit(rng) * total;
  int axis = 0;
  while (axis < 2 && pick > areas[axis]) pick -= areas[axis++];
  Vec3 local(h.x() * (2.0 * unit(rng) - 1.0), h.y() * (2.0 * unit(rng) - 1.0),
             h.z() * (2.0 * unit(rng) - 1.0));
  local[axis] = unit(rng) < 0.5 ? -h[axis] : h[axis];
  return prim.center + local;
}

double primitive_area(const Primitive& prim) {
  if (prim.kind == PrimitiveKind::Sphere) {
    return 4.0 * std::numbers::pi * prim.size.x() * prim.size.x();
  }
  const Vec3& h = prim.size;
  return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
}

}  // namespace

std::vector<Vec3> sample_visible_surface(const Scene& scene, const std::vector<Camera>& cameras,
                                         int count, Rng& rng) {
  std::vector<double> areas;
  for (const Primitive& p : scene.primitives) areas.push_back(primitive_area(p));
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  std::vector<Vec3> out;
  out.reserve(count);
  int attempts = 0;
  while (static_cast<int>(out.size()) < count && attempts < 200 * count) {
    ++attempts;
    const Vec3 p = sample_on_primitive(scene.primitives[pick(rng)], rng);
    // Drop points buried inside another primitive.
    bool buried = false;
    for (const Primitive& other : scene.primitives) {
      if (other.sdf(p) < -1e-9) buried = true;
    }
    if (buried) continue;
    bool visible = false;
    for (const Camera& cam : cameras) {
      const Vec3 pc = cam.rotation() * p + cam.translation();
      if (pc.z() <= 0.0) continue;
      const double u = cam.fx() * pc.x() / pc.z() + cam.cx();
      const double v = cam.fy() * pc.y() / pc.z() + cam.cy();
      if (u < -0.5 || u > cam.width() - 0.5 || v < -0.5 || v > cam.height() - 0.5) continue;
      const Vec3 to_point = p - cam.center();
      const double dist = to_point.norm();
      const std::optional<Hit> hit = intersect(scene, Ray{cam.center(), to_point / dist});
      if (hit && hit->distance > dist - 1e-6) {
        visible = true;
        break;
      }
    }
    if (visible) out.push_back(p);
  }
  return out;
}

}  // namespace mvd
