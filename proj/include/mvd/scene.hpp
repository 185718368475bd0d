#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/geometry.hpp"
#include "mvd/rng.hpp"

namespace mvd {

enum class PrimitiveKind { Sphere, Box };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();  // sphere: size.x() is the radius; box: half extents
  Vec3 color = Vec3::Constant(0.5);  // linear RGB in [0, 1]

  double bounding_radius() const;
  // Signed distance (negative inside).
  double sdf(const Vec3& p) const;
};

// A composite of primitives, all contained in the unit sphere.
struct Scene {
  std::vector<Primitive> primitives;
};

Scene generate_scene(std::uint64_t seed);

// Nearest-hit query along a ray.
struct Hit {
  double distance;  // along the unit ray direction
  Vec3 normal;
  int primitive;
};
std::optional<Hit> intersect(const Scene& scene, const Ray& ray);

// Signed distance to the union of the primitives.
double scene_sdf(const Scene& scene, const Vec3& p);

struct RigConfig {
  int num_views = 16;
  double elevation_deg = 30.0;
  double radius = 2.0;
  int image_size = 32;
  double near = 1.0;
  double far = 3.0;
  double fill = 0.8;  // fraction of the image height covered by the unit sphere
};

// Cameras at fixed elevation, azimuth 360 * i / num_views, looking at the
// origin, world up = +z.
std::vector<Camera> make_rig(int num_views, double elevation_deg, double radius, int image_size,
                             double fill = 0.8);
std::vector<Camera> make_rig(const RigConfig& rig);

// Affine map of metric depth [near, far] onto [-1, 1].
struct DepthRange {
  double near = 1.0;
  double far = 3.0;
  double normalize(double z) const { return 2.0 * (z - near) / (far - near) - 1.0; }
  double denormalize(double d) const { return near + 0.5 * (d + 1.0) * (far - near); }
};

struct RenderedView {
  Image rgb;    // H x W x 3 in [-1, 1]
  Image depth;  // H x W x 1, normalized; background = +1
  std::vector<std::uint8_t> mask;
  Camera camera;

  explicit RenderedView(const Camera& cam)
      : rgb(cam.height(), cam.width(), 3, 1.0),
        depth(cam.height(), cam.width(), 1, 1.0),
        mask(static_cast<std::size_t>(cam.height()) * cam.width(), 0),
        camera(cam) {}

  // 4-channel RGB-D image (depth in channel 3).
  Image rgbd() const;
};

inline const Vec3 kLightDirection = Vec3(0.3, -0.5, 0.8).normalized();

// Flat color times a Lambertian term, exact analytic depth (float32
// precision), white background.
RenderedView render(const Scene& scene, const Camera& camera, const DepthRange& range);

// Uniform samples on the union boundary that are visible from at least one of
// the cameras.
std::vector<Vec3> sample_visible_surface(const Scene& scene, const std::vector<Camera>& cameras,
                                         int count, Rng& rng);

}  // namespace mvd
