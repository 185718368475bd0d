#include "mvd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mvd {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": shapes differ");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  if (a.data.empty()) throw Error(ErrorCode::ShapeMismatch, "psnr: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  const int r = kSsimWindow / 2;
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw Error(ErrorCode::TooSmall, "ssim: image smaller than the 11x11 window");
  }
  std::vector<double> w(kSsimWindow);
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - r;
    w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
  }
  const double norm = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= norm;
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);

  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = r; y < a.height - r; ++y) {
      for (int x = r; x < a.width - r; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const double k = w[dy + r] * w[dx + r];
            const double va = a.at(y + dy, x + dx, c);
            const double vb = b.at(y + dy, x + dx, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

Image to_unit_rgb(const Image& image, const std::vector<std::uint8_t>& foreground) {
  if (image.channels < 3 || foreground.size() != image.pixel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "to_unit_rgb: need RGB and a matching mask");
  }
  Image out(image.height, image.width, 3, 1.0);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (!foreground[p]) continue;
    for (int c = 0; c < 3; ++c) {
      out.data[p * 3 + c] = std::clamp(0.5 * (image.data[p * image.channels + c] + 1.0), 0.0, 1.0);
    }
  }
  return out;
}

std::vector<std::uint8_t> depth_foreground(const Image& rgbd, const DepthRange& range,
                                           double threshold) {
  if (rgbd.channels != 4) throw Error(ErrorCode::ShapeMismatch, "expected an RGB-D image");
  std::vector<std::uint8_t> m(rgbd.pixel_count());
  for (std::size_t p = 0; p < m.size(); ++p) {
    const double z = range.denormalize(rgbd.data[p * 4 + 3]);
    m[p] = (z < threshold * range.far && z > 0.0) ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{idx[mid], axis});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  best = std::min(best, squared_distance(p, q));
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest_squared(const Vec3& q) const {
  if (root_ < 0) throw Error(ErrorCode::EmptyCloud, "nearest neighbour query on an empty set");
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return best;
}

namespace {

double mean_nn(const std::vector<Vec3>& from, const KdTree& to) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += std::sqrt(to.nearest_squared(p));
  return sum / static_cast<double>(from.size());
}

void require_clouds(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer needs non-empty clouds");
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require_clouds(a, b);
  const KdTree ta(a);
  const KdTree tb(b);
  return 0.5 * (mean_nn(a, tb) + mean_nn(b, ta));
}

double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer(a.points, b.points); }

double chamfer_brute_force(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require_clouds(a, b);
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, squared_distance(q, p));
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

// ---------------------------------------------------------------------------

ReprojectionResult reprojection_consistency(std::span<const Image> rgbd,
                                            std::span<const Camera> cameras,
                                            const DepthRange& range, double threshold,
                                            double tolerance) {
  if (rgbd.size() != cameras.size() || rgbd.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "reprojection consistency needs >= 2 posed views");
  }
  const std::size_t nv = rgbd.size();
  std::vector<std::vector<std::uint8_t>> fg(nv);
  for (std::size_t v = 0; v < nv; ++v) fg[v] = depth_foreground(rgbd[v], range, threshold);
  const double tol = tolerance * (range.far - range.near);

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nv; ++i) {
    const Image& src = rgbd[i];
    for (std::size_t j = 0; j < nv; ++j) {
      if (i == j) continue;
      const Image& dst = rgbd[j];
      const Camera& cj = cameras[j];
      for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * src.width + x;
          if (!fg[i][p]) continue;
          const Vec3 X = unproject(cameras[i], Vec2(x, y), range.denormalize(src.at(y, x, 3)));
          const Vec3 pc = cj.rotation() * X + cj.translation();
          if (!(pc.z() > kBehindCameraEps)) continue;
          const double u = cj.fx() * pc.x() / pc.z() + cj.cx();
          const double v = cj.fy() * pc.y() / pc.z() + cj.cy();
          if (!(u >= 0.0 && v >= 0.0 && u <= dst.width - 1 && v <= dst.height - 1)) continue;
          const int x0 = std::min(static_cast<int>(std::floor(u)), dst.width - 1);
          const int y0 = std::min(static_cast<int>(std::floor(v)), dst.height - 1);
          const int x1 = std::min(x0 + 1, dst.width - 1);
          const int y1 = std::min(y0 + 1, dst.height - 1);
          const int xs[4] = {x0, x1, x0, x1};
          const int ys[4] = {y0, y0, y1, y1};
          const double fx = u - x0;
          const double fy = v - y0;
          const double wt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
          bool all_fg = true;
          for (int k = 0; k < 4; ++k) {
            all_fg = all_fg && fg[j][static_cast<std::size_t>(ys[k]) * dst.width + xs[k]];
          }
          if (!all_fg) continue;
          double z = 0.0;
          double rgb[3] = {0, 0, 0};
          for (int k = 0; k < 4; ++k) {
            z += wt[k] * range.denormalize(dst.at(ys[k], xs[k], 3));
            for (int c = 0; c < 3; ++c) rgb[c] += wt[k] * dst.at(ys[k], xs[k], c);
          }
          if (std::abs(z - pc.z()) > tol) continue;
          double err = 0.0;
          for (int c = 0; c < 3; ++c) err += std::abs(0.5 * (rgb[c] - src.at(y, x, c)));
          sum += err / 3.0;
          ++count;
        }
      }
    }
  }
  ReprojectionResult r;
  r.correspondences = count;
  r.no_overlap = count == 0;
  r.score = count ? sum / static_cast<double>(count) : 0.0;
  return r;
}

ReprojectionResult reprojection_consistency(const ViewSet& views, const DepthRange& range,
                                            double threshold) {
  return reprojection_consistency(views.target_images, views.target_cameras, range, threshold);
}

// ---------------------------------------------------------------------------

MetricReport evaluate(std::span<const Image> generated, std::span<const Image> reference,
                      std::span<const Camera> cameras, const DepthRange& range, double threshold) {
  if (generated.size() != reference.size() || generated.size() != cameras.size() ||
      generated.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "evaluate: view counts differ");
  }
  MetricReport r;
  for (std::size_t v = 0; v < generated.size(); ++v) {
    const Image g = to_unit_rgb(generated[v], depth_foreground(generated[v], range, threshold));
    const Image ref = to_unit_rgb(reference[v], depth_foreground(reference[v], range, threshold));
    r.view_psnr.push_back(psnr(g, ref));
    r.view_ssim.push_back(ssim(g, ref));
  }
  const double n = static_cast<double>(generated.size());
  r.mean_psnr = std::accumulate(r.view_psnr.begin(), r.view_psnr.end(), 0.0) / n;
  r.mean_ssim = std::accumulate(r.view_ssim.begin(), r.view_ssim.end(), 0.0) / n;
  const Extraction eg = extract_pointcloud(generated, cameras, range, threshold);
  const Extraction er = extract_pointcloud(reference, cameras, range, threshold);
  if (!eg.empty_cloud && !er.empty_cloud) {
    r.chamfer = chamfer(eg.cloud, er.cloud);
    r.chamfer_valid = true;
  }
  if (generated.size() >= 2) {
    const ReprojectionResult rp = reprojection_consistency(generated, cameras, range, threshold);
    r.reprojection = rp.score;
    r.reprojection_valid = !rp.no_overlap;
  }
  return r;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "metric,view,value\n";
  for (std::size_t v = 0; v < view_psnr.size(); ++v) os << "psnr," << v << ',' << view_psnr[v] << '\n';
  for (std::size_t v = 0; v < view_ssim.size(); ++v) os << "ssim," << v << ',' << view_ssim[v] << '\n';
  os << "mean_psnr,," << mean_psnr << '\n';
  os << "mean_ssim,," << mean_ssim << '\n';
  os << "chamfer,,";
  if (chamfer_valid) os << chamfer;
  os << "\nreprojection_consistency,,";
  if (reprojection_valid) os << reprojection;
  os << '\n';
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["view_psnr"] = view_psnr;
  j["view_ssim"] = view_ssim;
  j["mean_psnr"] = mean_psnr;
  j["mean_ssim"] = mean_ssim;
  j["chamfer"] = chamfer_valid ? nlohmann::json(chamfer) : nlohmann::json(nullptr);
  j["reprojection_consistency"] =
      reprojection_valid ? nlohmann::json(reprojection) : nlohmann::json(nullptr);
  return j.dump(1);
}

}  // namespace mvd
