#pragma once

// Scalar reference implementations used as test oracles. They share no code
// with the library beyond parameter storage: plain loops over std::vector,
// projection written out from the intrinsic and extrinsic matrices.

#include <cmath>
#include <limits>
#include <vector>

#include "mvd/frustum.hpp"

namespace mvd::oracle {

using Vec = std::vector<double>;

inline Vec affine(const nn::ParamStore& s, const std::string& name, const Vec& x) {
  const nn::Matrix& w = s.value(name + ".w");
  const nn::Matrix& b = s.value(name + ".b");
  Vec out(w.cols());
  for (Eigen::Index o = 0; o < w.cols(); ++o) {
    double acc = b(0, o);
    for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[i] * w(i, o);
    out[o] = acc;
  }
  return out;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline Vec norm(const nn::ParamStore& s, const std::string& name, const Vec& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  const nn::Matrix& g = s.value(name + ".g");
  const nn::Matrix& b = s.value(name + ".b");
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g(0, i) + b(0, i);
  return out;
}

inline Vec time_features(int t, int dim) {
  Vec out(dim, 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / half);
    out[i] = std::sin(t * w);
    out[half + i] = std::cos(t * w);
  }
  return out;
}

// One aggregation over N+1 tokens, no reordering.
inline Vec aggregate(const std::vector<Vec>& tokens, const std::vector<bool>& valid, int t,
                     const nn::ParamStore& s, const AggregatorConfig& c, Vec* weights = nullptr) {
  const int n = static_cast<int>(tokens.size());
  std::vector<Vec> x;
  for (const Vec& tok : tokens) x.push_back(affine(s, "agg.embed", tok));
  x.push_back(affine(s, "agg.time", time_features(t, c.time_dim)));
  std::vector<bool> key_ok = valid;
  key_ok.push_back(true);
  const int seq = n + 1;
  const int dh = c.dim / c.heads;
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "agg.l" + std::to_string(l) + ".";
    std::vector<Vec> q(seq), k(seq), v(seq);
    for (int i = 0; i < seq; ++i) {
      const Vec h = norm(s, p + "ln1", x[i]);
      q[i] = affine(s, p + "attn.q", h);
      k[i] = affine(s, p + "attn.k", h);
      v[i] = affine(s, p + "attn.v", h);
    }
    std::vector<Vec> att(seq, Vec(c.dim, 0.0));
    for (int i = 0; i < seq; ++i) {
      for (int hd = 0; hd < c.heads; ++hd) {
        Vec score(seq, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < seq; ++j) {
          if (!key_ok[j]) continue;
          double dot = 0.0;
          for (int e = 0; e < dh; ++e) dot += q[i][hd * dh + e] * k[j][hd * dh + e];
          score[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, score[j]);
        }
        double z = 0.0;
        for (int j = 0; j < seq; ++j)
          if (key_ok[j]) z += std::exp(score[j] - mx);
        for (int j = 0; j < seq; ++j) {
          if (!key_ok[j]) continue;
          const double pj = std::exp(score[j] - mx) / z;
          for (int e = 0; e < dh; ++e) att[i][hd * dh + e] += pj * v[j][hd * dh + e];
        }
      }
    }
    for (int i = 0; i < seq; ++i) {
      const Vec o = affine(s, p + "attn.o", att[i]);
      for (int e = 0; e < c.dim; ++e) x[i][e] += o[e];
      Vec h = affine(s, p + "ffn.1", norm(s, p + "ln2", x[i]));
      for (double& e : h) e = silu(e);
      const Vec f = affine(s, p + "ffn.2", h);
      for (int e = 0; e < c.dim; ++e) x[i][e] += f[e];
    }
  }
  Vec out(c.out_channels, 0.0);
  bool any = false;
  for (int i = 0; i < n; ++i) any = any || valid[i];
  if (weights) weights->assign(n, 0.0);
  if (!any) return out;
  Vec logit(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    logit[i] = affine(s, "agg.weight", x[i])[0];
    mx = std::max(mx, logit[i]);
  }
  double z = 0.0;
  for (int i = 0; i < n; ++i)
    if (valid[i]) z += std::exp(logit[i] - mx);
  for (int i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    const double w = std::exp(logit[i] - mx) / z;
    if (weights) (*weights)[i] = w;
    const Vec val = affine(s, "agg.value", x[i]);
    for (int e = 0; e < c.out_channels; ++e) out[e] += w * val[e];
  }
  return out;
}

// Per-view source feature image: raw RGB-D then silu(conv3x3(raw)), zero padded.
inline Image source_features(const Image& raw, const nn::ParamStore& s, const AggregatorConfig& c) {
  const nn::Matrix& w = s.value("agg.tap.w");
  const nn::Matrix& b = s.value("agg.tap.b");
  Image out(raw.height, raw.width, 4 + c.tap_channels);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      for (int ch = 0; ch < 4; ++ch) out.at(y, x, ch) = raw.at(y, x, ch);
      for (int o = 0; o < c.tap_channels; ++o) {
        double acc = b(0, o);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = y + ky - 1, xx = x + kx - 1;
            if (yy < 0 || xx < 0 || yy >= raw.height || xx >= raw.width) continue;
            for (int ci = 0; ci < 4; ++ci) acc += w((ky * 3 + kx) * 4 + ci, o) * raw.at(yy, xx, ci);
          }
        }
        out.at(y, x, 4 + o) = silu(acc);
      }
    }
  }
  return out;
}

inline Vec3 camera_frame(const Camera& cam, const Vec3& p) {
  const Mat4& m = cam.world_to_cam();
  Vec3 out;
  for (int r = 0; r < 3; ++r) out[r] = m(r, 0) * p.x() + m(r, 1) * p.y() + m(r, 2) * p.z() + m(r, 3);
  return out;
}

inline Vec3 center_of(const Camera& cam) {
  // Solve R c + t = 0 with the transpose of the orthonormal block.
  const Mat4& m = cam.world_to_cam();
  Vec3 c;
  for (int i = 0; i < 3; ++i) c[i] = -(m(0, i) * m(0, 3) + m(1, i) * m(1, 3) + m(2, i) * m(2, 3));
  return c;
}

inline void plucker6(const Vec3& origin, const Vec3& dir, double* out) {
  const Vec3 d = dir / dir.norm();
  const Vec3 m = origin.cross(d);
  for (int i = 0; i < 3; ++i) {
    out[i] = d[i];
    out[3 + i] = m[i];
  }
}

// Scalar bilinear gather + aggregation for every (ray, depth sample).
inline FeatureFrustum build_frustum(const ViewSet& vs, int target, const std::vector<double>& depths,
                                    int t, const nn::ParamStore& s, const AggregatorConfig& c) {
  std::vector<Image> maps;
  std::vector<Camera> cams;
  for (std::size_t i = 0; i < vs.target_images.size(); ++i) {
    maps.push_back(source_features(vs.target_images[i], s, c));
    cams.push_back(vs.target_cameras[i]);
  }
  Image in(vs.input_rgb.height, vs.input_rgb.width, 4, 0.0);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int ch = 0; ch < 3; ++ch) in.at(y, x, ch) = vs.input_rgb.at(y, x, ch);
  maps.push_back(source_features(in, s, c));
  cams.push_back(vs.input_camera);

  const Camera& tc = cams[target];
  const int st = c.feature_stride;
  const int gh = tc.height() / st, gw = tc.width() / st;
  const int d_count = static_cast<int>(depths.size()) / (gh * gw);
  const int cin = 4 + c.tap_channels;
  FeatureFrustum f(d_count, gh, gw, c.out_channels);
  const Mat4& w2c = tc.world_to_cam();
  const Vec3 tcenter = center_of(tc);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const double u = gx * st + 0.5 * (st - 1), v = gy * st + 0.5 * (st - 1);
      const Vec3 dcam((u - tc.cx()) / tc.fx(), (v - tc.cy()) / tc.fy(), 1.0);
      Vec3 dworld;
      for (int i = 0; i < 3; ++i)
        dworld[i] = w2c(0, i) * dcam.x() + w2c(1, i) * dcam.y() + w2c(2, i) * dcam.z();
      for (int k = 0; k < d_count; ++k) {
        const double z = depths[(gy * gw + gx) * d_count + k];
        const Vec3 p = tcenter + z * dworld;  // camera-frame depth z along the unnormalized ray
        std::vector<Vec> tokens;
        std::vector<bool> valid;
        for (std::size_t n = 0; n < cams.size(); ++n) {
          Vec tok(cin + 12, 0.0);
          const Vec3 pc = camera_frame(cams[n], p);
          bool ok = pc.z() > 1e-9;
          double pu = 0, pv = 0;
          if (ok) {
            pu = cams[n].fx() * pc.x() / pc.z() + cams[n].cx();
            pv = cams[n].fy() * pc.y() / pc.z() + cams[n].cy();
            ok = pu >= 0 && pv >= 0 && pu <= cams[n].width() - 1 && pv <= cams[n].height() - 1;
          }
          if (ok) {
            const Image& m = maps[n];
            const int x0 = std::min(static_cast<int>(pu), m.width - 1);
            const int y0 = std::min(static_cast<int>(pv), m.height - 1);
            const int x1 = std::min(x0 + 1, m.width - 1), y1 = std::min(y0 + 1, m.height - 1);
            const double fx = pu - x0, fy = pv - y0;
            for (int ch = 0; ch < cin; ++ch) {
              tok[ch] = m.at(y0, x0, ch) * (1 - fx) * (1 - fy) + m.at(y0, x1, ch) * fx * (1 - fy) +
                        m.at(y1, x0, ch) * (1 - fx) * fy + m.at(y1, x1, ch) * fx * fy;
            }
            plucker6(p, center_of(cams[n]) - p, &tok[cin]);
            plucker6(tcenter, dworld, &tok[cin + 6]);
          }
          tokens.push_back(std::move(tok));
          valid.push_back(ok);
        }
        const Vec out = aggregate(tokens, valid, t, s, c);
        for (int ch = 0; ch < c.out_channels; ++ch) f.at(k, gy, gx, ch) = out[ch];
      }
    }
  }
  return f;
}

// Point inside the closed pixel-center rectangle of the camera, tested with
// the four side planes spanned by the corner rays.
inline bool in_frustum(const Camera& cam, const Vec3& p) {
  const Mat3 kinv = cam.intrinsics().inverse();
  const Mat3 rt = cam.rotation().transpose();
  const double w = cam.width() - 1, h = cam.height() - 1;
  const Vec3 corner[4] = {rt * (kinv * Vec3(0, 0, 1)), rt * (kinv * Vec3(w, 0, 1)),
                          rt * (kinv * Vec3(w, h, 1)), rt * (kinv * Vec3(0, h, 1))};
  const Vec3 c = center_of(cam);
  const Vec3 axis = rt * Vec3(0, 0, 1);
  const Vec3 rel = p - c;
  if (!(axis.dot(rel) > 1e-9)) return false;
  const Vec3 inside = rt * (kinv * Vec3(0.5 * w, 0.5 * h, 1));
  for (int i = 0; i < 4; ++i) {
    Vec3 n = corner[i].cross(corner[(i + 1) % 4]);
    if (n.dot(inside) < 0) n = -n;
    if (n.dot(rel) < 0) return false;
  }
  return true;
}

}  // namespace mvd::oracle
