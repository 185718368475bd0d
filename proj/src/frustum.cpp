#include "mvd/frustum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mvd {

using nn::Matrix;
using nn::Var;

nn::Matrix to_matrix(const Image& image) {
  Matrix m(static_cast<Eigen::Index>(image.pixel_count()), image.channels);
  std::copy(image.data.begin(), image.data.end(), m.data());
  return m;
}

Image to_image(const nn::Matrix& m, int height, int width) {
  if (m.rows() != static_cast<Eigen::Index>(height) * width) {
    throw Error(ErrorCode::ShapeMismatch, "matrix rows differ from height*width");
  }
  Image out(height, width, static_cast<int>(m.cols()));
  std::copy(m.data(), m.data() + m.size(), out.data.begin());
  return out;
}

void ViewSet::validate() const {
  if (target_images.empty()) throw Error(ErrorCode::InvalidArgument, "viewset has no targets");
  if (target_images.size() != target_cameras.size()) {
    throw Error(ErrorCode::ShapeMismatch, "viewset image and camera counts differ");
  }
  const int h = input_camera.height();
  const int w = input_camera.width();
  if (input_rgb.height != h || input_rgb.width != w || input_rgb.channels != 3) {
    throw Error(ErrorCode::ShapeMismatch, "input image does not match the input camera");
  }
  for (std::size_t i = 0; i < target_images.size(); ++i) {
    const Image& im = target_images[i];
    if (im.height != h || im.width != w || im.channels != 4 ||
        target_cameras[i].height() != h || target_cameras[i].width() != w) {
      throw Error(ErrorCode::ShapeMismatch, "target view " + std::to_string(i) + " has a bad shape");
    }
  }
}

nn::Matrix FeatureFrustum::to_tokens() const {
  Matrix m(static_cast<Eigen::Index>(depth_samples) * height * width, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int d = 0; d < depth_samples; ++d)
        for (int c = 0; c < channels; ++c)
          m((static_cast<Eigen::Index>(y) * width + x) * depth_samples + d, c) = at(d, y, x, c);
  return m;
}

FeatureFrustum FeatureFrustum::from_tokens(const nn::Matrix& tokens, int d, int h, int w) {
  if (tokens.rows() != static_cast<Eigen::Index>(d) * h * w) {
    throw Error(ErrorCode::ShapeMismatch, "token rows differ from D*H*W");
  }
  FeatureFrustum f(d, h, w, static_cast<int>(tokens.cols()));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < d; ++k)
        for (int c = 0; c < f.channels; ++c)
          f.at(k, y, x, c) = tokens((static_cast<Eigen::Index>(y) * w + x) * d + k, c);
  return f;
}

// ---------------------------------------------------------------------------

namespace {

std::string layer_prefix(int l) { return "agg.l" + std::to_string(l) + "."; }

void add_linear(nn::ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  store.add_glorot(name + ".w", in, out, in, out, rng);
  store.add_zeros(name + ".b", 1, out);
}

Var apply_linear(nn::ParamBinding& bind, const std::string& name, const Var& x) {
  return nn::linear(x, bind(name + ".w"), bind(name + ".b"));
}

}  // namespace

void init_aggregator_params(nn::ParamStore& store, const AggregatorConfig& c, Rng& rng) {
  if (c.dim % c.heads != 0) {
    throw Error(ErrorCode::InvalidConfig, "aggregator width must be divisible by its head count");
  }
  store.add_glorot("agg.tap.w", 9 * 4, c.tap_channels, 9 * 4, c.tap_channels, rng);
  store.add_zeros("agg.tap.b", 1, c.tap_channels);
  add_linear(store, "agg.embed", c.token_channels(), c.dim, rng);
  add_linear(store, "agg.time", c.time_dim, c.dim, rng);
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix(l);
    store.add_constant(p + "ln1.g", 1, c.dim, 1.0);
    store.add_zeros(p + "ln1.b", 1, c.dim);
    add_linear(store, p + "attn.q", c.dim, c.dim, rng);
    add_linear(store, p + "attn.k", c.dim, c.dim, rng);
    add_linear(store, p + "attn.v", c.dim, c.dim, rng);
    add_linear(store, p + "attn.o", c.dim, c.dim, rng);
    store.add_constant(p + "ln2.g", 1, c.dim, 1.0);
    store.add_zeros(p + "ln2.b", 1, c.dim);
    add_linear(store, p + "ffn.1", c.dim, 2 * c.dim, rng);
    add_linear(store, p + "ffn.2", 2 * c.dim, c.dim, rng);
  }
  add_linear(store, "agg.weight", c.dim, 1, rng);
  add_linear(store, "agg.value", c.dim, c.out_channels, rng);
}

std::vector<Image> raw_source_views(const ViewSet& viewset) {
  std::vector<Image> out;
  out.reserve(viewset.target_images.size() + 1);
  for (const Image& im : viewset.target_images) out.push_back(im);
  Image input(viewset.input_rgb.height, viewset.input_rgb.width, 4, 0.0);
  for (std::size_t p = 0; p < viewset.input_rgb.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) input.data[p * 4 + c] = viewset.input_rgb.data[p * 3 + c];
  out.push_back(std::move(input));
  return out;
}

std::vector<Var> source_feature_vars(nn::ParamBinding& bind, std::span<const Image> raw_views,
                                     const AggregatorConfig& config, int height, int width) {
  (void)config;
  nn::ConvSpec spec{height, width, 3, 1, 1};
  Var w = bind("agg.tap.w");
  Var b = bind("agg.tap.b");
  std::vector<Var> out;
  out.reserve(raw_views.size());
  for (const Image& raw : raw_views) {
    if (raw.height != height || raw.width != width || raw.channels != 4) {
      throw Error(ErrorCode::ShapeMismatch, "source view must be H x W x 4");
    }
    Var x = bind.tape().constant(to_matrix(raw));
    Var tap = nn::silu(nn::conv2d(x, w, b, spec));
    const Var parts[] = {x, tap};
    out.push_back(nn::concat_cols(parts));
  }
  return out;
}

SourceMaps source_maps(const ViewSet& viewset, const AggregatorParams& params) {
  viewset.validate();
  nn::Tape tape(false);
  nn::ParamBinding bind(tape, *params.store);
  const int h = viewset.input_camera.height();
  const int w = viewset.input_camera.width();
  const std::vector<Image> raw = raw_source_views(viewset);
  const std::vector<Var> vars = source_feature_vars(bind, raw, params.config, h, w);
  SourceMaps maps;
  for (const Var& v : vars) maps.features.push_back(to_image(v.value(), h, w));
  maps.cameras = viewset.target_cameras;
  maps.cameras.push_back(viewset.input_camera);
  return maps;
}

BilinearTap bilinear_tap(const Camera& camera, const Vec3& point_world) {
  BilinearTap tap;
  const Vec3 pc = camera.rotation() * point_world + camera.translation();
  if (!(pc.z() > kBehindCameraEps)) return tap;
  const double u = camera.fx() * pc.x() / pc.z() + camera.cx();
  const double v = camera.fy() * pc.y() / pc.z() + camera.cy();
  const int w = camera.width();
  const int h = camera.height();
  if (!(u >= 0.0 && u <= w - 1 && v >= 0.0 && v <= h - 1)) return tap;
  const int x0 = std::min(static_cast<int>(std::floor(u)), w - 1);
  const int y0 = std::min(static_cast<int>(std::floor(v)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  tap.valid = true;
  tap.index[0] = y0 * w + x0;
  tap.index[1] = y0 * w + x1;
  tap.index[2] = y1 * w + x0;
  tap.index[3] = y1 * w + x1;
  tap.weight[0] = (1 - fx) * (1 - fy);
  tap.weight[1] = fx * (1 - fy);
  tap.weight[2] = (1 - fx) * fy;
  tap.weight[3] = fx * fy;
  return tap;
}

SampleBundle gather(const SourceMaps& sources, const Vec3& point_world, const Ray& query_ray) {
  const int views = static_cast<int>(sources.features.size());
  const int channels = views > 0 ? sources.features[0].channels : 0;
  SampleBundle b;
  b.features = Matrix::Zero(views, channels);
  b.reference.assign(views, PluckerEmbedding{Vec3::Zero(), Vec3::Zero()});
  b.valid.assign(views, 0);
  b.query = plucker(query_ray);
  for (int n = 0; n < views; ++n) {
    const BilinearTap tap = bilinear_tap(sources.cameras[n], point_world);
    if (!tap.valid) continue;
    b.valid[n] = 1;
    const Image& f = sources.features[n];
    for (int k = 0; k < 4; ++k) {
      for (int c = 0; c < channels; ++c) {
        b.features(n, c) += tap.weight[k] * f.data[static_cast<std::size_t>(tap.index[k]) * channels + c];
      }
    }
    b.reference[n] = plucker(ray_to_camera_center(point_world, sources.cameras[n]));
  }
  return b;
}

SampleBundle gather(const ViewSet& viewset, const AggregatorParams& params,
                    const Vec3& point_world, const Ray& query_ray) {
  return gather(source_maps(viewset, params), point_world, query_ray);
}

// ---------------------------------------------------------------------------

namespace {

// Orders the rows of each group: valid rows first, then lexicographically by
// value. Equal multisets of tokens therefore produce identical transformer
// inputs, which makes aggregation bit-exactly order independent.
std::vector<int> canonical_order(const Matrix& tokens, std::span<const std::uint8_t> valid,
                                 int len) {
  const int rows = static_cast<int>(tokens.rows());
  std::vector<int> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  const Eigen::Index cols = tokens.cols();
  for (int g = 0; g < rows / len; ++g) {
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(g) * len;
    std::sort(first, first + len, [&](int a, int b) {
      if (valid[a] != valid[b]) return valid[a] > valid[b];
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (tokens(a, c) != tokens(b, c)) return tokens(a, c) < tokens(b, c);
      }
      return false;
    });
  }
  return perm;
}

void fill_plucker(Matrix& m, Eigen::Index row, Eigen::Index col, const PluckerEmbedding& p) {
  const auto a = p.as_array();
  for (int i = 0; i < 6; ++i) m(row, col + i) = a[i];
}

}  // namespace

Var aggregator_forward(nn::ParamBinding& bind, const Var& tokens,
                       std::span<const std::uint8_t> valid, int len, int t,
                       const AggregatorConfig& c, std::vector<double>* weights) {
  if (tokens.cols() != c.token_channels() || tokens.rows() % len != 0 ||
      valid.size() != static_cast<std::size_t>(tokens.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "aggregator token matrix has the wrong shape");
  }
  nn::Tape& tape = bind.tape();
  const int groups = static_cast<int>(tokens.rows() / len);
  const int seq = len + 1;

  Var x = apply_linear(bind, "agg.embed", tokens);
  Var time = apply_linear(bind, "agg.time", tape.constant(nn::timestep_embedding(t, c.time_dim)));
  x = nn::append_group_token(x, time, len);

  std::vector<std::uint8_t> key_mask(static_cast<std::size_t>(groups) * seq, 1);
  for (int g = 0; g < groups; ++g)
    for (int j = 0; j < len; ++j) key_mask[static_cast<std::size_t>(g) * seq + j] = valid[g * len + j];

  const nn::AttentionShape shape{groups, seq, seq, c.heads};
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix(l);
    Var h = nn::layer_norm(x, bind(p + "ln1.g"), bind(p + "ln1.b"));
    Var q = apply_linear(bind, p + "attn.q", h);
    Var k = apply_linear(bind, p + "attn.k", h);
    Var v = apply_linear(bind, p + "attn.v", h);
    Var a = nn::grouped_attention(q, k, v, shape, key_mask);
    x = nn::add(x, apply_linear(bind, p + "attn.o", a));
    h = nn::layer_norm(x, bind(p + "ln2.g"), bind(p + "ln2.b"));
    h = apply_linear(bind, p + "ffn.2", nn::silu(apply_linear(bind, p + "ffn.1", h)));
    x = nn::add(x, h);
  }

  std::vector<int> view_rows;
  view_rows.reserve(tokens.rows());
  for (int g = 0; g < groups; ++g)
    for (int j = 0; j < len; ++j) view_rows.push_back(g * seq + j);
  Var views = nn::select_rows(x, std::move(view_rows));
  Var logits = apply_linear(bind, "agg.weight", views);
  Var values = apply_linear(bind, "agg.value", views);
  return nn::masked_softmax_pool(logits, values, len, valid, weights);
}

AggregateResult aggregate(const SampleBundle& bundle, int t, const AggregatorParams& params) {
  const int len = bundle.entries();
  const int cin = static_cast<int>(bundle.features.cols());
  if (len < 1 || cin + 12 != params.config.token_channels()) {
    throw Error(ErrorCode::ShapeMismatch, "bundle does not match the aggregator");
  }
  Matrix tokens = Matrix::Zero(len, cin + 12);
  for (int n = 0; n < len; ++n) {
    if (!bundle.valid[n]) continue;
    tokens.row(n).head(cin) = bundle.features.row(n);
    fill_plucker(tokens, n, cin, bundle.reference[n]);
    fill_plucker(tokens, n, cin + 6, bundle.query);
  }
  const std::vector<int> perm = canonical_order(tokens, bundle.valid, len);
  Matrix sorted(len, tokens.cols());
  std::vector<std::uint8_t> sorted_valid(len);
  for (int i = 0; i < len; ++i) {
    sorted.row(i) = tokens.row(perm[i]);
    sorted_valid[i] = bundle.valid[perm[i]];
  }

  nn::Tape tape(false);
  nn::ParamBinding bind(tape, *params.store);
  std::vector<double> w;
  Var out = aggregator_forward(bind, tape.constant(std::move(sorted)), sorted_valid, len, t,
                               params.config, &w);
  AggregateResult r;
  r.feature.assign(out.value().data(), out.value().data() + out.value().size());
  r.weights.assign(len, 0.0);
  for (int i = 0; i < len; ++i) r.weights[perm[i]] = w[i];
  r.all_invalid = std::none_of(bundle.valid.begin(), bundle.valid.end(),
                               [](std::uint8_t v) { return v != 0; });
  return r;
}

Vec2 frustum_ray_pixel(int y, int x, int stride) {
  const double off = 0.5 * (stride - 1);
  return Vec2(x * stride + off, y * stride + off);
}

std::vector<double> ray_depth_values(const Image& image, int stride) {
  if (image.channels != 4) throw Error(ErrorCode::ShapeMismatch, "expected an RGB-D image");
  const int gh = image.height / stride;
  const int gw = image.width / stride;
  std::vector<double> out(static_cast<std::size_t>(gh) * gw);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const Vec2 p = frustum_ray_pixel(y, x, stride);
      const int x0 = static_cast<int>(std::floor(p.x()));
      const int y0 = static_cast<int>(std::floor(p.y()));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const int y1 = std::min(y0 + 1, image.height - 1);
      const double fx = p.x() - x0;
      const double fy = p.y() - y0;
      out[static_cast<std::size_t>(y) * gw + x] =
          (1 - fx) * (1 - fy) * image.at(y0, x0, 3) + fx * (1 - fy) * image.at(y0, x1, 3) +
          (1 - fx) * fy * image.at(y1, x0, 3) + fx * fy * image.at(y1, x1, 3);
    }
  }
  return out;
}

std::vector<double> linspace_depths(int rays, int count, double near, double far) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "dense depth count must be >= 1");
  if (!(near < far)) throw Error(ErrorCode::InvalidBounds, "near must be less than far");
  std::vector<double> levels(count);
  if (count == 1) {
    levels[0] = 0.5 * (near + far);
  } else {
    for (int i = 0; i < count; ++i) levels[i] = near + (far - near) * i / (count - 1);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rays) * count);
  for (int r = 0; r < rays; ++r) out.insert(out.end(), levels.begin(), levels.end());
  return out;
}

Var frustum_tokens(nn::ParamBinding& bind, std::span<const Var> sources,
                   std::span<const Camera> cameras, int target_index,
                   std::span<const double> depths, int depth_samples, int t,
                   const AggregatorConfig& config, std::vector<std::uint8_t>* all_invalid,
                   FrustumStats* stats) {
  if (sources.size() != cameras.size() || sources.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "sources and cameras differ in count");
  }
  if (target_index < 0 || target_index + 1 >= static_cast<int>(cameras.size())) {
    throw Error(ErrorCode::InvalidArgument, "target index out of range");
  }
  const Camera& target = cameras[target_index];
  const int stride = config.feature_stride;
  const int gh = target.height() / stride;
  const int gw = target.width() / stride;
  const int rays = gh * gw;
  if (depth_samples < 1 || depths.size() != static_cast<std::size_t>(rays) * depth_samples) {
    throw Error(ErrorCode::ShapeMismatch, "depth array does not match the frustum grid");
  }
  const int views = static_cast<int>(cameras.size());
  const int cin = static_cast<int>(sources[0].cols());
  const std::size_t points = static_cast<std::size_t>(rays) * depth_samples;
  const std::size_t rows = points * views;

  std::vector<nn::GatherTap> taps(rows);
  std::vector<std::uint8_t> valid(rows, 0);
  Matrix rays_embed = Matrix::Zero(static_cast<Eigen::Index>(rows), 12);
  std::vector<Vec3> centers(views);
  for (int n = 0; n < views; ++n) centers[n] = cameras[n].center();

  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      const int r = y * gw + x;
      const Vec2 px = frustum_ray_pixel(y, x, stride);
      const Ray query = ray_for_pixel(target, px);
      const PluckerEmbedding qp = plucker(query);
      for (int d = 0; d < depth_samples; ++d) {
        const std::size_t g = static_cast<std::size_t>(r) * depth_samples + d;
        const Vec3 p = unproject(target, px, depths[g]);
        for (int n = 0; n < views; ++n) {
          const std::size_t row = g * views + n;
          const BilinearTap bt = bilinear_tap(cameras[n], p);
          if (!bt.valid) continue;
          valid[row] = 1;
          nn::GatherTap& tap = taps[row];
          tap.source = n;
          std::copy(bt.index, bt.index + 4, tap.index);
          std::copy(bt.weight, bt.weight + 4, tap.weight);
          const Vec3 delta = centers[n] - p;
          fill_plucker(rays_embed, static_cast<Eigen::Index>(row), 0,
                       plucker(Ray{p, delta / delta.norm()}));
          fill_plucker(rays_embed, static_cast<Eigen::Index>(row), 6, qp);
        }
      }
    }
  }

  if (all_invalid) {
    all_invalid->assign(points, 0);
    for (std::size_t g = 0; g < points; ++g) {
      bool any = false;
      for (int n = 0; n < views; ++n) any = any || valid[g * views + n];
      (*all_invalid)[g] = any ? 0 : 1;
    }
  }

  nn::Tape& tape = bind.tape();
  Var feats = nn::bilinear_gather(sources, std::move(taps));
  const Var parts[] = {feats, tape.constant(std::move(rays_embed))};
  Var tokens = nn::concat_cols(parts);

  std::vector<int> perm = canonical_order(tokens.value(), valid, views);
  std::vector<std::uint8_t> sorted_valid(rows);
  for (std::size_t i = 0; i < rows; ++i) sorted_valid[i] = valid[perm[i]];
  tokens = nn::select_rows(tokens, std::move(perm));

  if (stats) {
    stats->points += points;
    stats->tokens += rows;
    stats->bytes += rows * (sizeof(nn::GatherTap) + sizeof(double) * (cin + 12 + 12) * 2);
  }
  return aggregator_forward(bind, tokens, sorted_valid, views, t, config, nullptr);
}

namespace {

FeatureFrustum build_from_depths(const ViewSet& viewset, int target_index,
                                 std::span<const double> depths, int t,
                                 const AggregatorParams& params) {
  viewset.validate();
  if (target_index < 0 || target_index >= viewset.target_count()) {
    throw Error(ErrorCode::InvalidArgument, "target index out of range");
  }
  const int stride = params.config.feature_stride;
  const int gh = viewset.input_camera.height() / stride;
  const int gw = viewset.input_camera.width() / stride;
  const std::size_t rays = static_cast<std::size_t>(gh) * gw;
  if (depths.empty() || depths.size() % rays != 0) {
    throw Error(ErrorCode::ShapeMismatch, "depth array does not match the frustum grid");
  }
  const int d = static_cast<int>(depths.size() / rays);

  nn::Tape tape(false);
  nn::ParamBinding bind(tape, *params.store);
  const std::vector<Image> raw = raw_source_views(viewset);
  const std::vector<Var> sources = source_feature_vars(
      bind, raw, params.config, viewset.input_camera.height(), viewset.input_camera.width());
  std::vector<Camera> cameras = viewset.target_cameras;
  cameras.push_back(viewset.input_camera);
  std::vector<std::uint8_t> invalid;
  Var tokens = frustum_tokens(bind, sources, cameras, target_index, depths, d, t, params.config,
                              &invalid);
  FeatureFrustum f = FeatureFrustum::from_tokens(tokens.value(), d, gh, gw);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x)
      for (int k = 0; k < d; ++k)
        f.all_invalid[(static_cast<std::size_t>(k) * gh + y) * gw + x] =
            invalid[(static_cast<std::size_t>(y) * gw + x) * d + k];
  return f;
}

}  // namespace

FeatureFrustum build_frustum(const ViewSet& viewset, int target_index,
                             std::span<const double> depths, int t,
                             const AggregatorParams& params) {
  return build_from_depths(viewset, target_index, depths, t, params);
}

FeatureFrustum build_frustum_dense(const ViewSet& viewset, int target_index, int dense_count,
                                   double near, double far, int t,
                                   const AggregatorParams& params) {
  const int stride = params.config.feature_stride;
  const int rays = (viewset.input_camera.height() / stride) * (viewset.input_camera.width() / stride);
  const std::vector<double> depths = linspace_depths(rays, dense_count, near, far);
  return build_from_depths(viewset, target_index, depths, t, params);
}

}  // namespace mvd
