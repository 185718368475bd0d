#include "mvd/denoiser.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mvd {

using nn::Matrix;
using nn::Var;

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (image_size < 4 || image_size % 4 != 0) fail("image size must be a positive multiple of 4");
  if (channels < 2 || channels % 2 != 0) fail("backbone channels must be even");
  if (channels % attn_heads != 0) fail("backbone channels must be divisible by the head count");
  if (time_dim < 2 || time_dim % 2 != 0) fail("time embedding width must be even");
  if (emb_dim < 1) fail("conditioning width must be positive");
  if (use_frustum && image_size / aggregator.feature_stride != image_size / 2) {
    fail("the frustum grid must match the half-resolution level (feature stride 2)");
  }
  if (aggregator.dim % aggregator.heads != 0) fail("aggregator width must be divisible by heads");
}

namespace {

void add_linear(nn::ParamStore& s, const std::string& name, int in, int out, Rng& rng) {
  s.add_glorot(name + ".w", in, out, in, out, rng);
  s.add_zeros(name + ".b", 1, out);
}

void add_conv(nn::ParamStore& s, const std::string& name, int cin, int cout, Rng& rng) {
  s.add_glorot(name + ".w", 9 * cin, 9 * cout, 9 * cin, cout, rng);
  s.add_zeros(name + ".b", 1, cout);
}

void add_resblock(nn::ParamStore& s, const std::string& name, int c, int emb, Rng& rng) {
  add_conv(s, name + ".conv1", c, c, rng);
  add_linear(s, name + ".emb", emb, c, rng);
  add_conv(s, name + ".conv2", c, c, rng);
}

void add_cross_attention(nn::ParamStore& s, const std::string& name, int c, int cf, Rng& rng) {
  add_linear(s, name + ".q", c, c, rng);
  add_linear(s, name + ".k", cf, c, rng);
  add_linear(s, name + ".v", cf, c, rng);
  s.add_zeros(name + ".o.w", c, c);
  s.add_zeros(name + ".o.b", 1, c);
}

Var lin(nn::ParamBinding& b, const std::string& name, const Var& x) {
  return nn::linear(x, b(name + ".w"), b(name + ".b"));
}

Var conv(nn::ParamBinding& b, const std::string& name, const Var& x, int h, int w, int stride = 1) {
  return nn::conv2d(x, b(name + ".w"), b(name + ".b"), nn::ConvSpec{h, w, 3, stride, 1});
}

Var resblock(nn::ParamBinding& b, const std::string& name, const Var& x, const Var& emb, int h,
             int w) {
  Var hid = conv(b, name + ".conv1", nn::silu(x), h, w);
  hid = nn::add_row(hid, lin(b, name + ".emb", emb));
  hid = conv(b, name + ".conv2", nn::silu(hid), h, w);
  return nn::add(x, hid);
}

Var cross_attention(nn::ParamBinding& b, const std::string& name, const Var& x, const Var& frustum,
                    int depth_samples, int heads, std::span<const std::uint8_t> mask) {
  Var q = lin(b, name + ".q", x);
  Var k = lin(b, name + ".k", frustum);
  Var v = lin(b, name + ".v", frustum);
  const nn::AttentionShape shape{static_cast<int>(x.rows()), 1, depth_samples, heads};
  Var a = nn::grouped_attention(q, k, v, shape, mask);
  return nn::add(x, lin(b, name + ".o", a));
}

}  // namespace

void init_denoiser_params(nn::ParamStore& s, const DenoiserConfig& c, Rng& rng) {
  c.validate();
  const int c0 = c.level0_channels();
  const int c1 = c.channels;
  const int cf = c.aggregator.out_channels;
  add_linear(s, "den.cond.fc1", c.time_dim + 16, c.emb_dim, rng);
  add_linear(s, "den.cond.fc2", c.emb_dim, c.emb_dim, rng);
  add_linear(s, "den.cond.fc3", c.emb_dim, c.emb_dim, rng);
  add_conv(s, "den.conv_in", 8, c0, rng);
  add_resblock(s, "den.res0", c0, c.emb_dim, rng);
  add_conv(s, "den.down1", c0, c1, rng);
  add_resblock(s, "den.res1", c1, c.emb_dim, rng);
  if (c.use_frustum) add_cross_attention(s, "den.xattn1", c1, cf, rng);
  add_conv(s, "den.down2", c1, c1, rng);
  add_resblock(s, "den.res2", c1, c.emb_dim, rng);
  add_conv(s, "den.up1", 2 * c1, c1, rng);
  add_resblock(s, "den.res3", c1, c.emb_dim, rng);
  if (c.use_frustum) add_cross_attention(s, "den.xattn2", c1, cf, rng);
  add_conv(s, "den.up0", c1 + c0, c0, rng);
  add_resblock(s, "den.res4", c0, c.emb_dim, rng);
  add_conv(s, "den.conv_out", c0, 4, rng);
  if (c.use_frustum) init_aggregator_params(s, c.aggregator, rng);
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(derive_seed(seed, "denoiser-init"));
  init_denoiser_params(params_, config_, rng);
  params_.round_to_float();
}

Denoiser::Denoiser(const DenoiserConfig& config, nn::ParamStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  nn::ParamStore reference;
  Rng rng(0);
  init_denoiser_params(reference, config_, rng);
  if (reference.names() != params_.names()) {
    throw Error(ErrorCode::CorruptCheckpoint, "parameter names do not match the configuration");
  }
  for (const std::string& n : reference.names()) {
    if (reference.value(n).rows() != params_.value(n).rows() ||
        reference.value(n).cols() != params_.value(n).cols()) {
      throw Error(ErrorCode::CorruptCheckpoint, "parameter " + n + " has the wrong shape");
    }
  }
}

Matrix camera_condition(const Mat4& target_from_input) {
  Matrix m(1, 16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(0, r * 4 + c) = target_from_input(r, c);
  return m;
}

Image pad_rgb(const Image& rgb) {
  Image out(rgb.height, rgb.width, 4, 0.0);
  for (std::size_t p = 0; p < rgb.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) out.data[p * 4 + c] = rgb.data[p * 3 + c];
  return out;
}

Var denoiser_forward(nn::ParamBinding& b, const DenoiserConfig& c, const Var& x_t,
                     const Var& y_pad, const Mat4& target_from_input, const Var& frustum,
                     int depth_samples, std::span<const std::uint8_t> frustum_mask, int t) {
  const int s0 = c.image_size;
  const int s1 = s0 / 2;
  const int s2 = s0 / 4;
  if (x_t.rows() != s0 * s0 || x_t.cols() != 4 || y_pad.rows() != x_t.rows() || y_pad.cols() != 4) {
    throw Error(ErrorCode::ShapeMismatch, "denoiser inputs must be (H*W) x 4");
  }
  nn::Tape& tape = b.tape();

  Matrix cond(1, c.time_dim + 16);
  cond << nn::timestep_embedding(t, c.time_dim), camera_condition(target_from_input);
  Var emb = nn::silu(lin(b, "den.cond.fc1", tape.constant(std::move(cond))));
  emb = nn::silu(lin(b, "den.cond.fc2", emb));
  emb = nn::silu(lin(b, "den.cond.fc3", emb));

  Var f;
  std::vector<std::uint8_t> empty_mask;
  if (c.use_frustum) {
    if (frustum.valid()) {
      if (frustum.rows() != static_cast<Eigen::Index>(s1) * s1 * depth_samples ||
          frustum.cols() != c.aggregator.out_channels) {
        throw Error(ErrorCode::ShapeMismatch, "frustum does not match the denoiser grid");
      }
      f = frustum;
    } else {
      depth_samples = 1;
      f = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(s1) * s1, c.aggregator.out_channels));
      frustum_mask = empty_mask;
    }
  }

  const Var in_parts[] = {x_t, y_pad};
  Var h = conv(b, "den.conv_in", nn::concat_cols(in_parts), s0, s0);
  h = resblock(b, "den.res0", h, emb, s0, s0);
  const Var skip0 = h;
  h = conv(b, "den.down1", h, s0, s0, 2);
  h = resblock(b, "den.res1", h, emb, s1, s1);
  if (c.use_frustum) {
    h = cross_attention(b, "den.xattn1", h, f, depth_samples, c.attn_heads, frustum_mask);
  }
  const Var skip1 = h;
  h = conv(b, "den.down2", h, s1, s1, 2);
  h = resblock(b, "den.res2", h, emb, s2, s2);
  h = nn::upsample_nearest2x(h, s2, s2);
  const Var up1_parts[] = {h, skip1};
  h = conv(b, "den.up1", nn::concat_cols(up1_parts), s1, s1);
  h = resblock(b, "den.res3", h, emb, s1, s1);
  if (c.use_frustum) {
    h = cross_attention(b, "den.xattn2", h, f, depth_samples, c.attn_heads, frustum_mask);
  }
  h = nn::upsample_nearest2x(h, s1, s1);
  const Var up0_parts[] = {h, skip0};
  h = conv(b, "den.up0", nn::concat_cols(up0_parts), s0, s0);
  h = resblock(b, "den.res4", h, emb, s0, s0);
  return conv(b, "den.conv_out", nn::silu(h), s0, s0);
}

Image Denoiser::forward(const Image& input_rgb, const Image& x_t, const Mat4& target_from_input,
                        const FeatureFrustum* frustum, int t) const {
  const int s = config_.image_size;
  if (input_rgb.height != s || input_rgb.width != s || input_rgb.channels != 3 ||
      x_t.height != s || x_t.width != s || x_t.channels != 4) {
    throw Error(ErrorCode::ShapeMismatch, "denoiser input shape differs from the configuration");
  }
  nn::Tape tape(false);
  nn::ParamBinding bind(tape, params_);
  Var x = tape.constant(to_matrix(x_t));
  Var y = tape.constant(to_matrix(pad_rgb(input_rgb)));
  Var f;
  int d = 1;
  std::vector<std::uint8_t> mask;
  if (frustum && config_.use_frustum) {
    f = tape.constant(frustum->to_tokens());
    d = frustum->depth_samples;
    mask.resize(frustum->all_invalid.size());
    for (int yy = 0; yy < frustum->height; ++yy)
      for (int xx = 0; xx < frustum->width; ++xx)
        for (int k = 0; k < d; ++k)
          mask[(static_cast<std::size_t>(yy) * frustum->width + xx) * d + k] =
              frustum->all_invalid[(static_cast<std::size_t>(k) * frustum->height + yy) *
                                       frustum->width + xx] ? 0 : 1;
  }
  Var out = denoiser_forward(bind, config_, x, y, target_from_input, f, d, mask, t);
  return to_image(out.value(), s, s);
}

std::string Denoiser::parameter_report() const {
  std::ostringstream os;
  for (const std::string& n : params_.names()) {
    const Matrix& m = params_.value(n);
    os << std::left << std::setw(28) << n << ' ' << m.rows() << 'x' << m.cols() << ' '
       << m.size() << '\n';
  }
  os << "total " << params_.scalar_count() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<double> frustum_depths(const Image& x_t, int t, const DepthSampleParams& depth,
                                   const NoiseSchedule& schedule, const DepthRange& range,
                                   int stride, Rng& rng) {
  std::vector<double> d = ray_depth_values(x_t, stride);
  for (double& v : d) v = std::clamp(v, -1.0, 1.05);
  std::vector<double> samples = sample_depths(d, t, depth, schedule, rng, -1.0, 1.0);
  for (double& v : samples) v = range.denormalize(v);
  return samples;
}

NoiseDraw draw_noise(const TrainingExample& ex, const NoiseSchedule& schedule,
                     const DepthSampleParams& depth, const DepthRange& range, int stride,
                     double drop_probability, Rng& rng) {
  NoiseDraw draw;
  draw.t = std::uniform_int_distribution<int>(1, schedule.steps())(rng);
  draw.drop_condition = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < drop_probability;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const Image& target : ex.targets) {
    Image eps(target.height, target.width, target.channels);
    for (double& v : eps.data) v = normal(rng);
    draw.noise.push_back(std::move(eps));
  }
  const std::vector<Image> noisy = noisy_targets(ex, draw, schedule);
  for (const Image& x : noisy) {
    draw.depths.push_back(frustum_depths(x, draw.t, depth, schedule, range, stride, rng));
  }
  return draw;
}

std::vector<Image> noisy_targets(const TrainingExample& ex, const NoiseDraw& draw,
                                 const NoiseSchedule& schedule) {
  if (draw.noise.size() != ex.targets.size()) {
    throw Error(ErrorCode::ShapeMismatch, "noise draw does not match the target count");
  }
  std::vector<Image> out;
  for (std::size_t i = 0; i < ex.targets.size(); ++i) {
    Image x(ex.targets[i].height, ex.targets[i].width, 4);
    x.data = forward_noise(ex.targets[i].data, draw.t, draw.noise[i].data, schedule);
    out.push_back(std::move(x));
  }
  return out;
}

LossResult diffusion_loss(const Denoiser& model, const TrainingExample& ex, const NoiseDraw& draw,
                          const NoiseSchedule& schedule, bool with_gradients) {
  const DenoiserConfig& c = model.config();
  const int s = c.image_size;
  const int n = static_cast<int>(ex.targets.size());
  if (n < 1 || ex.cameras.size() != ex.targets.size()) {
    throw Error(ErrorCode::ShapeMismatch, "training example needs matching targets and cameras");
  }
  const std::vector<Image> noisy = noisy_targets(ex, draw, schedule);

  nn::Tape tape(with_gradients);
  nn::ParamBinding bind(tape, model.params());
  Image y = draw.drop_condition ? Image(s, s, 3, 0.0) : ex.input_rgb;
  Var y_pad = tape.constant(to_matrix(pad_rgb(y)));

  std::vector<Var> sources;
  std::vector<Camera> cameras = ex.cameras;
  cameras.push_back(ex.input_camera);
  if (c.use_frustum && !draw.drop_condition) {
    std::vector<Image> raw = noisy;
    raw.push_back(pad_rgb(y));
    sources = source_feature_vars(bind, raw, c.aggregator, s, s);
  }

  std::vector<Var> preds;
  Matrix target(static_cast<Eigen::Index>(n) * s * s, 4);
  for (int i = 0; i < n; ++i) {
    Var f;
    int d = 1;
    std::vector<std::uint8_t> mask;
    if (!sources.empty()) {
      d = static_cast<int>(draw.depths[i].size() / ((s / 2) * (s / 2)));
      std::vector<std::uint8_t> invalid;
      f = frustum_tokens(bind, sources, cameras, i, draw.depths[i], d, draw.t, c.aggregator,
                         &invalid);
      mask.resize(invalid.size());
      for (std::size_t k = 0; k < invalid.size(); ++k) mask[k] = invalid[k] ? 0 : 1;
    }
    Var x = tape.constant(to_matrix(noisy[i]));
    preds.push_back(denoiser_forward(bind, c, x, y_pad, relative_pose(ex.cameras[i], ex.input_camera),
                                     f, d, mask, draw.t));
    target.middleRows(static_cast<Eigen::Index>(i) * s * s, s * s) = to_matrix(draw.noise[i]);
  }
  Var loss = nn::mse(nn::concat_rows(preds), target);
  LossResult r;
  r.loss = loss.value()(0, 0);
  if (with_gradients) {
    tape.backward(loss);
    r.grads = bind.gradients();
  }
  return r;
}

}  // namespace mvd
