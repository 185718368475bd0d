#include "mvd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "json.hpp"
#include "mvd/parallel.hpp"

namespace mvd {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Var;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (steps < 0) fail("train steps must be >= 0");
  if (batch_size < 1) fail("batch size must be >= 1");
  if (!(lr > 0.0)) fail("learning rate must be positive");
  if (views_per_sample < 2) fail("views per sample must be >= 2 (one input and one target)");
  if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) fail("cfg dropout must lie in [0, 1]");
  if (checkpoint_every < 0) fail("checkpoint cadence must be >= 0");
  if (!(grad_clip >= 0.0)) fail("gradient clip must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema decay must lie in [0, 1)");
}

TrainingExample make_example(const Dataset& data, int views_per_sample, Rng& rng) {
  if (data.scenes.empty()) throw Error(ErrorCode::InvalidArgument, "dataset has no scenes");
  const int si = std::uniform_int_distribution<int>(0, static_cast<int>(data.scenes.size()) - 1)(rng);
  const SceneRecord& rec = data.scenes[si];
  const int nv = static_cast<int>(rec.views.size());
  if (nv < views_per_sample) {
    throw Error(ErrorCode::InvalidArgument,
                rec.name + " has fewer views than views_per_sample");
  }
  // Partial Fisher-Yates: the first views_per_sample entries are a uniform
  // ordered draw without replacement.
  std::vector<int> idx(nv);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < views_per_sample; ++i) {
    const int j = std::uniform_int_distribution<int>(i, nv - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  const RenderedView& input = rec.views[idx[0]];
  TrainingExample ex(input.camera);
  ex.input_rgb = input.rgb;
  for (int i = 1; i < views_per_sample; ++i) {
    ex.targets.push_back(rec.views[idx[i]].rgbd());
    ex.cameras.push_back(rec.views[idx[i]].camera);
  }
  return ex;
}

TrainResult train(Denoiser& model, const Dataset& data, const TrainConfig& config,
                  const NoiseSchedule& schedule, const DepthSampleParams& depth,
                  const TrainHooks& hooks) {
  config.validate();
  nn::Adam adam(nn::AdamConfig{config.lr});
  const DepthRange range = data.depth_range();
  const int stride = model.config().aggregator.feature_stride;
  TrainResult result;
  result.losses.reserve(config.steps);
  const bool use_ema = config.ema_decay > 0.0;
  nn::ParamStore ema = model.params();
  auto averaged = [&] { return Denoiser(model.config(), ema); };
  for (int step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, "train-step", static_cast<std::uint64_t>(step)));
    double loss = 0.0;
    nn::Gradients total;
    for (int b = 0; b < config.batch_size; ++b) {
      const TrainingExample ex = make_example(data, config.views_per_sample, rng);
      const NoiseDraw draw = draw_noise(ex, schedule, depth, range, stride, config.cfg_dropout, rng);
      LossResult r = diffusion_loss(model, ex, draw, schedule, true);
      loss += r.loss;
      if (total.empty()) {
        total = std::move(r.grads);
      } else {
        for (auto& [name, g] : r.grads) total[name] += g;
      }
    }
    loss /= config.batch_size;
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    }
    if (config.batch_size > 1) {
      for (auto& [name, g] : total) g /= config.batch_size;
    }
    if (config.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& [name, g] : total) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > config.grad_clip) {
        for (auto& [name, g] : total) g *= config.grad_clip / norm;
      }
    }
    if (config.cosine_decay) {
      adam.set_lr(0.5 * config.lr * (1.0 + std::cos(M_PI * step / config.steps)));
    }
    adam.step(model.params(), total);
    model.params().round_to_float();
    if (use_ema) {
      // Short runs would otherwise keep the initial weights for too long.
      const double d = std::min(config.ema_decay, (1.0 + step) / (10.0 + step));
      for (const std::string& name : ema.names()) {
        ema.value(name) = d * ema.value(name) + (1.0 - d) * model.params().value(name);
      }
      ema.round_to_float();
    }
    result.losses.push_back(loss);
    if (hooks.on_step) hooks.on_step(step, loss);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 &&
        (step + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(step + 1, use_ema ? averaged() : model);
    }
  }
  if (use_ema) model.params() = ema;
  return result;
}

void write_loss_curve(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out << "step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

// ---------------------------------------------------------------------------

SampleResult sample(const Denoiser& model, const Image& input_rgb, const Camera& input_camera,
                    const std::vector<Camera>& target_cameras, const NoiseSchedule& schedule,
                    const SampleConfig& config) {
  const DenoiserConfig& mc = model.config();
  const int s = mc.image_size;
  const int n = static_cast<int>(target_cameras.size());
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sampling needs at least one target camera");
  if (input_rgb.height != s || input_rgb.width != s || input_rgb.channels != 3) {
    throw Error(ErrorCode::ShapeMismatch, "input image does not match the model resolution");
  }
  for (const Camera& c : target_cameras) {
    if (c.width() != s || c.height() != s) {
      throw Error(ErrorCode::ShapeMismatch, "target camera does not match the model resolution");
    }
  }
  Rng rng(derive_seed(config.seed, "sample"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Image> x(n, Image(s, s, 4));
  for (Image& im : x)
    for (double& v : im.data) v = normal(rng);
  if (!config.initial_state.empty()) {
    if (static_cast<int>(config.initial_state.size()) != n) {
      throw Error(ErrorCode::ShapeMismatch, "initial state needs one image per target");
    }
    for (int i = 0; i < n; ++i) {
      const Image& im = config.initial_state[i];
      if (im.height != s || im.width != s || im.channels != 4) {
        throw Error(ErrorCode::ShapeMismatch, "initial state image has the wrong shape");
      }
      x[i] = im;
    }
  }

  std::vector<Camera> cameras = target_cameras;
  cameras.push_back(input_camera);
  std::vector<Mat4> rel(n);
  for (int i = 0; i < n; ++i) rel[i] = relative_pose(target_cameras[i], input_camera);
  const Matrix y_cond = to_matrix(pad_rgb(input_rgb));
  const Matrix y_zero = Matrix::Zero(y_cond.rows(), y_cond.cols());
  const bool guided = config.omega != 1.0;
  const int stride = mc.aggregator.feature_stride;
  const AggregatorParams agg = model.aggregator();

  SampleResult result(input_camera);
  for (int t = schedule.steps(); t >= 1; --t) {
    if (std::find(config.snapshot_steps.begin(), config.snapshot_steps.end(), t) !=
        config.snapshot_steps.end()) {
      result.snapshots[t] = x;
    }
    std::vector<std::vector<double>> depths(n);
    std::vector<Matrix> source_values;
    if (mc.use_frustum) {
      for (int i = 0; i < n; ++i) {
        depths[i] = frustum_depths(x[i], t, config.depth, schedule, config.range, stride, rng);
      }
      nn::Tape tape(false);
      nn::ParamBinding bind(tape, model.params());
      std::vector<Image> raw = x;
      raw.push_back(pad_rgb(input_rgb));
      for (const Var& v : source_feature_vars(bind, raw, mc.aggregator, s, s)) {
        source_values.push_back(v.value());
      }
    }

    std::vector<Image> eps(n);
    parallel_for(n, config.threads, [&](int i) {
      nn::Tape tape(false);
      nn::ParamBinding bind(tape, model.params());
      Var xt = tape.constant(to_matrix(x[i]));
      Var f;
      int d = 1;
      std::vector<std::uint8_t> mask;
      if (mc.use_frustum) {
        std::vector<Var> sources;
        for (const Matrix& m : source_values) sources.push_back(tape.constant(m));
        d = config.depth.samples;
        std::vector<std::uint8_t> invalid;
        f = frustum_tokens(bind, sources, cameras, i, depths[i], d, t, agg.config, &invalid);
        mask.resize(invalid.size());
        for (std::size_t k = 0; k < invalid.size(); ++k) mask[k] = invalid[k] ? 0 : 1;
      }
      Var cond = denoiser_forward(bind, mc, xt, tape.constant(y_cond), rel[i], f, d, mask, t);
      Image e = to_image(cond.value(), s, s);
      if (guided) {
        Var unc = denoiser_forward(bind, mc, xt, tape.constant(y_zero), rel[i], Var(), 1, {}, t);
        const Image u = to_image(unc.value(), s, s);
        e.data = cfg_combine(e.data, u.data, config.omega);
      }
      eps[i] = std::move(e);
    });

    for (int i = 0; i < n; ++i) x[i].data = ancestral_step(x[i].data, eps[i].data, t, schedule, rng);
  }

  for (Image& im : x)
    for (double& v : im.data) v = std::clamp(v, -1.0, 1.0);
  result.views.input_rgb = input_rgb;
  result.views.target_images = std::move(x);
  result.views.target_cameras = target_cameras;
  return result;
}

// ---------------------------------------------------------------------------

Extraction extract_pointcloud(std::span<const Image> rgbd, std::span<const Camera> cameras,
                              const DepthRange& range, double threshold) {
  if (rgbd.size() != cameras.size()) {
    throw Error(ErrorCode::ShapeMismatch, "view and camera counts differ");
  }
  Extraction ex;
  const double limit = threshold * range.far;
  for (std::size_t v = 0; v < rgbd.size(); ++v) {
    const Image& im = rgbd[v];
    if (im.channels != 4 || im.width != cameras[v].width() || im.height != cameras[v].height()) {
      throw Error(ErrorCode::ShapeMismatch, "view " + std::to_string(v) + " is not H x W x 4");
    }
    for (int y = 0; y < im.height; ++y) {
      for (int xx = 0; xx < im.width; ++xx) {
        const double z = range.denormalize(im.at(y, xx, 3));
        if (!(z < limit) || !(z > 0.0)) continue;
        ex.cloud.points.push_back(unproject(cameras[v], Vec2(xx, y), z));
        Vec3 c;
        for (int k = 0; k < 3; ++k) c[k] = std::clamp(0.5 * (im.at(y, xx, k) + 1.0), 0.0, 1.0);
        ex.cloud.colors.push_back(c);
      }
    }
  }
  ex.empty_cloud = ex.cloud.points.empty();
  return ex;
}

Extraction extract_pointcloud(const ViewSet& viewset, const DepthRange& range, double threshold) {
  return extract_pointcloud(viewset.target_images, viewset.target_cameras, range, threshold);
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const Vec3 c = i < cloud.colors.size() ? cloud.colors[i] : Vec3::Constant(1.0);
    out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
        << static_cast<float>(p.z());
    for (int k = 0; k < 3; ++k) {
      out << ' ' << static_cast<int>(std::lround(std::clamp(c[k], 0.0, 1.0) * 255.0));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

void write_generated(const fs::path& dir, const ViewSet& views, const RigConfig& rig,
                     double threshold) {
  views.validate();
  Dataset ds;
  ds.rig = rig;
  const DepthRange range = ds.depth_range();
  SceneRecord rec;
  rec.name = scene_dir_name(0);
  for (int i = 0; i < views.target_count(); ++i) {
    const Image& im = views.target_images[i];
    RenderedView v(views.target_cameras[i]);
    for (std::size_t p = 0; p < im.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) v.rgb.data[p * 3 + c] = im.data[p * 4 + c];
      v.depth.data[p] = im.data[p * 4 + 3];
      v.mask[p] = range.denormalize(im.data[p * 4 + 3]) < threshold * range.far ? 1 : 0;
    }
    rec.views.push_back(std::move(v));
  }
  ds.scenes.push_back(std::move(rec));
  write_dataset(dir, ds);
  write_png_rgb(dir / "input_rgb.png", views.input_rgb);

  nlohmann::json cam;
  cam["intrinsics"] = views.input_camera.intrinsics_row_major();
  cam["world_to_cam"] = views.input_camera.world_to_cam_row_major();
  cam["width"] = views.input_camera.width();
  cam["height"] = views.input_camera.height();
  std::ofstream out(dir / "input_camera.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, (dir / "input_camera.json").string() + ": cannot write");
  out << std::setprecision(17) << cam.dump(1) << "\n";
}

}  // namespace mvd
