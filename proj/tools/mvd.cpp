// mvd: dataset generation, training, sampling, evaluation and benchmarks.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mvd/config.hpp"
#include "mvd/metrics.hpp"
#include "mvd/parallel.hpp"

namespace fs = std::filesystem;
using namespace mvd;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  int threads = default_threads();
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "config file (key = value lines)");
  app->add_option("--set", c.sets, "override a config key, KEY=VALUE (repeatable)");
  app->add_option("--seed", c.seed, "root seed (overrides the config)");
  app->add_option("--threads", c.threads, "worker threads")->capture_default_str();
}

void apply_sets(Config& cfg, const Common& c) {
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "--set expects KEY=VALUE, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
}

Config resolve(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : load_config(c.config_path);
  apply_sets(cfg, c);
  return cfg;
}

fs::path output_path(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("MVD_OUTPUT_DIR");
  return fs::path(env && *env ? env : ".") / fallback;
}

std::string keys_help() {
  std::ostringstream os;
  const Config defaults;
  os << "\nConfig keys (defaults):\n";
  for (const ConfigKey& k : config_keys()) {
    os << "  " << std::left << std::setw(26) << k.name << std::setw(12) << defaults.get(k.name)
       << k.type << ", " << k.help << '\n';
  }
  os << "\nMVD_OUTPUT_DIR sets the base directory for outputs when --out is omitted.\n";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());
}

const SceneRecord& scene_at(const Dataset& ds, int index, const fs::path& dir) {
  if (index < 0 || index >= static_cast<int>(ds.scenes.size())) {
    throw Error(ErrorCode::InvalidArgument, dir.string() + ": scene index " +
                                                std::to_string(index) + " out of range");
  }
  return ds.scenes[index];
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common, int scenes, int first_index, const std::string& out_flag) {
  const Config cfg = resolve(common);
  cfg.validate();
  const fs::path out = output_path(out_flag, "data");
  const Dataset ds = generate_dataset(scenes, cfg.seed, cfg.rig, first_index);
  write_dataset(out, ds);
  std::cout << "wrote " << scenes << " scenes to " << out.string() << "\n";
  return 0;
}

int cmd_train(Config cfg, const fs::path& data_dir, const std::string& out_flag, int log_every) {
  cfg.validate();
  const fs::path out = output_path(out_flag, "train");
  make_dirs(out);
  const Dataset ds = read_dataset(data_dir);
  if (ds.rig.image_size != cfg.rig.image_size) {
    throw Error(ErrorCode::InvalidConfig, data_dir.string() + ": dataset image size " +
                                              std::to_string(ds.rig.image_size) +
                                              " differs from rig.image_size");
  }
  const std::string text = cfg.to_text();
  write_text(out / "config.txt", text);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  Denoiser model(cfg.net, derive_seed(cfg.seed, "init"));
  TrainHooks hooks;
  hooks.on_step = [&](int step, double loss) {
    if (log_every > 0 && (step + 1) % log_every == 0) {
      std::cout << "step " << step + 1 << " loss " << loss << std::endl;
    }
  };
  hooks.on_checkpoint = [&](int step, const Denoiser& m) {
    nn::write_checkpoint(out / ("checkpoint_" + std::to_string(step) + ".bin"),
                         nn::Checkpoint{text, m.params()});
  };
  const TrainResult r = train(model, ds, tc, cfg.make_schedule(), cfg.depth, hooks);
  nn::write_checkpoint(out / "checkpoint.bin", nn::Checkpoint{text, model.params()});
  write_loss_curve(out / "loss.csv", r.losses);
  std::cout << "wrote " << (out / "checkpoint.bin").string() << " and "
            << (out / "loss.csv").string() << "\n";
  return 0;
}

int cmd_sample(const Common& common, const fs::path& checkpoint, const fs::path& data_dir,
               int scene, int input_view, std::optional<double> omega, const std::string& out_flag) {
  nn::Checkpoint ck = nn::read_checkpoint(checkpoint);
  Config cfg = parse_config(ck.config_text, checkpoint.string());
  if (!common.config_path.empty()) {
    throw Error(ErrorCode::InvalidConfig,
                "--config is not accepted by sample: the configuration comes from the checkpoint");
  }
  apply_sets(cfg, common);
  if (omega) cfg.omega = *omega;
  cfg.validate();
  const Denoiser model(cfg.net, std::move(ck.params));
  const Dataset ds = read_dataset(data_dir);
  const SceneRecord& rec = scene_at(ds, scene, data_dir);
  if (input_view < 0 || input_view >= static_cast<int>(rec.views.size())) {
    throw Error(ErrorCode::InvalidArgument, "--input-view out of range");
  }
  std::vector<Camera> cams;
  for (const RenderedView& v : rec.views) cams.push_back(v.camera);
  SampleConfig sc;
  sc.omega = cfg.omega;
  sc.seed = derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(scene));
  sc.threads = common.threads;
  sc.depth = cfg.depth;
  sc.range = cfg.depth_range();
  const auto t0 = std::chrono::steady_clock::now();
  const SampleResult r = sample(model, rec.views[input_view].rgb, rec.views[input_view].camera,
                                cams, cfg.make_schedule(), sc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path out = output_path(out_flag, "sample");
  write_generated(out, r.views, cfg.rig, cfg.threshold);
  const Extraction ex = extract_pointcloud(r.views, sc.range, cfg.threshold);
  write_ply(out / "cloud.ply", ex.cloud);
  std::cout << "generated " << r.views.target_count() << " views in " << secs << " s; "
            << ex.cloud.size() << " points" << (ex.empty_cloud ? " (empty cloud)" : "")
            << "; wrote " << out.string() << "\n";
  return 0;
}

int cmd_eval(const Common& common, const fs::path& generated, const fs::path& reference,
             int scene, const std::string& out_flag) {
  const Config cfg = resolve(common);
  const Dataset gen = read_dataset(generated);
  const Dataset ref = read_dataset(reference);
  const SceneRecord& g = scene_at(gen, 0, generated);
  const SceneRecord& r = scene_at(ref, scene, reference);
  if (g.views.size() != r.views.size()) {
    throw Error(ErrorCode::ShapeMismatch, generated.string() + ": view count " +
                                              std::to_string(g.views.size()) +
                                              " differs from the reference scene");
  }
  std::vector<Image> gi, ri;
  std::vector<Camera> cams;
  for (std::size_t v = 0; v < g.views.size(); ++v) {
    gi.push_back(g.views[v].rgbd());
    ri.push_back(r.views[v].rgbd());
    cams.push_back(r.views[v].camera);
  }
  const MetricReport rep = evaluate(gi, ri, cams, ref.depth_range(), cfg.threshold);
  const fs::path out = output_path(out_flag, "report");
  make_dirs(out);
  write_text(out / "report.json", rep.to_json() + "\n");
  write_text(out / "report.csv", rep.to_csv());
  std::cout << "psnr " << rep.mean_psnr << " ssim " << rep.mean_ssim << " chamfer "
            << (rep.chamfer_valid ? std::to_string(rep.chamfer) : "n/a") << " reprojection "
            << (rep.reprojection_valid ? std::to_string(rep.reprojection) : "n/a") << "\n";
  return 0;
}

int cmd_bench(const Common& common, int views, int dense_max, int repeats, int stride,
              const std::string& out_flag) {
  Config cfg = resolve(common);
  if (stride > 0) cfg.net.aggregator.feature_stride = stride;
  cfg.validate();
  if (views < 1 || views >= cfg.rig.num_views) {
    throw Error(ErrorCode::InvalidArgument, "--views must lie in [1, rig.num_views)");
  }
  nn::ParamStore store;
  Rng rng(derive_seed(cfg.seed, "bench-init"));
  init_aggregator_params(store, cfg.net.aggregator, rng);
  const AggregatorParams params{cfg.net.aggregator, &store};
  const Dataset ds = generate_dataset(1, cfg.seed, cfg.rig);
  const SceneRecord& rec = ds.scenes[0];
  ViewSet vs(rec.views[0].camera);
  vs.input_rgb = rec.views[0].rgb;
  for (int i = 1; i <= views; ++i) {
    vs.target_images.push_back(rec.views[i].rgbd());
    vs.target_cameras.push_back(rec.views[i].camera);
  }
  const NoiseSchedule sched = cfg.make_schedule();
  const int t = std::max(1, sched.steps() / 2);
  const DepthRange range = cfg.depth_range();
  const int s = cfg.net.aggregator.feature_stride;
  const int gh = cfg.rig.image_size / s;

  struct Row {
    std::string mode;
    int d;
    double seconds;
    std::size_t bytes;
  };
  std::vector<Row> rows;
  auto timed = [&](const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  auto tape_bytes = [&](std::span<const double> depths, int d) {
    nn::Tape tape(false);
    nn::ParamBinding bind(tape, store);
    const std::vector<Image> raw = raw_source_views(vs);
    const std::vector<nn::Var> src =
        source_feature_vars(bind, raw, params.config, cfg.rig.image_size, cfg.rig.image_size);
    std::vector<Camera> cams = vs.target_cameras;
    cams.push_back(vs.input_camera);
    FrustumStats stats;
    frustum_tokens(bind, src, cams, 0, depths, d, t, params.config, nullptr, &stats);
    return tape.bytes();
  };

  Rng drng(derive_seed(cfg.seed, "bench-depths"));
  const std::vector<double> sparse =
      frustum_depths(vs.target_images[0], t, cfg.depth, sched, range, s, drng);
  rows.push_back({"sparse", cfg.depth.samples,
                  timed([&] { build_frustum(vs, 0, sparse, t, params); }),
                  tape_bytes(sparse, cfg.depth.samples)});
  for (int d = 1; d <= dense_max; d *= 2) {
    const std::vector<double> depths = linspace_depths(gh * gh, d, range.near, range.far);
    rows.push_back({"dense", d,
                    timed([&] { build_frustum_dense(vs, 0, d, range.near, range.far, t, params); }),
                    tape_bytes(depths, d)});
    if (d < dense_max && d * 2 > dense_max) d = dense_max / 2;
  }
  std::ostringstream csv;
  csv << "mode,depth_samples,views,grid,seconds,bytes\n" << std::setprecision(9);
  for (const Row& r : rows) {
    csv << r.mode << ',' << r.d << ',' << views << ',' << gh << 'x' << gh << ',' << r.seconds << ','
        << r.bytes << '\n';
  }
  const fs::path out = output_path(out_flag, "bench_frustum.csv");
  if (out.has_parent_path()) make_dirs(out.parent_path());
  write_text(out, csv.str());
  std::cout << csv.str();
  const double ratio = rows.back().seconds / rows.front().seconds;
  std::cout << "dense D=" << rows.back().d << " / sparse D=" << rows.front().d
            << " wall-clock ratio " << ratio << "\n";
  return 0;
}

int cmd_export_ply(const Common& common, const fs::path& data_dir, int scene,
                   const std::string& out_flag) {
  const Config cfg = resolve(common);
  const Dataset ds = read_dataset(data_dir);
  const SceneRecord& rec = scene_at(ds, scene, data_dir);
  std::vector<Image> imgs;
  std::vector<Camera> cams;
  for (const RenderedView& v : rec.views) {
    imgs.push_back(v.rgbd());
    cams.push_back(v.camera);
  }
  const Extraction ex = extract_pointcloud(imgs, cams, ds.depth_range(), cfg.threshold);
  const fs::path out = output_path(out_flag, "cloud.ply");
  if (out.has_parent_path()) make_dirs(out.parent_path());
  write_ply(out, ex.cloud);
  std::cout << ex.cloud.size() << " points" << (ex.empty_cloud ? " (empty cloud)" : "")
            << " written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-guided multi-view RGB-D diffusion"};
  app.require_subcommand(1);
  app.footer(keys_help());

  Common common;
  std::string out;

  auto* gen = app.add_subcommand("gen-data", "render a procedural multi-view dataset");
  add_common(gen, common);
  int scenes = 10, first_index = 0;
  gen->add_option("--scenes", scenes, "number of scenes")->capture_default_str();
  gen->add_option("--first-index", first_index, "index of the first scene")->capture_default_str();
  gen->add_option("--out", out, "output directory (default $MVD_OUTPUT_DIR/data)");

  auto* tr = app.add_subcommand("train", "train a denoiser; writes checkpoint.bin and loss.csv");
  add_common(tr, common);
  std::string data;
  std::optional<int> steps, batch;
  std::optional<double> lr;
  int log_every = 100;
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--steps", steps, "optimizer steps (train.steps)");
  tr->add_option("--batch-size", batch, "samples per step (train.batch_size)");
  tr->add_option("--lr", lr, "learning rate (train.lr)");
  tr->add_option("--log-every", log_every, "print the loss every N steps")->capture_default_str();
  tr->add_option("--out", out, "output directory (default $MVD_OUTPUT_DIR/train)");

  auto* sm = app.add_subcommand("sample", "generate every rig view of a scene from one input view");
  add_common(sm, common);
  std::string checkpoint;
  int scene = 0, input_view = 0;
  std::optional<double> omega;
  sm->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sm->add_option("--data", data, "dataset providing the input view and cameras")->required();
  sm->add_option("--scene", scene, "scene index")->capture_default_str();
  sm->add_option("--input-view", input_view, "conditioning view index")->capture_default_str();
  sm->add_option("--omega", omega, "guidance scale (sample.omega, default 2.0)");
  sm->add_option("--out", out, "output directory (default $MVD_OUTPUT_DIR/sample)");

  auto* ev = app.add_subcommand("eval", "compare generated views with ground truth");
  add_common(ev, common);
  std::string generated, reference;
  ev->add_option("--generated", generated, "generated dataset directory")->required();
  ev->add_option("--reference", reference, "ground-truth dataset directory")->required();
  ev->add_option("--scene", scene, "reference scene index")->capture_default_str();
  ev->add_option("--out", out, "report directory (default $MVD_OUTPUT_DIR/report)");

  auto* bf = app.add_subcommand("bench-frustum", "time sparse against dense frustum sampling");
  add_common(bf, common);
  int views = 4, dense = 64, repeats = 3, stride = 0;
  bf->add_option("--views", views, "target views")->capture_default_str();
  bf->add_option("--dense", dense, "largest dense depth count")->capture_default_str();
  bf->add_option("--repeats", repeats, "timing repeats (best is kept)")->capture_default_str();
  bf->add_option("--stride", stride, "frustum stride override (0 keeps agg.stride)");
  bf->add_option("--out", out, "CSV path (default $MVD_OUTPUT_DIR/bench_frustum.csv)");

  auto* ep = app.add_subcommand("export-ply", "unproject a dataset scene into a PLY point cloud");
  add_common(ep, common);
  ep->add_option("--data", data, "dataset directory (ground truth or generated)")->required();
  ep->add_option("--scene", scene, "scene index")->capture_default_str();
  ep->add_option("--out", out, "PLY path (default $MVD_OUTPUT_DIR/cloud.ply)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) if (c == '\n') c = ' ';
    std::cerr << "error: code=Usage message=" << msg << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(common, scenes, first_index, out);
    if (*tr) {
      Config cfg = resolve(common);
      if (steps) cfg.train.steps = *steps;
      if (batch) cfg.train.batch_size = *batch;
      if (lr) cfg.train.lr = *lr;
      return cmd_train(cfg, data, out, log_every);
    }
    if (*sm) return cmd_sample(common, checkpoint, data, scene, input_view, omega, out);
    if (*ev) return cmd_eval(common, generated, reference, scene, out);
    if (*bf) return cmd_bench(common, views, dense, repeats, stride, out);
    if (*ep) return cmd_export_ply(common, data, scene, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& c : msg) if (c == '\n') c = ' ';
    std::cerr << "error: code=" << to_string(e.code()) << " message=" << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: code=Internal message=" << e.what() << "\n";
    return 1;
  }
  return 1;
}
