#include "mvd/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace mvd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kRawVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": truncated file");
  return value;
}

void write_header(std::ofstream& out, const char magic[4], int width, int height) {
  out.write(magic, 4);
  put<std::uint32_t>(out, kRawVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(height));
}

void read_header(std::ifstream& in, const fs::path& path, const char magic[4], int& width,
                 int& height) {
  char m[4];
  in.read(m, 4);
  if (!in || std::memcmp(m, magic, 4) != 0) {
    throw Error(ErrorCode::IoError, path.string() + ": bad magic");
  }
  if (get<std::uint32_t>(in, path) != kRawVersion) {
    throw Error(ErrorCode::IoError, path.string() + ": unsupported version");
  }
  width = static_cast<int>(get<std::uint32_t>(in, path));
  height = static_cast<int>(get<std::uint32_t>(in, path));
}

[[noreturn]] void corrupt(const std::string& field, const std::string& detail) {
  throw Error(ErrorCode::CorruptManifest, "manifest field '" + field + "': " + detail);
}

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) corrupt(path + key, "missing");
  return obj.at(key);
}

template <typename T>
T number(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) corrupt(path + key, "expected a number");
  return v.get<T>();
}

template <std::size_t N>
std::array<double, N> number_array(const json& obj, const std::string& key,
                                   const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_array() || v.size() != N) {
    corrupt(path + key, "expected " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) corrupt(path + key, "non-numeric entry");
    out[i] = v[i].get<double>();
  }
  return out;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const std::array<double, 3>& a) { return Vec3(a[0], a[1], a[2]); }

json camera_json(const Camera& cam) {
  json j;
  const auto k = cam.intrinsics_row_major();
  const auto w = cam.world_to_cam_row_major();
  j["intrinsics"] = json(std::vector<double>(k.begin(), k.end()));
  j["world_to_cam"] = json(std::vector<double>(w.begin(), w.end()));
  return j;
}

Camera camera_from(const json& j, const std::string& path, int width, int height) {
  const auto k = number_array<9>(j, "intrinsics", path);
  const auto w = number_array<16>(j, "world_to_cam", path);
  try {
    return Camera::from_row_major(k, w, width, height);
  } catch (const Error& e) {
    corrupt(path + "world_to_cam", e.what());
  }
}

}  // namespace

std::string scene_dir_name(std::size_t index) {
  std::ostringstream s;
  s << "scene_" << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

std::string view_suffix(std::size_t index) {
  std::ostringstream s;
  s << std::setw(2) << std::setfill('0') << index;
  return s.str();
}

double quantize_unit_8bit(double value) {
  const double level = std::round(std::clamp((value + 1.0) * 0.5, 0.0, 1.0) * 255.0);
  return level / 255.0 * 2.0 - 1.0;
}

void write_png_rgb(const fs::path& path, const Image& rgb) {
  if (rgb.channels != 3) throw Error(ErrorCode::ShapeMismatch, "PNG writer expects 3 channels");
  std::vector<png_byte> bytes(rgb.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<png_byte>(
        std::lround(std::clamp((rgb.data[i] + 1.0) * 0.5, 0.0, 1.0) * 255.0));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(rgb.width);
  image.height = static_cast<png_uint_32>(rgb.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + image.message);
  }
}

Image read_png_rgb(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorCode::IoError, path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + image.message);
  }
  Image out(static_cast<int>(image.height), static_cast<int>(image.width), 3);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = bytes[i] / 255.0 * 2.0 - 1.0;
  return out;
}

void write_depth_f32(const fs::path& path, const Image& depth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  write_header(out, "MVDD", depth.width, depth.height);
  for (double v : depth.data) put<float>(out, static_cast<float>(v));
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

Image read_depth_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open");
  int w = 0, h = 0;
  read_header(in, path, "MVDD", w, h);
  Image out(h, w, 1);
  for (double& v : out.data) v = get<float>(in, path);
  return out;
}

void write_mask_u8(const fs::path& path, const std::vector<std::uint8_t>& mask, int width,
                   int height) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  write_header(out, "MVDM", width, height);
  out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

std::vector<std::uint8_t> read_mask_u8(const fs::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open");
  read_header(in, path, "MVDM", width, height);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": truncated file");
  return mask;
}

Dataset generate_dataset(int num_scenes, std::uint64_t seed, const RigConfig& rig,
                         int first_index) {
  Dataset ds;
  ds.rig = rig;
  const std::vector<Camera> cams = make_rig(rig);
  const DepthRange range = ds.depth_range();
  for (int i = 0; i < num_scenes; ++i) {
    SceneRecord rec;
    rec.name = scene_dir_name(static_cast<std::size_t>(first_index + i));
    rec.seed = derive_seed(seed, "dataset-scene", static_cast<std::uint64_t>(first_index + i));
    rec.scene = generate_scene(rec.seed);
    for (const Camera& cam : cams) {
      RenderedView view = render(rec.scene, cam, range);
      for (double& v : view.rgb.data) v = quantize_unit_8bit(v);
      rec.views.push_back(std::move(view));
    }
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "mvd-dataset";
  manifest["version"] = 1;
  const RigConfig& rig = dataset.rig;
  manifest["image_width"] = rig.image_size;
  manifest["image_height"] = rig.image_size;
  manifest["rig"] = {{"num_views", rig.num_views},   {"elevation_deg", rig.elevation_deg},
                     {"radius", rig.radius},         {"image_size", rig.image_size},
                     {"near", rig.near},             {"far", rig.far},
                     {"fill", rig.fill}};
  manifest["depth_normalization"] = {
      {"near", rig.near}, {"far", rig.far}, {"range", {-1.0, 1.0}}, {"background", 1.0}};
  json scenes = json::array();
  for (const SceneRecord& rec : dataset.scenes) {
    const fs::path sdir = dir / rec.name;
    fs::create_directories(sdir, ec);
    if (ec) throw Error(ErrorCode::IoError, sdir.string() + ": " + ec.message());
    json s;
    s["name"] = rec.name;
    s["seed"] = rec.seed;
    json prims = json::array();
    for (const Primitive& p : rec.scene.primitives) {
      prims.push_back({{"kind", p.kind == PrimitiveKind::Sphere ? "sphere" : "box"},
                       {"center", vec_json(p.center)},
                       {"size", vec_json(p.size)},
                       {"color", vec_json(p.color)}});
    }
    s["primitives"] = prims;
    json cams = json::array();
    for (std::size_t v = 0; v < rec.views.size(); ++v) {
      const RenderedView& view = rec.views[v];
      cams.push_back(camera_json(view.camera));
      write_png_rgb(sdir / ("rgb_" + view_suffix(v) + ".png"), view.rgb);
      write_depth_f32(sdir / ("depth_" + view_suffix(v) + ".f32"), view.depth);
      write_mask_u8(sdir / ("mask_" + view_suffix(v) + ".u8"), view.mask, view.camera.width(),
                    view.camera.height());
    }
    s["cameras"] = cams;
    scenes.push_back(s);
  }
  manifest["scenes"] = scenes;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, (dir / "manifest.json").string() + ": cannot write");
  out << manifest.dump(1) << "\n";
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw Error(ErrorCode::IoError, mpath.string() + ": cannot open");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, mpath.string() + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "mvd-dataset") {
    corrupt("format", "expected 'mvd-dataset'");
  }
  Dataset ds;
  const json& rig = field(manifest, "rig", "");
  ds.rig.num_views = number<int>(rig, "num_views", "rig.");
  ds.rig.elevation_deg = number<double>(rig, "elevation_deg", "rig.");
  ds.rig.radius = number<double>(rig, "radius", "rig.");
  ds.rig.image_size = number<int>(rig, "image_size", "rig.");
  ds.rig.near = number<double>(rig, "near", "rig.");
  ds.rig.far = number<double>(rig, "far", "rig.");
  ds.rig.fill = number<double>(rig, "fill", "rig.");
  const int width = number<int>(manifest, "image_width", "");
  const int height = number<int>(manifest, "image_height", "");

  const json& scenes = field(manifest, "scenes", "");
  if (!scenes.is_array()) corrupt("scenes", "expected an array");
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const json& s = scenes[si];
    const std::string base = "scenes[" + std::to_string(si) + "].";
    SceneRecord rec;
    const json& name = field(s, "name", base);
    if (!name.is_string()) corrupt(base + "name", "expected a string");
    rec.name = name.get<std::string>();
    const json& seed = field(s, "seed", base);
    if (!seed.is_number_unsigned() && !seed.is_number_integer()) {
      corrupt(base + "seed", "expected an integer");
    }
    rec.seed = seed.get<std::uint64_t>();
    const json& prims = field(s, "primitives", base);
    if (!prims.is_array()) corrupt(base + "primitives", "expected an array");
    for (std::size_t pi = 0; pi < prims.size(); ++pi) {
      const std::string pbase = base + "primitives[" + std::to_string(pi) + "].";
      Primitive p;
      const json& kind = field(prims[pi], "kind", pbase);
      if (kind == "sphere") {
        p.kind = PrimitiveKind::Sphere;
      } else if (kind == "box") {
        p.kind = PrimitiveKind::Box;
      } else {
        corrupt(pbase + "kind", "expected 'sphere' or 'box'");
      }
      p.center = vec_from(number_array<3>(prims[pi], "center", pbase));
      p.size = vec_from(number_array<3>(prims[pi], "size", pbase));
      p.color = vec_from(number_array<3>(prims[pi], "color", pbase));
      rec.scene.primitives.push_back(p);
    }
    const json& cams = field(s, "cameras", base);
    if (!cams.is_array()) corrupt(base + "cameras", "expected an array");

    const fs::path sdir = dir / rec.name;
    std::size_t rgb_files = 0;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(sdir, ec)) {
      const std::string fname = entry.path().filename().string();
      if (fname.rfind("rgb_", 0) == 0 && entry.path().extension() == ".png") ++rgb_files;
    }
    if (ec) throw Error(ErrorCode::IoError, sdir.string() + ": " + ec.message());
    if (rgb_files != cams.size()) {
      corrupt(base + "cameras", "lists " + std::to_string(cams.size()) + " cameras but " +
                                    sdir.string() + " holds " + std::to_string(rgb_files) +
                                    " views");
    }
    for (std::size_t v = 0; v < cams.size(); ++v) {
      const std::string cbase = base + "cameras[" + std::to_string(v) + "].";
      RenderedView view(camera_from(cams[v], cbase, width, height));
      view.rgb = read_png_rgb(sdir / ("rgb_" + view_suffix(v) + ".png"));
      view.depth = read_depth_f32(sdir / ("depth_" + view_suffix(v) + ".f32"));
      int mw = 0, mh = 0;
      view.mask = read_mask_u8(sdir / ("mask_" + view_suffix(v) + ".u8"), mw, mh);
      if (view.rgb.width != width || view.rgb.height != height || view.depth.width != width ||
          view.depth.height != height || mw != width || mh != height) {
        corrupt(cbase + "image_size", "view files do not match image_width/image_height");
      }
      rec.views.push_back(std::move(view));
    }
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace mvd
