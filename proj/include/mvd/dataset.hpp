#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvd/scene.hpp"

namespace mvd {

struct SceneRecord {
  std::string name;
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<RenderedView> views;
};

// On disk:
//   manifest.json
//   scene_SSSS/rgb_VV.png    8-bit RGB
//   scene_SSSS/depth_VV.f32  "MVDD" u32 version u32 width u32 height, then
//                            float32 normalized depth, row-major, little-endian
//   scene_SSSS/mask_VV.u8    "MVDM" u32 version u32 width u32 height, then
//                            one byte (0/1) per pixel
struct Dataset {
  RigConfig rig;
  std::vector<SceneRecord> scenes;

  DepthRange depth_range() const { return {rig.near, rig.far}; }
};

// Scene i uses seed derive_seed(seed, "dataset-scene", i). RGB is quantized to
// the 8-bit grid so that the on-disk copy is exact.
Dataset generate_dataset(int num_scenes, std::uint64_t seed, const RigConfig& rig,
                         int first_index = 0);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

// Maps [-1, 1] to the nearest 8-bit level and back.
double quantize_unit_8bit(double value);

void write_png_rgb(const std::filesystem::path& path, const Image& rgb);
Image read_png_rgb(const std::filesystem::path& path);
void write_depth_f32(const std::filesystem::path& path, const Image& depth);
Image read_depth_f32(const std::filesystem::path& path);
void write_mask_u8(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask,
                   int width, int height);
std::vector<std::uint8_t> read_mask_u8(const std::filesystem::path& path, int& width, int& height);

std::string scene_dir_name(std::size_t index);
std::string view_suffix(std::size_t index);

}  // namespace mvd
