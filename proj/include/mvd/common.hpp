#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mvd {

enum class ErrorCode {
  BehindCamera,
  NonPositiveDepth,
  OutOfBounds,
  DegenerateRay,
  InvalidCamera,
  ShapeMismatch,
  StepOutOfRange,
  InvalidBounds,
  InvalidRadius,
  InvalidArgument,
  IoError,
  CorruptManifest,
  CorruptCheckpoint,
  TooSmall,
  EmptyCloud,
  InvalidConfig,
  NonFiniteLoss,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Dense H x W x C image, channels interleaved, rows top to bottom.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

}  // namespace mvd
