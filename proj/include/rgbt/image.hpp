#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rgbt {

/// 8-bit interleaved image (row-major, channels innermost).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Single-channel float image used by the flow estimators.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  float at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
};

/// Luma (BT.601 weights) in [0, 255]. Single-channel images are copied.
GrayImage to_gray(const Image& img);

/// Replicates a single channel into three; three-channel input is returned.
Image to_three_channels(const Image& img);

/// PNG/JPEG via OpenCV. Colour images are returned in RGB order. Throws
/// LoadError.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

}  // namespace rgbt
