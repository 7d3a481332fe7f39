#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace polygcn {

/// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}
  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t ch = 0) {
    return pixels[(row * width + col) * channels + ch];
  }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return pixels[(row * width + col) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

Image to_rgb(const Image& img);

void write_png(const Image& img, const std::filesystem::path& path);
/// Reads gray, gray+alpha, RGB or RGBA; alpha is dropped and 16-bit samples
/// are reduced to 8 bits.
Image read_png(const std::filesystem::path& path);

}  // namespace polygcn
