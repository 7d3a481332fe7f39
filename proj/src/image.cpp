#include "polygcn/image.hpp"

#include <png.h>

#include <stdexcept>
#include <string>

namespace polygcn {

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw std::invalid_argument("to_rgb: expected 1 or 3 channels");
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  }
  return out;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_png: unsupported channel count " +
                                std::to_string(img.channels));
  }
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&desc, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw std::runtime_error("write_png: " + path.string() + ": " + msg);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.c_str())) {
    throw std::runtime_error("read_png: " + path.string() + ": " + desc.message);
  }
  const bool color = (desc.format & PNG_FORMAT_FLAG_COLOR) != 0;
  desc.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img(desc.width, desc.height, color ? 3 : 1);
  if (!png_image_finish_read(&desc, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw std::runtime_error("read_png: " + path.string() + ": " + msg);
  }
  return img;
}

}  // namespace polygcn
