#pragma once

// 8-bit grayscale/RGB PNG reading and writing through libpng's simplified API.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "srfrn/error.hpp"
#include "srfrn/imaging.hpp"

namespace srfrn {

namespace detail {

struct PngImageGuard {
  png_image image{};
  PngImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImageGuard() { png_image_free(&image); }
  PngImageGuard(const PngImageGuard&) = delete;
  PngImageGuard& operator=(const PngImageGuard&) = delete;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes an in-memory PNG. Color/palette images become RGB, gray stays gray,
/// alpha is dropped. 16-bit images are rejected.
inline ImageU8 png_decode(const std::vector<unsigned char>& bytes, const std::string& name = "<memory>") {
  detail::PngImageGuard g;
  if (bytes.empty() || !png_image_begin_read_from_memory(&g.image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::format, name + ": " + (bytes.empty() ? "empty file" : g.image.message));
  }
  if (g.image.format & PNG_FORMAT_FLAG_LINEAR) {
    throw Error(ErrorCode::data, name + ": 16-bit PNG is not supported");
  }
  const bool color = (g.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  g.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ImageU8 img(g.image.width, g.image.height, color ? 3 : 1);
  if (!png_image_finish_read(&g.image, nullptr, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::format, name + ": " + g.image.message);
  }
  return img;
}

inline ImageU8 png_load(const std::filesystem::path& path) {
  return png_decode(detail::read_file_bytes(path), path.string());
}

inline std::vector<unsigned char> png_encode(const ImageU8& img) {
  if (img.width == 0 || img.height == 0) throw Error(ErrorCode::usage, "png_encode: empty image");
  detail::PngImageGuard g;
  g.image.width = static_cast<png_uint_32>(img.width);
  g.image.height = static_cast<png_uint_32>(img.height);
  g.image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&g.image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::format, std::string("png_encode: ") + g.image.message);
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&g.image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::format, std::string("png_encode: ") + g.image.message);
  }
  out.resize(size);
  return out;
}

inline void png_save(const ImageU8& img, const std::filesystem::path& path) {
  const auto bytes = png_encode(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace srfrn
