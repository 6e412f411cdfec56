#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wsds/data.hpp"
#include "wsds/errors.hpp"

namespace wsds {

namespace {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bytes;
};

// Reads the file converted to `format`. Grayscale targets reject colour files
// rather than silently mixing channels.
RawImage read_png(const std::filesystem::path& path, png_uint_32 format) {
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  if (format == PNG_FORMAT_GRAY && (image.format & PNG_FORMAT_FLAG_COLOR)) {
    png_image_free(&image);
    throw FormatError(path.string() + ": expected a grayscale PNG");
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw FormatError(path.string() + ": expected 8-bit samples");
  }
  image.format = format;
  RawImage raw{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, raw.bytes.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + image.message);
  }
  return raw;
}

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               png_uint_32 format, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor load_image_png(const std::filesystem::path& path) {
  RawImage raw = read_png(path, PNG_FORMAT_RGB);
  const std::size_t plane = raw.width * raw.height;
  Tensor t({3, raw.height, raw.width});
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = raw.bytes[3 * i + c] / 255.0;
  return t;
}

void save_image_png(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("save_image_png expects [3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<std::uint8_t> bytes(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) bytes[3 * i + c] = to_byte(image[c * plane + i]);
  write_png(path, w, h, PNG_FORMAT_RGB, bytes);
}

Tensor load_mask_png(const std::filesystem::path& path) {
  RawImage raw = read_png(path, PNG_FORMAT_GRAY);
  Tensor t({1, raw.height, raw.width});
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) {
    const std::uint8_t b = raw.bytes[i];
    if (b != 0 && b != 255) {
      throw FormatError(path.string() + ": mask value " + std::to_string(b) + " is not 0 or 255");
    }
    t[i] = b == 255 ? 1.0 : 0.0;
  }
  return t;
}

void save_mask_png(const Tensor& mask, const std::filesystem::path& path) {
  const std::size_t h = mask.dim(mask.rank() - 2), w = mask.dim(mask.rank() - 1);
  if (mask.numel() != h * w) throw ShapeError("save_mask_png expects a single-channel mask");
  std::vector<std::uint8_t> bytes(h * w);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask[i] >= 0.5 ? 255 : 0;
  write_png(path, w, h, PNG_FORMAT_GRAY, bytes);
}

WeakLabelMap load_trimap_png(const std::filesystem::path& path) {
  RawImage raw = read_png(path, PNG_FORMAT_GRAY);
  WeakLabelMap m(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) {
    const std::uint8_t b = raw.bytes[i];
    if (b != 0 && b != 128 && b != 255) {
      throw FormatError(path.string() + ": trimap value " + std::to_string(b) +
                        " is not one of 0, 128, 255");
    }
    m.set(i / raw.width, i % raw.width, static_cast<WeakLabel>(b));
  }
  return m;
}

void save_trimap_png(const WeakLabelMap& trimap, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(trimap.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(trimap[i]);
  write_png(path, trimap.width(), trimap.height(), PNG_FORMAT_GRAY, bytes);
}

}  // namespace wsds
