#include "fuselage/image_io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fuselage/errors.h"

namespace fuselage::img {
namespace {

// Thin RAII wrapper over libpng's simplified API.
class PngHandle {
 public:
  PngHandle() {
    std::memset(&image_, 0, sizeof(image_));
    image_.version = PNG_IMAGE_VERSION;
  }
  ~PngHandle() { png_image_free(&image_); }
  PngHandle(const PngHandle&) = delete;
  PngHandle& operator=(const PngHandle&) = delete;

  png_image* get() { return &image_; }
  png_image* operator->() { return &image_; }

 private:
  png_image image_;
};

std::vector<std::uint8_t> decode(const std::filesystem::path& path,
                                 png_uint_32 format, int& width, int& height) {
  if (!std::filesystem::exists(path)) {
    throw IoError("image file not found: " + path.string());
  }
  PngHandle png;
  if (!png_image_begin_read_from_file(png.get(), path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + png->message);
  }
  png->format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(*png.get()));
  if (!png_image_finish_read(png.get(), nullptr, buffer.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG " + path.string() + ": " + png->message);
  }
  width = static_cast<int>(png->width);
  height = static_cast<int>(png->height);
  return buffer;
}

void encode(const std::filesystem::path& path, png_uint_32 format, int width,
            int height, const std::uint8_t* pixels) {
  PngHandle png;
  png->width = static_cast<png_uint_32>(width);
  png->height = static_cast<png_uint_32>(height);
  png->format = format;
  if (!png_image_write_to_file(png.get(), path.c_str(), 0, pixels, 0,
                               nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + png->message);
  }
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> data = decode(path, PNG_FORMAT_RGB, w, h);
  return RgbImage(w, h, std::move(data));
}

BinaryMask read_mask(const std::filesystem::path& path) {
  int w = 0;
  int h = 0;
  const std::vector<std::uint8_t> data = decode(path, PNG_FORMAT_GRAY, w, h);
  BinaryMask mask(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      mask.set(x, y, data[static_cast<std::size_t>(y) * w + x] > 127);
    }
  }
  return mask;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  encode(path, PNG_FORMAT_RGB, img.width(), img.height(), img.data().data());
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(),
                 [](double v) {
                   return static_cast<std::uint8_t>(
                       std::clamp(std::lround(v), 0L, 255L));
                 });
  encode(path, PNG_FORMAT_GRAY, img.width(), img.height(), bytes.data());
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.data().size());
  std::transform(mask.data().begin(), mask.data().end(), bytes.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  encode(path, PNG_FORMAT_GRAY, mask.width(), mask.height(), bytes.data());
}

}  // namespace fuselage::img
