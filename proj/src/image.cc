#include "fuselage/image.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "fuselage/errors.h"

namespace fuselage::img {
namespace {

void check_dimensions(int width, int height) {
  if (width < 1 || height < 1) {
    throw ParameterError("image dimensions must be positive, got " +
                         std::to_string(width) + "x" + std::to_string(height));
  }
}

void check_rect(const Rect& r, int width, int height) {
  if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > width ||
      r.y + r.h > height) {
    throw BoundsError("rect (" + std::to_string(r.x) + "," +
                      std::to_string(r.y) + "," + std::to_string(r.w) + "," +
                      std::to_string(r.h) + ") outside " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
}

// Interpolation written as two nested lerps so that a constant neighborhood
// reproduces the constant bit-for-bit.
inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Source coordinates for output pixel (x, y) of a rotation by `degrees`.
// Multiples of 90 degrees use exact trigonometry so they reduce to index
// permutations.
struct RotationMap {
  double cos_a;
  double sin_a;
  double center;

  RotationMap(double degrees, int size) : center((size - 1) / 2.0) {
    const double quarter_turns = degrees / 90.0;
    if (quarter_turns == std::round(quarter_turns)) {
      static constexpr double kCos[4] = {1, 0, -1, 0};
      static constexpr double kSin[4] = {0, 1, 0, -1};
      const int k = ((static_cast<int>(quarter_turns) % 4) + 4) % 4;
      cos_a = kCos[k];
      sin_a = kSin[k];
    } else {
      const double rad = degrees * std::numbers::pi / 180.0;
      cos_a = std::cos(rad);
      sin_a = std::sin(rad);
    }
  }

  std::pair<double, double> source(int x, int y) const {
    const double dx = x - center;
    const double dy = y - center;
    return {center + cos_a * dx + sin_a * dy, center - sin_a * dx + cos_a * dy};
  }
};

struct BilinearTap {
  int x0, x1, y0, y1;
  double fx, fy;
};

BilinearTap make_tap(double sx, double sy, int size) {
  const double fx0 = std::floor(sx);
  const double fy0 = std::floor(sy);
  const int ix = static_cast<int>(fx0);
  const int iy = static_cast<int>(fy0);
  return {reflect_index(ix, size), reflect_index(ix + 1, size),
          reflect_index(iy, size), reflect_index(iy + 1, size), sx - fx0,
          sy - fy0};
}

void check_square(int width, int height) {
  if (width != height) {
    throw ParameterError("rotation requires a square patch, got " +
                         std::to_string(width) + "x" + std::to_string(height));
  }
}

}  // namespace

RgbImage::RgbImage(int width, int height) : width_(width), height_(height) {
  check_dimensions(width, height);
  data_.assign(static_cast<std::size_t>(width) * height * 3, 0);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dimensions(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw ParameterError("RGB buffer size does not match dimensions");
  }
}

GrayImage::GrayImage(int width, int height, double fill)
    : width_(width), height_(height) {
  check_dimensions(width, height);
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

GrayImage::GrayImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dimensions(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw ParameterError("gray buffer size does not match dimensions");
  }
}

BinaryMask::BinaryMask(int width, int height)
    : width_(width), height_(height) {
  check_dimensions(width, height);
  data_.assign(static_cast<std::size_t>(width) * height, 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1));
}

IntegralImage::IntegralImage(const GrayImage& src)
    : width_(src.width()), height_(src.height()) {
  const std::size_t stride = static_cast<std::size_t>(width_) + 1;
  table_.assign(stride * (static_cast<std::size_t>(height_) + 1), 0.0);
  for (int y = 0; y < height_; ++y) {
    const double* in = src.row(y);
    const double* above = table_.data() + static_cast<std::size_t>(y) * stride;
    double* out = table_.data() + static_cast<std::size_t>(y + 1) * stride;
    double running = 0.0;
    for (int x = 0; x < width_; ++x) {
      running += in[x];
      out[x + 1] = above[x + 1] + running;
    }
  }
}

std::vector<Anchor> PatchGrid::anchors() const {
  std::vector<Anchor> out;
  out.reserve(size());
  for (int r : row_starts) {
    for (int c : col_starts) out.push_back({r, c});
  }
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

GrayImage to_grayscale(const RgbImage& img) {
  GrayImage out(img.width(), img.height());
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] +
             0.114 * src[3 * i + 2];
    // The three weights sum to 1 only up to rounding.
    dst[i] = std::clamp(dst[i], 0.0, 255.0);
  }
  return out;
}

IntegralImage build_integral(const GrayImage& img) {
  return IntegralImage(img);
}

double box_sum(const IntegralImage& ii, const Rect& r) {
  check_rect(r, ii.width(), ii.height());
  return ii.sum_unchecked(r.x, r.y, r.w, r.h);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) {
    throw ParameterError("gaussian sigma must be positive");
  }
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= total;
  return k;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width();
  const int h = img.height();

  // Horizontal pass on a row padded by reflection, then vertical pass.
  GrayImage tmp(w, h);
  std::vector<double> padded(w + 2 * radius);
  for (int y = 0; y < h; ++y) {
    const double* in = img.row(y);
    for (int i = 0; i < w + 2 * radius; ++i) {
      padded[i] = in[reflect_index(i - radius, w)];
    }
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel.size(); ++k) {
        acc += kernel[k] * padded[x + k];
      }
      tmp.at(x, y) = acc;
    }
  }

  GrayImage out(w, h);
  std::vector<double> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int k = -radius; k <= radius; ++k) {
      const double weight = kernel[k + radius];
      const double* src = tmp.row(reflect_index(y + k, h));
      for (int x = 0; x < w; ++x) acc[x] += weight * src[x];
    }
    double* dst = out.data().data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) dst[x] = std::clamp(acc[x], 0.0, 255.0);
  }
  return out;
}

RgbImage gaussian_blur(const RgbImage& img, double sigma) {
  const int w = img.width();
  const int h = img.height();
  RgbImage out(w, h);
  for (int c = 0; c < 3; ++c) {
    GrayImage channel(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) channel.at(x, y) = img.at(x, y, c);
    }
    const GrayImage blurred = gaussian_blur(channel, sigma);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(x, y, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(blurred.at(x, y)), 0L, 255L));
      }
    }
  }
  return out;
}

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int max_c = std::max({r, g, b});
  const int min_c = std::min({r, g, b});
  const int delta = max_c - min_c;
  Hsv out;
  out.v = max_c / 255.0;
  out.s = max_c == 0 ? 0.0 : static_cast<double>(delta) / max_c;
  if (delta == 0) return out;
  double h;
  if (max_c == r) {
    h = 60.0 * static_cast<double>(g - b) / delta;
  } else if (max_c == g) {
    h = 60.0 * (2.0 + static_cast<double>(b - r) / delta);
  } else {
    h = 60.0 * (4.0 + static_cast<double>(r - g) / delta);
  }
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  out.h = h;
  return out;
}

PatchGrid partition(int width, int height, int patch_size) {
  if (patch_size < 1) throw ParameterError("patch size must be positive");
  if (width < patch_size || height < patch_size) {
    throw ParameterError("image " + std::to_string(width) + "x" +
                         std::to_string(height) + " is smaller than patch size " +
                         std::to_string(patch_size));
  }
  auto starts = [patch_size](int extent) {
    std::vector<int> out;
    for (int s = 0; s + patch_size <= extent; s += patch_size) out.push_back(s);
    if (out.back() + patch_size < extent) out.push_back(extent - patch_size);
    return out;
  };
  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.image_width = width;
  grid.image_height = height;
  grid.row_starts = starts(height);
  grid.col_starts = starts(width);
  return grid;
}

std::pair<double, double> intensity_range(const GrayImage& img, const Rect& r) {
  check_rect(r, img.width(), img.height());
  double lo = img.at(r.x, r.y);
  double hi = lo;
  for (int y = r.y; y < r.y + r.h; ++y) {
    const double* row = img.row(y);
    for (int x = r.x; x < r.x + r.w; ++x) {
      lo = std::min(lo, row[x]);
      hi = std::max(hi, row[x]);
    }
  }
  return {lo, hi};
}

RgbImage crop(const RgbImage& img, const Rect& r) {
  check_rect(r, img.width(), img.height());
  RgbImage out(r.w, r.h);
  const auto src = img.data();
  auto dst = out.data();
  for (int y = 0; y < r.h; ++y) {
    const auto begin =
        src.begin() + (static_cast<std::size_t>(r.y + y) * img.width() + r.x) * 3;
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(r.w) * 3,
              dst.begin() + static_cast<std::size_t>(y) * r.w * 3);
  }
  return out;
}

GrayImage crop(const GrayImage& img, const Rect& r) {
  check_rect(r, img.width(), img.height());
  GrayImage out(r.w, r.h);
  auto dst = out.data();
  for (int y = 0; y < r.h; ++y) {
    const double* row = img.row(r.y + y) + r.x;
    std::copy(row, row + r.w, dst.begin() + static_cast<std::size_t>(y) * r.w);
  }
  return out;
}

GrayImage rotate_patch(const GrayImage& img, double angle_degrees) {
  check_square(img.width(), img.height());
  const int n = img.width();
  const RotationMap map(angle_degrees, n);
  GrayImage out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto [sx, sy] = map.source(x, y);
      const BilinearTap t = make_tap(sx, sy, n);
      const double top = lerp(img.at(t.x0, t.y0), img.at(t.x1, t.y0), t.fx);
      const double bottom = lerp(img.at(t.x0, t.y1), img.at(t.x1, t.y1), t.fx);
      out.at(x, y) = lerp(top, bottom, t.fy);
    }
  }
  return out;
}

RgbImage rotate_patch(const RgbImage& img, double angle_degrees) {
  check_square(img.width(), img.height());
  const int n = img.width();
  const RotationMap map(angle_degrees, n);
  RgbImage out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto [sx, sy] = map.source(x, y);
      const BilinearTap t = make_tap(sx, sy, n);
      for (int c = 0; c < 3; ++c) {
        const double top = lerp(img.at(t.x0, t.y0, c), img.at(t.x1, t.y0, c), t.fx);
        const double bottom =
            lerp(img.at(t.x0, t.y1, c), img.at(t.x1, t.y1, c), t.fx);
        out.at(x, y, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(lerp(top, bottom, t.fy)), 0L, 255L));
      }
    }
  }
  return out;
}

GrayImage flip_patch(const GrayImage& img, FlipAxis axis) {
  const int w = img.width();
  const int h = img.height();
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(x, y) = axis == FlipAxis::kHorizontal ? img.at(w - 1 - x, y)
                                                   : img.at(x, h - 1 - y);
    }
  }
  return out;
}

RgbImage flip_patch(const RgbImage& img, FlipAxis axis) {
  const int w = img.width();
  const int h = img.height();
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sx = axis == FlipAxis::kHorizontal ? w - 1 - x : x;
      const int sy = axis == FlipAxis::kVertical ? h - 1 - y : y;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

}  // namespace fuselage::img
