#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace fuselage::img {

// Axis-aligned rectangle in pixel units; x is the column, y the row.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  friend bool operator==(const Rect&, const Rect&) = default;
};

// Row-major 8-bit RGB raster.
class RgbImage {
 public:
  RgbImage() = default;
  // Zero-filled image. Throws ParameterError for non-positive dimensions.
  RgbImage(int width, int height);
  RgbImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y, int channel) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + channel];
  }
  std::uint8_t& at(int x, int y, int channel) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + channel];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = &data_[(static_cast<std::size_t>(y) * width_ + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// Row-major scalar intensities on the 0..255 scale at double precision.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0);
  GrayImage(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double at(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  double& at(int x, int y) {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const double* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_;
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Binary raster; 1 marks a defect pixel.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  std::uint8_t at(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  void set(int x, int y, bool on) {
    data_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0;
  }
  std::size_t count() const;

  std::span<const std::uint8_t> data() const { return data_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// Summed-area table with a zero top row and left column:
// at(i, j) is the sum of every pixel with row < i and column < j.
class IntegralImage {
 public:
  IntegralImage() = default;
  explicit IntegralImage(const GrayImage& src);

  // Source dimensions (the table is one larger in each direction).
  int width() const { return width_; }
  int height() const { return height_; }

  double at(int row, int col) const {
    return table_[static_cast<std::size_t>(row) * (width_ + 1) + col];
  }

  // Sum over the rectangle without bounds checks; callers guarantee r fits.
  double sum_unchecked(int x, int y, int w, int h) const {
    const std::size_t stride = static_cast<std::size_t>(width_) + 1;
    const double* top = table_.data() + static_cast<std::size_t>(y) * stride;
    const double* bottom = top + static_cast<std::size_t>(h) * stride;
    return bottom[x + w] - bottom[x] - top[x + w] + top[x];
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> table_;
};

enum class FlipAxis { kHorizontal, kVertical };

// Top-left (row, col) of one patch.
struct Anchor {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Anchor&, const Anchor&) = default;
};

// Square tiling of an image. Anchors are stored row-major.
struct PatchGrid {
  int patch_size = 65;
  int image_width = 0;
  int image_height = 0;
  std::vector<int> row_starts;
  std::vector<int> col_starts;

  std::size_t size() const { return row_starts.size() * col_starts.size(); }
  int rows() const { return static_cast<int>(row_starts.size()); }
  int cols() const { return static_cast<int>(col_starts.size()); }
  Anchor anchor(std::size_t index) const {
    return {row_starts[index / col_starts.size()],
            col_starts[index % col_starts.size()]};
  }
  std::vector<Anchor> anchors() const;
  Rect rect(std::size_t index) const {
    const Anchor a = anchor(index);
    return {a.col, a.row, patch_size, patch_size};
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

GrayImage to_grayscale(const RgbImage& img);

IntegralImage build_integral(const GrayImage& img);

// Throws BoundsError when r leaves the source image.
double box_sum(const IntegralImage& ii, const Rect& r);

// Discrete Gaussian of radius ceil(3 sigma), normalized to sum 1.
std::vector<double> gaussian_kernel(double sigma);

// Separable blur with reflect-101 borders. Throws ParameterError if sigma <= 0.
GrayImage gaussian_blur(const GrayImage& img, double sigma);
// Blurs each channel independently and rounds back to 8 bits.
RgbImage gaussian_blur(const RgbImage& img, double sigma);

struct Hsv {
  double h = 0.0;  // degrees in [0, 360)
  double s = 0.0;  // [0, 1]
  double v = 0.0;  // [0, 1]
};
Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);

// Anchors at multiples of patch_size; the last row/column is clamped to
// (dimension - patch_size) so the grid covers the whole image.
PatchGrid partition(int width, int height, int patch_size);

std::pair<double, double> intensity_range(const GrayImage& img, const Rect& r);

RgbImage crop(const RgbImage& img, const Rect& r);
GrayImage crop(const GrayImage& img, const Rect& r);

// Rotation about the patch center with bilinear sampling and reflect-101
// padding. Output keeps the input size. Throws ParameterError if not square.
GrayImage rotate_patch(const GrayImage& img, double angle_degrees);
RgbImage rotate_patch(const RgbImage& img, double angle_degrees);

GrayImage flip_patch(const GrayImage& img, FlipAxis axis);
RgbImage flip_patch(const RgbImage& img, FlipAxis axis);

// Maps any integer index onto [0, n) by mirroring without repeating the edge.
int reflect_index(int i, int n);

}  // namespace fuselage::img
