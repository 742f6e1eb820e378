#pragma once

#include <set>
#include <vector>

#include "fuselage/image.h"

namespace fuselage::surf {

struct Keypoint {
  int x = 0;
  int y = 0;
  double scale = 0.0;  // 1.2 * filter_size / 9
  double response = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// Shipped threshold (0..255 intensity scale). Calibrated on the synthetic
// generator's default scenes for high defect-patch recall at low selection.
inline constexpr double kDefaultThreshold = 5.0;

struct DetectorParams {
  double threshold = kDefaultThreshold;
  int octaves = 3;
  // Sampling step of the first octave; doubles every octave.
  int initial_step = 2;

  void validate() const;
};

// Filter size of layer `layer` (0..3) in octave `octave` (0-based):
// 9, 15, 21, 27 | 15, 27, 39, 51 | 27, 51, 75, 99 | ...
int filter_size(int octave, int layer);

// True when the filter_size x filter_size footprint centered on (x, y) lies
// inside the image.
bool footprint_fits(const img::IntegralImage& ii, int x, int y, int filter_size);

// Box-filter Hessian determinant Dxx*Dyy - (0.9*Dxy)^2, each second
// derivative normalized by the filter area. Throws BoundsError when the
// footprint leaves the image.
double hessian_response(const img::IntegralImage& ii, int x, int y,
                        int filter_size);

// Scale-space maxima above threshold over the middle layers of each octave.
// Output is sorted by (y, x, scale). Throws ParameterError for images smaller
// than 27x27.
std::vector<Keypoint> detect(const img::GrayImage& img,
                             const DetectorParams& params = {});
std::vector<Keypoint> detect(const img::IntegralImage& ii,
                             const DetectorParams& params = {});

// Indices (grid order) of patches containing at least one keypoint.
std::set<std::size_t> gate_patches(const img::PatchGrid& grid,
                                   const std::vector<Keypoint>& keypoints);

}  // namespace fuselage::surf
