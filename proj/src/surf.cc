#include "fuselage/surf.h"

#include <algorithm>
#include <limits>
#include <string>
#include <tuple>

#include "fuselage/errors.h"

namespace fuselage::surf {
namespace {

constexpr int kMinImageSide = 27;
constexpr int kLayers = 4;
constexpr double kInvalid = -std::numeric_limits<double>::infinity();

// Unchecked response; the caller guarantees the footprint fits.
inline double response_at(const img::IntegralImage& ii, int x, int y, int L) {
  const int border = (L - 1) / 2;
  const int lobe = L / 3;
  const double inv_area = 1.0 / (static_cast<double>(L) * L);
  const double dxx =
      ii.sum_unchecked(x - border, y - lobe + 1, L, 2 * lobe - 1) -
      3.0 * ii.sum_unchecked(x - lobe / 2, y - lobe + 1, lobe, 2 * lobe - 1);
  const double dyy =
      ii.sum_unchecked(x - lobe + 1, y - border, 2 * lobe - 1, L) -
      3.0 * ii.sum_unchecked(x - lobe + 1, y - lobe / 2, 2 * lobe - 1, lobe);
  const double dxy = ii.sum_unchecked(x + 1, y - lobe, lobe, lobe) +
                     ii.sum_unchecked(x - lobe, y + 1, lobe, lobe) -
                     ii.sum_unchecked(x - lobe, y - lobe, lobe, lobe) -
                     ii.sum_unchecked(x + 1, y + 1, lobe, lobe);
  const double nxx = dxx * inv_area;
  const double nyy = dyy * inv_area;
  const double nxy = dxy * inv_area;
  return nxx * nyy - 0.81 * nxy * nxy;
}

// Responses of one layer sampled every `step` pixels; kInvalid where the
// footprint leaves the image.
struct Layer {
  int filter = 0;
  int step = 1;
  int cols = 0;
  int rows = 0;
  std::vector<double> values;

  double at(int c, int r) const { return values[std::size_t(r) * cols + c]; }
};

Layer compute_layer(const img::IntegralImage& ii, int filter, int step) {
  Layer layer;
  layer.filter = filter;
  layer.step = step;
  layer.cols = (ii.width() + step - 1) / step;
  layer.rows = (ii.height() + step - 1) / step;
  layer.values.assign(std::size_t(layer.cols) * layer.rows, kInvalid);
  const int border = (filter - 1) / 2;
  for (int r = 0; r < layer.rows; ++r) {
    const int y = r * step;
    if (y - border < 0 || y + border >= ii.height()) continue;
    for (int c = 0; c < layer.cols; ++c) {
      const int x = c * step;
      if (x - border < 0 || x + border >= ii.width()) continue;
      layer.values[std::size_t(r) * layer.cols + c] = response_at(ii, x, y, filter);
    }
  }
  return layer;
}

bool is_extremum(const Layer& below, const Layer& mid, const Layer& above, int c,
                 int r, double threshold) {
  const double v = mid.at(c, r);
  if (v == kInvalid || v < threshold) return false;
  if (c < 1 || r < 1 || c + 1 >= mid.cols || r + 1 >= mid.rows) return false;
  // Exact ties are broken by scan order (layer, row, column): a response
  // must exceed the neighbors after it and match or exceed those before it,
  // so one sample of a flat-topped peak survives.
  const Layer* layers[3] = {&below, &mid, &above};
  for (int li = 0; li < 3; ++li) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (li == 1 && dr == 0 && dc == 0) continue;
        const double other = layers[li]->at(c + dc, r + dr);
        // Maxima next to an uncomputed response cannot be verified.
        if (other == kInvalid || other > v) return false;
        const bool before = li < 1 || (li == 1 && (dr < 0 || (dr == 0 && dc < 0)));
        if (other == v && !before) return false;
      }
    }
  }
  return true;
}

}  // namespace

void DetectorParams::validate() const {
  if (!(threshold > 0.0)) throw ParameterError("detector threshold must be > 0");
  if (octaves < 1) throw ParameterError("detector needs at least one octave");
  if (initial_step < 1) throw ParameterError("detector step must be >= 1");
}

int filter_size(int octave, int layer) {
  // Each octave's filter increment doubles; octave o starts at its
  // predecessor's second layer.
  const int increment = 6 << octave;
  const int first = 3 * (1 << (octave + 1)) + 3;  // 9, 15, 27, 51, ...
  return first + increment * layer;
}

bool footprint_fits(const img::IntegralImage& ii, int x, int y, int filter_size) {
  const int border = (filter_size - 1) / 2;
  return x - border >= 0 && y - border >= 0 && x + border < ii.width() &&
         y + border < ii.height();
}

double hessian_response(const img::IntegralImage& ii, int x, int y,
                        int filter_size) {
  if (filter_size < 9 || filter_size % 2 == 0 || filter_size % 3 != 0) {
    throw ParameterError("filter size must be an odd multiple of 3, >= 9");
  }
  if (!footprint_fits(ii, x, y, filter_size)) {
    throw BoundsError("filter of size " + std::to_string(filter_size) + " at (" +
                      std::to_string(x) + "," + std::to_string(y) +
                      ") leaves the image");
  }
  return response_at(ii, x, y, filter_size);
}

std::vector<Keypoint> detect(const img::GrayImage& img,
                             const DetectorParams& params) {
  if (img.width() < kMinImageSide || img.height() < kMinImageSide) {
    throw ParameterError("detector needs an image of at least 27x27");
  }
  return detect(img::IntegralImage(img), params);
}

std::vector<Keypoint> detect(const img::IntegralImage& ii,
                             const DetectorParams& params) {
  params.validate();
  if (ii.width() < kMinImageSide || ii.height() < kMinImageSide) {
    throw ParameterError("detector needs an image of at least 27x27");
  }
  std::vector<Keypoint> out;
  for (int o = 0; o < params.octaves; ++o) {
    const int step = params.initial_step << o;
    // Stop once even the smallest filter of the octave no longer fits.
    if (filter_size(o, 0) > std::min(ii.width(), ii.height())) break;
    std::vector<Layer> layers;
    for (int l = 0; l < kLayers; ++l) {
      layers.push_back(compute_layer(ii, filter_size(o, l), step));
    }
    for (int l = 1; l + 1 < kLayers; ++l) {
      const Layer& mid = layers[l];
      for (int r = 1; r + 1 < mid.rows; ++r) {
        for (int c = 1; c + 1 < mid.cols; ++c) {
          if (is_extremum(layers[l - 1], mid, layers[l + 1], c, r,
                          params.threshold)) {
            out.push_back({c * step, r * step, 1.2 * mid.filter / 9.0, mid.at(c, r)});
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) {
    return std::tie(a.y, a.x, a.scale) < std::tie(b.y, b.x, b.scale);
  });
  return out;
}

std::set<std::size_t> gate_patches(const img::PatchGrid& grid,
                                   const std::vector<Keypoint>& keypoints) {
  std::set<std::size_t> selected;
  const int size = grid.patch_size;
  for (const Keypoint& kp : keypoints) {
    // Clamped border anchors overlap, so scan the (at most two) candidate
    // rows and columns that can contain the point.
    for (int ri = 0; ri < grid.rows(); ++ri) {
      const int r0 = grid.row_starts[ri];
      if (kp.y < r0 || kp.y >= r0 + size) continue;
      for (int ci = 0; ci < grid.cols(); ++ci) {
        const int c0 = grid.col_starts[ci];
        if (kp.x < c0 || kp.x >= c0 + size) continue;
        selected.insert(std::size_t(ri) * grid.cols() + ci);
      }
    }
  }
  return selected;
}

}  // namespace fuselage::surf
