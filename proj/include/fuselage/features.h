#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fuselage/image.h"

namespace fuselage::features {

enum class FeatureKind { kRgbHistogram, kHsvHistogram, kLbp, kSurf, kExternal };

std::string_view kind_name(FeatureKind kind);
// Accepts the CLI spellings: rgb-hist, hsv-hist, lbp, surf, external.
std::optional<FeatureKind> parse_kind(std::string_view name);

// Fixed dimension for built-in kinds; 0 for kExternal (read from its table).
int kind_dimension(FeatureKind kind);

struct FeatureVector {
  FeatureKind kind = FeatureKind::kLbp;
  std::vector<double> values;
};

inline constexpr int kHistogramBins = 32;
inline constexpr int kLbpBins = 59;
inline constexpr int kSurfDimension = 64;
inline constexpr int kSurfMinSide = 40;

// 32 bins per channel over [0, 256), R|G|B, L1-normalized.
FeatureVector rgb_histogram(const img::RgbImage& patch);

// 32 bins per channel over H [0, 360), S [0, 1], V [0, 1], L1-normalized.
FeatureVector hsv_histogram(const img::RgbImage& patch);

// Uniform LBP(8, 1) over interior pixels; bit k is set when neighbor k is >=
// the center. Neighbor k sits at angle 45k degrees counterclockwise from +x,
// so diagonals are bilinearly interpolated. 58 uniform bins in ascending code
// order plus one bin for every non-uniform code.
FeatureVector lbp_histogram(const img::GrayImage& patch);

// Bin index of an 8-bit LBP code under the uniform mapping above.
int lbp_uniform_bin(std::uint8_t code);

// Upright SURF descriptor of one keypoint at the patch center with scale
// side / 20. Zero vector when every Haar response vanishes.
FeatureVector surf_patch_descriptor(const img::GrayImage& patch);

// ---- External embeddings ---------------------------------------------------

// Precomputed vectors from an outside extractor. The manifest is a text file
// with a "K=<dim>" header followed by "patch_key<TAB>row" lines; the vectors
// live next to it (same stem, ".f32" extension) as little-endian float32 rows.
class EmbeddingTable {
 public:
  int dimension() const { return dimension_; }
  std::size_t size() const { return rows_.size(); }
  bool contains(std::string_view key) const;

  // Throws LookupError naming the key when it is absent.
  FeatureVector lookup(std::string_view key) const;

 private:
  friend EmbeddingTable load_embeddings(const std::filesystem::path&);
  int dimension_ = 0;
  std::unordered_map<std::string, std::size_t> rows_;
  std::vector<float> data_;
};

std::filesystem::path embedding_vector_path(const std::filesystem::path& manifest);

// Throws IoError for missing files and FormatError when the vector file
// does not hold every indexed row.
EmbeddingTable load_embeddings(const std::filesystem::path& manifest_path);

void write_embeddings(const std::filesystem::path& manifest_path,
                      const std::vector<std::string>& keys,
                      const std::vector<std::vector<float>>& vectors);

inline FeatureVector lookup_embedding(const EmbeddingTable& table,
                                      std::string_view key) {
  return table.lookup(key);
}

// Dispatch on kind. `gray` overrides the grayscale derived from `rgb` (used
// when the pipeline works on a blurred copy). External kinds need `table`
// and `key`; otherwise ConfigError.
FeatureVector extract(const img::RgbImage& rgb, FeatureKind kind,
                      const EmbeddingTable* table = nullptr,
                      std::string_view key = {},
                      const img::GrayImage* gray = nullptr);

}  // namespace fuselage::features
