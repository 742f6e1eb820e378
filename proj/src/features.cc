#include "fuselage/features.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fuselage/errors.h"

namespace fuselage::features {
namespace {

void l1_normalize(std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  if (total > 0.0) {
    for (double& x : v) x /= total;
  }
}

// Bins of num / den in [0, 1] with the top edge folded into the last bin.
int ratio_bin(int num, int den) {
  return std::min(kHistogramBins - 1, kHistogramBins * num / den);
}

// HSV bins computed in integers so values on a bin edge land in the upper bin.
// Hue in turns is (sector * delta + offset) / (6 * delta).
std::array<int, 3> hsv_bins(int r, int g, int b) {
  const int max_c = std::max({r, g, b});
  const int delta = max_c - std::min({r, g, b});
  int hue = 0;
  if (delta > 0) {
    int turn;
    if (max_c == r) {
      turn = g - b;
      if (turn < 0) turn += 6 * delta;
    } else if (max_c == g) {
      turn = 2 * delta + b - r;
    } else {
      turn = 4 * delta + r - g;
    }
    hue = ratio_bin(turn, 6 * delta);
  }
  const int sat = max_c == 0 ? 0 : ratio_bin(delta, max_c);
  return {hue, sat, ratio_bin(max_c, 255)};
}

std::array<std::int8_t, 256> make_uniform_table() {
  std::array<std::int8_t, 256> table{};
  int next = 0;
  for (int code = 0; code < 256; ++code) {
    const int rotated = ((code >> 1) | (code << 7)) & 0xFF;
    const int transitions = std::popcount(static_cast<unsigned>(code ^ rotated));
    table[code] = static_cast<std::int8_t>(transitions <= 2 ? next++ : kLbpBins - 1);
  }
  return table;
}

// Bilinear diagonal sample at offset (s, s), s = 1/sqrt(2), compared with the
// center c: sample - c = s(1 - s)(a1 + a2 - 2c) + s^2 (diag - c). Working on
// differences keeps exact ties exact on integer-valued images.
inline bool diagonal_at_least(double c, double a1, double a2, double diag) {
  constexpr double kAxis = 0.70710678118654752 * (1.0 - 0.70710678118654752);
  constexpr double kDiag = 0.5;
  return kAxis * ((a1 - c) + (a2 - c)) + kDiag * (diag - c) >= 0.0;
}

}  // namespace

std::string_view kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kRgbHistogram: return "rgb-hist";
    case FeatureKind::kHsvHistogram: return "hsv-hist";
    case FeatureKind::kLbp: return "lbp";
    case FeatureKind::kSurf: return "surf";
    case FeatureKind::kExternal: return "external";
  }
  return "unknown";
}

std::optional<FeatureKind> parse_kind(std::string_view name) {
  for (FeatureKind k : {FeatureKind::kRgbHistogram, FeatureKind::kHsvHistogram,
                        FeatureKind::kLbp, FeatureKind::kSurf,
                        FeatureKind::kExternal}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

int kind_dimension(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kRgbHistogram:
    case FeatureKind::kHsvHistogram: return 3 * kHistogramBins;
    case FeatureKind::kLbp: return kLbpBins;
    case FeatureKind::kSurf: return kSurfDimension;
    case FeatureKind::kExternal: return 0;
  }
  return 0;
}

FeatureVector rgb_histogram(const img::RgbImage& patch) {
  FeatureVector f{FeatureKind::kRgbHistogram,
                  std::vector<double>(3 * kHistogramBins, 0.0)};
  const auto data = patch.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int channel = static_cast<int>(i % 3);
    f.values[channel * kHistogramBins + data[i] / (256 / kHistogramBins)] += 1.0;
  }
  l1_normalize(f.values);
  return f;
}

FeatureVector hsv_histogram(const img::RgbImage& patch) {
  FeatureVector f{FeatureKind::kHsvHistogram,
                  std::vector<double>(3 * kHistogramBins, 0.0)};
  const auto data = patch.data();
  for (std::size_t i = 0; i + 2 < data.size(); i += 3) {
    const auto [h, s, v] = hsv_bins(data[i], data[i + 1], data[i + 2]);
    f.values[h] += 1.0;
    f.values[kHistogramBins + s] += 1.0;
    f.values[2 * kHistogramBins + v] += 1.0;
  }
  l1_normalize(f.values);
  return f;
}

int lbp_uniform_bin(std::uint8_t code) {
  static const std::array<std::int8_t, 256> table = make_uniform_table();
  return table[code];
}

FeatureVector lbp_histogram(const img::GrayImage& patch) {
  const int w = patch.width();
  const int h = patch.height();
  if (w < 3 || h < 3) {
    throw ParameterError("LBP needs a patch of at least 3x3");
  }
  FeatureVector f{FeatureKind::kLbp, std::vector<double>(kLbpBins, 0.0)};
  for (int y = 1; y < h - 1; ++y) {
    const double* up = patch.row(y - 1);
    const double* mid = patch.row(y);
    const double* down = patch.row(y + 1);
    for (int x = 1; x < w - 1; ++x) {
      const double c = mid[x];
      const bool ne = diagonal_at_least(c, mid[x + 1], up[x], up[x + 1]);
      const bool nw = diagonal_at_least(c, mid[x - 1], up[x], up[x - 1]);
      const bool sw = diagonal_at_least(c, mid[x - 1], down[x], down[x - 1]);
      const bool se = diagonal_at_least(c, mid[x + 1], down[x], down[x + 1]);
      unsigned code = 0;
      code |= (mid[x + 1] >= c) << 0;
      code |= ne << 1;
      code |= (up[x] >= c) << 2;
      code |= nw << 3;
      code |= (mid[x - 1] >= c) << 4;
      code |= sw << 5;
      code |= (down[x] >= c) << 6;
      code |= se << 7;
      f.values[lbp_uniform_bin(static_cast<std::uint8_t>(code))] += 1.0;
    }
  }
  l1_normalize(f.values);
  return f;
}

FeatureVector surf_patch_descriptor(const img::GrayImage& patch) {
  const int n = patch.width();
  if (patch.height() != n) {
    throw ParameterError("SURF patch descriptor needs a square patch");
  }
  if (n < kSurfMinSide) {
    throw ParameterError("SURF patch descriptor needs side >= " +
                         std::to_string(kSurfMinSide));
  }
  const img::IntegralImage ii(patch);
  const double scale = n / 20.0;
  const int half = std::max(1, static_cast<int>(std::lround(scale)));
  const double sigma = 3.3 * scale;
  const double center = n / 2.0;
  // Responses below this are integral-image rounding, not image content.
  const double zero_floor = 1e-9 * 2.0 * half * half * 255.0;

  FeatureVector f{FeatureKind::kSurf, std::vector<double>(kSurfDimension, 0.0)};
  for (int j = 0; j < 20; ++j) {
    const double v = (j + 0.5) * scale;
    const int ey = std::clamp(static_cast<int>(std::lround(v)), half, n - half);
    for (int i = 0; i < 20; ++i) {
      const double u = (i + 0.5) * scale;
      const int ex = std::clamp(static_cast<int>(std::lround(u)), half, n - half);
      double dx = ii.sum_unchecked(ex, ey - half, half, 2 * half) -
                  ii.sum_unchecked(ex - half, ey - half, half, 2 * half);
      double dy = ii.sum_unchecked(ex - half, ey, 2 * half, half) -
                  ii.sum_unchecked(ex - half, ey - half, 2 * half, half);
      if (std::abs(dx) <= zero_floor) dx = 0.0;
      if (std::abs(dy) <= zero_floor) dy = 0.0;
      const double gu = u - center;
      const double gv = v - center;
      const double g = std::exp(-(gu * gu + gv * gv) / (2.0 * sigma * sigma));
      double* cell = &f.values[((j / 5) * 4 + i / 5) * 4];
      cell[0] += g * dx;
      cell[1] += g * dy;
      cell[2] += g * std::abs(dx);
      cell[3] += g * std::abs(dy);
    }
  }
  double norm = 0.0;
  for (double x : f.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : f.values) x /= norm;
  }
  return f;
}

bool EmbeddingTable::contains(std::string_view key) const {
  return rows_.contains(std::string(key));
}

FeatureVector EmbeddingTable::lookup(std::string_view key) const {
  const auto it = rows_.find(std::string(key));
  if (it == rows_.end()) {
    throw LookupError("no embedding for patch key '" + std::string(key) + "'");
  }
  const float* row = data_.data() + it->second * dimension_;
  return {FeatureKind::kExternal, std::vector<double>(row, row + dimension_)};
}

std::filesystem::path embedding_vector_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p.replace_extension(".f32");
  return p;
}

EmbeddingTable load_embeddings(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open embedding manifest " + manifest_path.string());
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("K=")) {
    throw FormatError(manifest_path.string() + ": missing 'K=<dim>' header");
  }
  EmbeddingTable table;
  try {
    table.dimension_ = std::stoi(line.substr(2));
  } catch (const std::exception&) {
    throw FormatError(manifest_path.string() + ": bad dimension '" + line + "'");
  }
  if (table.dimension_ < 1) {
    throw FormatError(manifest_path.string() + ": dimension must be positive");
  }
  std::size_t max_row = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    std::size_t row = 0;
    try {
      if (tab == std::string::npos) throw std::invalid_argument("tab");
      std::size_t used = 0;
      row = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": expected 'key<TAB>row'");
    }
    table.rows_[line.substr(0, tab)] = row;
    max_row = std::max(max_row, row + 1);
  }

  const std::filesystem::path vec_path = embedding_vector_path(manifest_path);
  std::ifstream vin(vec_path, std::ios::binary);
  if (!vin) throw IoError("cannot open embedding vectors " + vec_path.string());
  const std::size_t bytes = std::filesystem::file_size(vec_path);
  const std::size_t needed = max_row * table.dimension_ * sizeof(float);
  if (bytes < needed || bytes % (table.dimension_ * sizeof(float)) != 0) {
    throw FormatError(vec_path.string() + " holds " + std::to_string(bytes) +
                      " bytes, expected a multiple of " +
                      std::to_string(table.dimension_ * sizeof(float)) +
                      " covering " + std::to_string(max_row) + " rows");
  }
  std::vector<unsigned char> raw(bytes);
  vin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  table.data_.resize(bytes / sizeof(float));
  for (std::size_t i = 0; i < table.data_.size(); ++i) {
    const unsigned char* b = &raw[i * 4];
    const std::uint32_t word = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                               std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
    table.data_[i] = std::bit_cast<float>(word);
  }
  return table;
}

void write_embeddings(const std::filesystem::path& manifest_path,
                      const std::vector<std::string>& keys,
                      const std::vector<std::vector<float>>& vectors) {
  if (keys.size() != vectors.size() || vectors.empty()) {
    throw ParameterError("embedding keys and vectors must be non-empty and aligned");
  }
  const std::size_t k = vectors.front().size();
  std::ofstream man(manifest_path);
  std::ofstream vec(embedding_vector_path(manifest_path), std::ios::binary);
  if (!man || !vec) throw IoError("cannot write embeddings at " + manifest_path.string());
  man << "K=" << k << '\n';
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (vectors[i].size() != k) throw ParameterError("ragged embedding vectors");
    man << keys[i] << '\t' << i << '\n';
    for (float x : vectors[i]) {
      const auto word = std::bit_cast<std::uint32_t>(x);
      const char b[4] = {char(word & 0xFF), char(word >> 8 & 0xFF),
                         char(word >> 16 & 0xFF), char(word >> 24 & 0xFF)};
      vec.write(b, 4);
    }
  }
}

FeatureVector extract(const img::RgbImage& rgb, FeatureKind kind,
                      const EmbeddingTable* table, std::string_view key,
                      const img::GrayImage* gray) {
  switch (kind) {
    case FeatureKind::kRgbHistogram: return rgb_histogram(rgb);
    case FeatureKind::kHsvHistogram: return hsv_histogram(rgb);
    case FeatureKind::kLbp:
      return gray ? lbp_histogram(*gray) : lbp_histogram(img::to_grayscale(rgb));
    case FeatureKind::kSurf:
      return gray ? surf_patch_descriptor(*gray)
                  : surf_patch_descriptor(img::to_grayscale(rgb));
    case FeatureKind::kExternal:
      if (table == nullptr) {
        throw ConfigError("external features need an embedding table (--embeddings)");
      }
      return table->lookup(key);
  }
  throw ConfigError("unknown feature kind");
}

}  // namespace fuselage::features
