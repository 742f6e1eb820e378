#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fuselage/dataset.h"
#include "fuselage/features.h"
#include "fuselage/image.h"
#include "fuselage/surf.h"
#include "fuselage/svm.h"

namespace fuselage::pipeline {

enum class Mode { kWashed, kUnwashed };

std::string_view mode_name(Mode mode);
std::optional<Mode> parse_mode(std::string_view name);

struct PipelineConfig {
  int patch_size = 65;
  features::FeatureKind feature = features::FeatureKind::kLbp;
  Mode mode = Mode::kWashed;
  double blur_sigma = 1.5;    // unwashed pre-filter
  surf::DetectorParams detector;
  double iv_threshold = 8.0;  // intensity levels
  // Neighbor expansion after classification. Unset: on for unwashed only.
  std::optional<bool> expand;
  svm::TrainConfig svm;
  std::uint64_t seed = 7;

  bool expansion_enabled() const { return expand.value_or(mode == Mode::kUnwashed); }
  // Throws ParameterError for out-of-range values.
  void validate() const;
};

// Trained classifier plus everything inference needs to reproduce the
// training-time feature path.
struct PipelineModel {
  svm::LinearSvmModel svm;
  features::FeatureKind feature = features::FeatureKind::kLbp;
  int patch_size = 65;
  Mode mode = Mode::kWashed;
  double blur_sigma = 1.5;
  std::uint64_t seed = 7;
  std::size_t training_patches = 0;
};

// Binary artifact: "FDSM", u32 version, u32 header length, JSON header, then
// little-endian float64 arrays mean[K], std[K], w[K] and b.
std::vector<std::uint8_t> serialize_model(const PipelineModel& model);
PipelineModel deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_model(const std::filesystem::path& path, const PipelineModel& model);
PipelineModel load_model(const std::filesystem::path& path);

enum class Decision { kNoDefect, kDefect };
enum class Provenance { kClassifier, kExpanded, kGatedOut };

std::string_view decision_name(Decision d);
std::string_view provenance_name(Provenance p);

struct MapEntry {
  Decision decision = Decision::kNoDefect;
  Provenance provenance = Provenance::kGatedOut;
  std::optional<double> score;

  friend bool operator==(const MapEntry&, const MapEntry&) = default;
};

// One entry per grid anchor, in grid order.
struct DefectMap {
  std::string image_id;
  img::PatchGrid grid;
  std::vector<MapEntry> entries;

  std::size_t defect_count() const;

  friend bool operator==(const DefectMap&, const DefectMap&) = default;
};

std::string defect_map_to_json(const DefectMap& map);
DefectMap defect_map_from_json(std::string_view text);

// Working copies the classifier sees: blurred in unwashed mode.
struct WorkingImage {
  img::RgbImage rgb;
  img::GrayImage gray;
};
WorkingImage prepare(const img::RgbImage& image, Mode mode, double sigma);

// Feature vector of one (possibly augmented) grid patch of a working image.
features::FeatureVector patch_features(const WorkingImage& work,
                                       const dataset::LabeledPatch& patch,
                                       int patch_size, features::FeatureKind kind,
                                       const features::EmbeddingTable* embeddings);

// Labeled set -> balance -> features -> standardize -> SVM. Throws
// DatasetError when a class is missing, ConfigError for external features
// without a table.
PipelineModel train_pipeline(const std::vector<dataset::Sample>& samples,
                             const PipelineConfig& cfg,
                             const features::EmbeddingTable* embeddings = nullptr);

// Flood from classifier-decided defects over 8-neighbors whose intensity
// range differs by at most iv_threshold.
DefectMap postprocess_expand(const DefectMap& map, const img::GrayImage& gray,
                             double iv_threshold);

// |range(a) - range(b)| on the given rects.
double intensity_variation(const img::GrayImage& gray, const img::Rect& a,
                           const img::Rect& b);

struct InferStats {
  std::size_t keypoints = 0;
  std::size_t classified = 0;
};

// Gated detection: preprocess, detect keypoints, classify gated patches,
// expand. With gate = false every patch is classified.
DefectMap infer(const PipelineModel& model, const img::RgbImage& image,
                std::string_view image_id, const PipelineConfig& cfg,
                const features::EmbeddingTable* embeddings = nullptr,
                bool gate = true, InferStats* stats = nullptr);

struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  bool sensitivity_undefined = false;  // TP + FN == 0
  bool specificity_undefined = false;  // TN + FP == 0

  std::size_t total() const { return tp + fp + tn + fn; }
};

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                                  std::size_t fn);
MetricsReport evaluate(const DefectMap& map,
                       const std::vector<dataset::PatchLabel>& truth);
// Truth from a mask; throws ParameterError if the mask does not match the grid.
MetricsReport evaluate(const DefectMap& map, const img::BinaryMask& mask);

struct FoldResult {
  int fold = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  MetricsReport metrics;
};

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  double mean_sensitivity = 0.0;
  double mean_specificity = 0.0;
  double mean_accuracy = 0.0;
};

// Grouped k-fold: patches of one image always share a fold. Each held-out
// fold is classified patch by patch without gating or expansion. Throws
// ParameterError when there are fewer images than folds and DataError if a
// test image ever leaks into training.
CrossValidationResult cross_validate(const std::vector<dataset::Sample>& samples,
                                     int k, const PipelineConfig& cfg,
                                     const features::EmbeddingTable* embeddings = nullptr);

std::string metrics_csv(const CrossValidationResult& cv);

struct TimingReport {
  double full_seconds = 0.0;
  double gated_seconds = 0.0;
  std::size_t full_patches = 0;
  std::size_t gated_patches = 0;
  std::size_t keypoints = 0;
  double speedup = 0.0;  // full / gated
};

// Times the classify-everything path against the gated path on one decoded
// image. Each path runs `repeats` times and the fastest run is reported.
TimingReport benchmark(const PipelineModel& model, const img::RgbImage& image,
                       const PipelineConfig& cfg, int repeats = 3,
                       const features::EmbeddingTable* embeddings = nullptr);

std::string timing_to_json(const TimingReport& t);

// Input image with defect patches outlined: red for classifier decisions,
// yellow for expanded ones.
img::RgbImage render_overlay(const img::RgbImage& image, const DefectMap& map);

}  // namespace fuselage::pipeline
