#include "fuselage/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "fuselage/errors.h"

namespace fuselage::pipeline {
namespace {

using dataset::LabeledPatch;
using dataset::PatchLabel;
using features::FeatureKind;

// Features of every grid patch of one image, plus the augmented variants of
// its defect patches (keyed by grid index and augmentation name).
struct ImageFeatures {
  std::string id;
  img::PatchGrid grid;
  std::vector<PatchLabel> labels;
  std::vector<std::vector<double>> patch;
  std::map<std::pair<std::size_t, std::string>, std::vector<double>> augmented;
};

ImageFeatures compute_image_features(const dataset::Sample& sample,
                                     const PipelineConfig& cfg,
                                     const features::EmbeddingTable* embeddings,
                                     bool with_augmentations) {
  ImageFeatures out;
  out.id = sample.id;
  out.grid = img::partition(sample.image.width(), sample.image.height(),
                            cfg.patch_size);
  out.labels = dataset::label_grid(sample.mask, out.grid);
  const WorkingImage work = prepare(sample.image, cfg.mode, cfg.blur_sigma);
  out.patch.reserve(out.grid.size());
  for (std::size_t i = 0; i < out.grid.size(); ++i) {
    LabeledPatch p{sample.id, out.grid.anchor(i), out.labels[i], std::nullopt};
    out.patch.push_back(
        patch_features(work, p, cfg.patch_size, cfg.feature, embeddings).values);
    if (!with_augmentations || out.labels[i] != PatchLabel::kDefect) continue;
    for (const std::string& name : dataset::augmentation_names()) {
      if (name == "orig") continue;
      p.transform = name;
      out.augmented[{i, name}] =
          patch_features(work, p, cfg.patch_size, cfg.feature, embeddings).values;
    }
  }
  return out;
}

struct TrainingSet {
  svm::Matrix X;
  std::vector<int> y;
};

// Balanced rows drawn from the cached features of `images`.
TrainingSet balanced_rows(const std::vector<const ImageFeatures*>& images,
                          std::uint64_t seed) {
  std::vector<LabeledPatch> patches;
  std::map<std::string, const ImageFeatures*> by_id;
  for (const ImageFeatures* f : images) {
    by_id[f->id] = f;
    for (std::size_t i = 0; i < f->grid.size(); ++i) {
      patches.push_back({f->id, f->grid.anchor(i), f->labels[i], std::nullopt});
    }
  }
  const std::vector<LabeledPatch> balanced = dataset::balance(patches, seed);
  TrainingSet set;
  set.X.reserve(balanced.size());
  for (const LabeledPatch& p : balanced) {
    const ImageFeatures& f = *by_id.at(p.parent_id);
    const auto rows = f.grid.row_starts;
    const std::size_t ri =
        std::find(rows.begin(), rows.end(), p.anchor.row) - rows.begin();
    const auto& cols = f.grid.col_starts;
    const std::size_t ci =
        std::find(cols.begin(), cols.end(), p.anchor.col) - cols.begin();
    const std::size_t index = ri * cols.size() + ci;
    set.X.push_back(p.transform ? f.augmented.at({index, *p.transform})
                                : f.patch[index]);
    set.y.push_back(p.label == PatchLabel::kDefect ? 1 : -1);
  }
  return set;
}

PipelineModel fit_model(const std::vector<const ImageFeatures*>& images,
                        const PipelineConfig& cfg, std::uint64_t balance_seed,
                        std::uint64_t svm_seed) {
  const TrainingSet set = balanced_rows(images, balance_seed);
  svm::TrainConfig tc = cfg.svm;
  tc.seed = svm_seed;
  PipelineModel model;
  model.svm = svm::train_svm(set.X, set.y, tc);
  model.feature = cfg.feature;
  model.patch_size = cfg.patch_size;
  model.mode = cfg.mode;
  model.blur_sigma = cfg.blur_sigma;
  model.seed = cfg.seed;
  model.training_patches = set.X.size();
  return model;
}

void check_embeddings(FeatureKind kind, const features::EmbeddingTable* embeddings) {
  if (kind == FeatureKind::kExternal && embeddings == nullptr) {
    throw ConfigError("external features need an embedding table (--embeddings)");
  }
}

double ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void outline(img::RgbImage& out, const img::Rect& r, std::uint8_t cr,
             std::uint8_t cg, std::uint8_t cb, int thickness) {
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      const bool edge = x < r.x + thickness || x >= r.x + r.w - thickness ||
                        y < r.y + thickness || y >= r.y + r.h - thickness;
      if (edge) out.set(x, y, cr, cg, cb);
    }
  }
}

}  // namespace

std::string_view mode_name(Mode mode) {
  return mode == Mode::kWashed ? "washed" : "unwashed";
}

std::optional<Mode> parse_mode(std::string_view name) {
  if (name == "washed") return Mode::kWashed;
  if (name == "unwashed") return Mode::kUnwashed;
  return std::nullopt;
}

void PipelineConfig::validate() const {
  if (patch_size < 20 || patch_size > 100) {
    throw ParameterError("patch size must be in [20, 100], got " +
                         std::to_string(patch_size));
  }
  if (feature == FeatureKind::kSurf && patch_size < features::kSurfMinSide) {
    throw ParameterError("SURF features need a patch size of at least 40");
  }
  if (!(iv_threshold >= 0.0)) throw ParameterError("IV threshold must be >= 0");
  if (!(blur_sigma > 0.0)) throw ParameterError("blur sigma must be > 0");
  detector.validate();
  svm.validate();
}

std::string_view decision_name(Decision d) {
  return d == Decision::kDefect ? "defect" : "no_defect";
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClassifier: return "classifier";
    case Provenance::kExpanded: return "expanded";
    case Provenance::kGatedOut: return "gated_out";
  }
  return "unknown";
}

std::size_t DefectMap::defect_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(),
                    [](const MapEntry& e) { return e.decision == Decision::kDefect; }));
}

WorkingImage prepare(const img::RgbImage& image, Mode mode, double sigma) {
  if (mode == Mode::kWashed) return {image, img::to_grayscale(image)};
  // The blurred copy is kept at 8-bit precision like the input.
  img::GrayImage gray = img::gaussian_blur(img::to_grayscale(image), sigma);
  for (double& v : gray.data()) v = std::round(v);
  return {img::gaussian_blur(image, sigma), std::move(gray)};
}

features::FeatureVector patch_features(const WorkingImage& work,
                                       const LabeledPatch& patch, int patch_size,
                                       FeatureKind kind,
                                       const features::EmbeddingTable* embeddings) {
  if (kind == FeatureKind::kExternal) {
    check_embeddings(kind, embeddings);
    return embeddings->lookup(patch.key());
  }
  const img::Rect r{patch.anchor.col, patch.anchor.row, patch_size, patch_size};
  switch (kind) {
    case FeatureKind::kRgbHistogram:
    case FeatureKind::kHsvHistogram: {
      img::RgbImage rgb = img::crop(work.rgb, r);
      if (patch.transform) rgb = dataset::apply_augmentation(rgb, *patch.transform);
      return features::extract(rgb, kind);
    }
    default: {
      img::GrayImage gray = img::crop(work.gray, r);
      if (patch.transform) gray = dataset::apply_augmentation(gray, *patch.transform);
      return kind == FeatureKind::kLbp ? features::lbp_histogram(gray)
                                       : features::surf_patch_descriptor(gray);
    }
  }
}

PipelineModel train_pipeline(const std::vector<dataset::Sample>& samples,
                             const PipelineConfig& cfg,
                             const features::EmbeddingTable* embeddings) {
  cfg.validate();
  check_embeddings(cfg.feature, embeddings);
  if (samples.empty()) throw DatasetError("no training images");
  std::vector<ImageFeatures> cache;
  cache.reserve(samples.size());
  for (const dataset::Sample& s : samples) {
    cache.push_back(compute_image_features(s, cfg, embeddings, true));
  }
  std::vector<const ImageFeatures*> all;
  for (const ImageFeatures& f : cache) all.push_back(&f);
  return fit_model(all, cfg, cfg.seed, cfg.svm.seed);
}

double intensity_variation(const img::GrayImage& gray, const img::Rect& a,
                           const img::Rect& b) {
  const auto [amin, amax] = img::intensity_range(gray, a);
  const auto [bmin, bmax] = img::intensity_range(gray, b);
  return std::abs((amax - amin) - (bmax - bmin));
}

DefectMap postprocess_expand(const DefectMap& map, const img::GrayImage& gray,
                             double iv_threshold) {
  if (map.entries.size() != map.grid.size() ||
      gray.width() != map.grid.image_width ||
      gray.height() != map.grid.image_height) {
    throw ParameterError("defect map and image do not share a grid");
  }
  DefectMap out = map;
  const int rows = map.grid.rows();
  const int cols = map.grid.cols();
  std::vector<std::optional<double>> range(map.grid.size());
  auto range_of = [&](std::size_t i) {
    if (!range[i]) {
      const auto [lo, hi] = img::intensity_range(gray, map.grid.rect(i));
      range[i] = hi - lo;
    }
    return *range[i];
  };

  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    const MapEntry& e = out.entries[i];
    if (e.provenance == Provenance::kClassifier && e.decision == Decision::kDefect) {
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int ri = static_cast<int>(i) / cols;
    const int ci = static_cast<int>(i) % cols;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rj = ri + dr;
        const int cj = ci + dc;
        if ((dr == 0 && dc == 0) || rj < 0 || cj < 0 || rj >= rows || cj >= cols) {
          continue;
        }
        const std::size_t j = std::size_t(rj) * cols + cj;
        MapEntry& n = out.entries[j];
        if (n.decision == Decision::kDefect) continue;
        if (std::abs(range_of(i) - range_of(j)) <= iv_threshold) {
          n.decision = Decision::kDefect;
          n.provenance = Provenance::kExpanded;
          queue.push_back(j);
        }
      }
    }
  }
  return out;
}

DefectMap infer(const PipelineModel& model, const img::RgbImage& image,
                std::string_view image_id, const PipelineConfig& cfg,
                const features::EmbeddingTable* embeddings, bool gate,
                InferStats* stats) {
  cfg.validate();
  check_embeddings(model.feature, embeddings);
  if (image.width() < model.patch_size || image.height() < model.patch_size) {
    throw ParameterError("image is smaller than one patch");
  }
  DefectMap map;
  map.image_id = std::string(image_id);
  map.grid = img::partition(image.width(), image.height(), model.patch_size);
  map.entries.assign(map.grid.size(), MapEntry{});

  const WorkingImage work = prepare(image, cfg.mode, cfg.blur_sigma);
  std::vector<bool> selected(map.grid.size(), !gate);
  std::size_t keypoint_count = 0;
  if (gate) {
    const std::vector<surf::Keypoint> kps = surf::detect(work.gray, cfg.detector);
    keypoint_count = kps.size();
    for (std::size_t i : surf::gate_patches(map.grid, kps)) selected[i] = true;
  }

  std::size_t classified = 0;
  for (std::size_t i = 0; i < map.grid.size(); ++i) {
    if (!selected[i]) continue;
    const LabeledPatch p{map.image_id, map.grid.anchor(i), PatchLabel::kNoDefect,
                         std::nullopt};
    const features::FeatureVector f =
        patch_features(work, p, model.patch_size, model.feature, embeddings);
    const svm::Prediction pred = svm::predict(model.svm, f.values);
    map.entries[i] = {pred.label > 0 ? Decision::kDefect : Decision::kNoDefect,
                      Provenance::kClassifier, pred.score};
    ++classified;
  }
  if (stats) *stats = {keypoint_count, classified};
  if (cfg.expansion_enabled()) {
    map = postprocess_expand(map, work.gray, cfg.iv_threshold);
  }
  return map;
}

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                                  std::size_t fn) {
  MetricsReport m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.sensitivity = ratio(tp, tp + fn, m.sensitivity_undefined);
  m.specificity = ratio(tn, tn + fp, m.specificity_undefined);
  bool unused = false;
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn, unused);
  return m;
}

MetricsReport evaluate(const DefectMap& map,
                       const std::vector<dataset::PatchLabel>& truth) {
  if (truth.size() != map.entries.size() || map.entries.size() != map.grid.size()) {
    throw ParameterError("defect map and ground truth cover different grids");
  }
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool predicted = map.entries[i].decision == Decision::kDefect;
    const bool actual = truth[i] == PatchLabel::kDefect;
    if (predicted && actual) ++tp;
    if (predicted && !actual) ++fp;
    if (!predicted && actual) ++fn;
    if (!predicted && !actual) ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

MetricsReport evaluate(const DefectMap& map, const img::BinaryMask& mask) {
  if (mask.width() != map.grid.image_width || mask.height() != map.grid.image_height) {
    throw ParameterError("mask size does not match the defect map's image");
  }
  return evaluate(map, dataset::label_grid(mask, map.grid));
}

CrossValidationResult cross_validate(const std::vector<dataset::Sample>& samples,
                                     int k, const PipelineConfig& cfg,
                                     const features::EmbeddingTable* embeddings) {
  cfg.validate();
  check_embeddings(cfg.feature, embeddings);
  std::vector<std::string> ids;
  for (const dataset::Sample& s : samples) ids.push_back(s.id);
  const dataset::FoldPlan plan = dataset::group_kfold(ids, k, cfg.seed);

  std::vector<ImageFeatures> cache;
  cache.reserve(samples.size());
  for (const dataset::Sample& s : samples) {
    cache.push_back(compute_image_features(s, cfg, embeddings, true));
  }

  CrossValidationResult result;
  for (int fold = 0; fold < k; ++fold) {
    FoldResult fr;
    fr.fold = fold;
    std::vector<const ImageFeatures*> train;
    std::vector<const ImageFeatures*> test;
    for (const ImageFeatures& f : cache) {
      if (plan.assignment.at(f.id) == fold) {
        test.push_back(&f);
        fr.test_ids.push_back(f.id);
      } else {
        train.push_back(&f);
        fr.train_ids.push_back(f.id);
      }
    }
    const std::set<std::string> train_set(fr.train_ids.begin(), fr.train_ids.end());
    for (const std::string& id : fr.test_ids) {
      if (train_set.contains(id)) {
        throw DataError("cross-validation leak: image " + id +
                        " is in both training and test folds");
      }
    }

    const std::uint64_t fold_seed = cfg.seed ^ static_cast<std::uint64_t>(fold);
    const PipelineModel model =
        fit_model(train, cfg, fold_seed, cfg.svm.seed ^ static_cast<std::uint64_t>(fold));
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const ImageFeatures* f : test) {
      for (std::size_t i = 0; i < f->grid.size(); ++i) {
        const bool predicted = svm::predict(model.svm, f->patch[i]).label > 0;
        const bool actual = f->labels[i] == PatchLabel::kDefect;
        tp += predicted && actual;
        fp += predicted && !actual;
        fn += !predicted && actual;
        tn += !predicted && !actual;
      }
    }
    fr.metrics = metrics_from_counts(tp, fp, tn, fn);
    result.mean_sensitivity += fr.metrics.sensitivity / k;
    result.mean_specificity += fr.metrics.specificity / k;
    result.mean_accuracy += fr.metrics.accuracy / k;
    result.folds.push_back(std::move(fr));
  }
  return result;
}

std::string metrics_csv(const CrossValidationResult& cv) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "fold,tp,fp,tn,fn,sensitivity,specificity,accuracy\n";
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const FoldResult& f : cv.folds) {
    const MetricsReport& m = f.metrics;
    out << f.fold << ',' << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn << ','
        << m.sensitivity << ',' << m.specificity << ',' << m.accuracy << '\n';
    tp += m.tp;
    fp += m.fp;
    tn += m.tn;
    fn += m.fn;
  }
  // Counts in the mean row are totals; ratios are unweighted fold means.
  out << "mean," << tp << ',' << fp << ',' << tn << ',' << fn << ','
      << cv.mean_sensitivity << ',' << cv.mean_specificity << ','
      << cv.mean_accuracy << '\n';
  return out.str();
}

TimingReport benchmark(const PipelineModel& model, const img::RgbImage& image,
                       const PipelineConfig& cfg, int repeats,
                       const features::EmbeddingTable* embeddings) {
  using Clock = std::chrono::steady_clock;
  TimingReport t;
  t.full_seconds = t.gated_seconds = 1e300;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    InferStats stats;
    auto start = Clock::now();
    infer(model, image, "bench", cfg, embeddings, false, &stats);
    t.full_seconds = std::min(
        t.full_seconds, std::chrono::duration<double>(Clock::now() - start).count());
    t.full_patches = stats.classified;

    start = Clock::now();
    infer(model, image, "bench", cfg, embeddings, true, &stats);
    t.gated_seconds = std::min(
        t.gated_seconds, std::chrono::duration<double>(Clock::now() - start).count());
    t.gated_patches = stats.classified;
    t.keypoints = stats.keypoints;
  }
  t.speedup = t.full_seconds / t.gated_seconds;
  return t;
}

img::RgbImage render_overlay(const img::RgbImage& image, const DefectMap& map) {
  img::RgbImage out = image;
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    const MapEntry& e = map.entries[i];
    if (e.decision != Decision::kDefect) continue;
    if (e.provenance == Provenance::kExpanded) {
      outline(out, map.grid.rect(i), 255, 210, 0, 2);
    } else {
      outline(out, map.grid.rect(i), 230, 20, 20, 2);
    }
  }
  return out;
}

}  // namespace fuselage::pipeline
