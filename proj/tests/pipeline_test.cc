#include <gtest/gtest.h>

#include <algorithm>
#include <queue>
#include <set>

#include "fuselage/errors.h"
#include "fuselage/pipeline.h"
#include "fuselage/synth.h"
#include "oracles.h"

namespace fuselage::pipeline {
namespace {

using dataset::PatchLabel;
using dataset::Sample;
using img::GrayImage;
using img::PatchGrid;

// Small scenes keep the end-to-end tests fast.
dataset::SynthConfig small_scene() {
  dataset::SynthConfig cfg;
  cfg.width = 390;
  cfg.height = 390;
  cfg.defect_count = 1;
  cfg.dent_radius = {40.0, 50.0};
  cfg.scratch_length = {120.0, 160.0};
  return cfg;
}

const std::vector<Sample>& small_set() {
  static const std::vector<Sample> samples = dataset::synth_dataset(small_scene(), 6);
  return samples;
}

const PipelineModel& small_model() {
  static const PipelineModel model = train_pipeline(small_set(), PipelineConfig{});
  return model;
}

DefectMap empty_map(const PatchGrid& grid) {
  DefectMap m;
  m.image_id = "t";
  m.grid = grid;
  m.entries.assign(grid.size(), MapEntry{});
  return m;
}

void seed_defect(DefectMap& m, std::size_t i) {
  m.entries[i] = {Decision::kDefect, Provenance::kClassifier, 0.5};
}

// Image whose patch i has intensity range ranges[i] (values base..base+range).
GrayImage ranged_image(const PatchGrid& grid, const std::vector<double>& ranges) {
  GrayImage g(grid.image_width, grid.image_height, 50.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const img::Rect r = grid.rect(i);
    g.at(r.x + 1, r.y + 1) = 50.0 + ranges[i];
  }
  return g;
}

// Breadth-first replay of the expansion rule from the classifier seeds.
std::set<std::size_t> replay(const DefectMap& map, const GrayImage& g, double t) {
  std::set<std::size_t> reached;
  std::queue<std::size_t> q;
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    if (map.entries[i].provenance == Provenance::kClassifier &&
        map.entries[i].decision == Decision::kDefect) {
      reached.insert(i);
      q.push(i);
    }
  }
  const int cols = map.grid.cols(), rows = map.grid.rows();
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop();
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int nr = r + dr, nc = c + dc;
        if ((dr == 0 && dc == 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
        const std::size_t j = std::size_t(nr) * cols + nc;
        if (reached.contains(j)) continue;
        const double iv = std::abs(oracle::patch_range(g, map.grid.rect(i)) -
                                   oracle::patch_range(g, map.grid.rect(j)));
        if (iv <= t) {
          reached.insert(j);
          q.push(j);
        }
      }
    }
  }
  return reached;
}

std::set<std::size_t> defects(const DefectMap& m) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].decision == Decision::kDefect) out.insert(i);
  }
  return out;
}

TEST(Config, Validation) {
  PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.patch_size = 19;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.patch_size = 101;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  cfg.feature = features::FeatureKind::kSurf;
  cfg.patch_size = 39;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  cfg.iv_threshold = -1.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  cfg.blur_sigma = 0.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  EXPECT_FALSE(cfg.expansion_enabled());
  cfg.mode = Mode::kUnwashed;
  EXPECT_TRUE(cfg.expansion_enabled());
  cfg.expand = false;
  EXPECT_FALSE(cfg.expansion_enabled());
  EXPECT_EQ(parse_mode("unwashed"), Mode::kUnwashed);
  EXPECT_EQ(parse_mode("dirty"), std::nullopt);
}

TEST(IntensityVariation, RangeDifference) {
  const PatchGrid grid = img::partition(130, 65, 65);
  const GrayImage g = ranged_image(grid, {150.0, 140.0});
  EXPECT_EQ(intensity_variation(g, grid.rect(0), grid.rect(1)), 10.0);
  EXPECT_EQ(intensity_variation(g, grid.rect(1), grid.rect(0)), 10.0);
}

TEST(Expand, ThresholdAtExactVariation) {
  const PatchGrid grid = img::partition(130, 65, 65);
  const GrayImage g = ranged_image(grid, {150.0, 140.0});
  DefectMap m = empty_map(grid);
  seed_defect(m, 0);
  const DefectMap below = postprocess_expand(m, g, 9.999);
  EXPECT_EQ(below.entries[1].decision, Decision::kNoDefect);
  const DefectMap at = postprocess_expand(m, g, 10.0);
  EXPECT_EQ(at.entries[1].decision, Decision::kDefect);
  EXPECT_EQ(at.entries[1].provenance, Provenance::kExpanded);
  EXPECT_FALSE(at.entries[1].score.has_value());
  EXPECT_EQ(at.entries[0], m.entries[0]);
}

TEST(Expand, UniformImageFloods) {
  const PatchGrid grid = img::partition(400, 300, 65);
  DefectMap m = empty_map(grid);
  seed_defect(m, 7);
  const DefectMap out = postprocess_expand(m, GrayImage(400, 300, 90.0), 0.0);
  EXPECT_EQ(out.defect_count(), grid.size());
}

TEST(Expand, NoSeedsNoChange) {
  const PatchGrid grid = img::partition(200, 200, 65);
  const DefectMap m = empty_map(grid);
  EXPECT_EQ(postprocess_expand(m, GrayImage(200, 200, 1.0), 255.0), m);
}

TEST(Expand, DiagonalNeighborsCount) {
  const PatchGrid grid = img::partition(195, 195, 65);
  // Only the center and one corner share a range; the rest differ by 100.
  std::vector<double> ranges(9, 120.0);
  ranges[4] = ranges[8] = 20.0;
  DefectMap m = empty_map(grid);
  seed_defect(m, 4);
  EXPECT_EQ(defects(postprocess_expand(m, ranged_image(grid, ranges), 5.0)),
            (std::set<std::size_t>{4, 8}));
}

TEST(Expand, GridMismatchThrows) {
  const DefectMap m = empty_map(img::partition(200, 200, 65));
  EXPECT_THROW(postprocess_expand(m, GrayImage(260, 200, 1.0), 5.0), ParameterError);
}

TEST(Expand, ReplayAndMonotoneOnRandomMaps) {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const PatchGrid grid = img::partition(rng.uniform_int(130, 500), rng.uniform_int(130, 500), 65);
    const GrayImage g = oracle::random_gray(grid.image_width, grid.image_height, rng, 256);
    GrayImage coarse = g;
    // Vary patch ranges so floods stop somewhere.
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const img::Rect r = grid.rect(i);
      const double cap = rng.uniform(0.0, 255.0);
      for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) coarse.at(x, y) = std::min(g.at(x, y), cap);
      }
    }
    DefectMap m = empty_map(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (rng.uniform() < 0.15) seed_defect(m, i);
    }
    std::set<std::size_t> previous;
    for (double tiv : {0.0, 2.0, 5.0, 10.0, 25.0, 60.0, 255.0}) {
      const DefectMap out = postprocess_expand(m, coarse, tiv);
      const std::set<std::size_t> got = defects(out);
      EXPECT_EQ(got, replay(m, coarse, tiv));
      EXPECT_TRUE(std::includes(got.begin(), got.end(), previous.begin(), previous.end()));
      for (const MapEntry& e : out.entries) {
        if (e.provenance == Provenance::kExpanded) EXPECT_EQ(e.decision, Decision::kDefect);
      }
      previous = got;
    }
  }
}

TEST(Metrics, FormulaArithmetic) {
  const MetricsReport m = metrics_from_counts(96, 4, 96, 4);
  EXPECT_DOUBLE_EQ(m.sensitivity, 0.96);
  EXPECT_DOUBLE_EQ(m.specificity, 0.96);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.96);
  EXPECT_EQ(m.total(), 200u);
  const MetricsReport none = metrics_from_counts(0, 3, 7, 0);
  EXPECT_TRUE(none.sensitivity_undefined);
  EXPECT_EQ(none.sensitivity, 0.0);
  EXPECT_FALSE(none.specificity_undefined);
  const MetricsReport missed = metrics_from_counts(0, 0, 10, 5);
  EXPECT_EQ(missed.sensitivity, 0.0);
  EXPECT_FALSE(missed.sensitivity_undefined);
}

TEST(Metrics, IdentitiesOnRandomCounts) {
  Rng rng(32);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t tp = rng.index(50), fp = rng.index(50), tn = rng.index(50),
                      fn = rng.index(50);
    const MetricsReport m = metrics_from_counts(tp, fp, tn, fn);
    EXPECT_EQ(m.total(), tp + fp + tn + fn);
    if (tp + fn > 0) EXPECT_EQ(m.sensitivity, double(tp) / double(tp + fn));
    if (tn + fp > 0) EXPECT_EQ(m.specificity, double(tn) / double(tn + fp));
    if (m.total() > 0) EXPECT_EQ(m.accuracy, double(tp + tn) / double(m.total()));
  }
}

TEST(Evaluate, AgainstLabelsAndMask) {
  const PatchGrid grid = img::partition(130, 130, 65);
  DefectMap m = empty_map(grid);
  seed_defect(m, 0);
  seed_defect(m, 1);
  const std::vector<PatchLabel> truth = {PatchLabel::kDefect, PatchLabel::kNoDefect,
                                         PatchLabel::kDefect, PatchLabel::kNoDefect};
  const MetricsReport r = evaluate(m, truth);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 1u);

  img::BinaryMask mask(130, 130);
  for (int y = 0; y < 65; ++y) {
    for (int x = 0; x < 65; ++x) mask.set(x, y, true);
  }
  const MetricsReport perfect = evaluate(empty_map(grid), img::BinaryMask(130, 130));
  EXPECT_EQ(perfect.accuracy, 1.0);
  DefectMap exact = empty_map(grid);
  seed_defect(exact, 0);
  const MetricsReport e = evaluate(exact, mask);
  EXPECT_EQ(e.sensitivity, 1.0);
  EXPECT_EQ(e.specificity, 1.0);
  EXPECT_THROW(evaluate(m, std::vector<PatchLabel>(3)), ParameterError);
  EXPECT_THROW(evaluate(m, img::BinaryMask(131, 130)), ParameterError);
}

TEST(DefectMapJson, RoundTrip) {
  DefectMap m = empty_map(img::partition(300, 200, 65));
  m.image_id = "img004";
  seed_defect(m, 2);
  m.entries[3] = {Decision::kDefect, Provenance::kExpanded, std::nullopt};
  m.entries[5] = {Decision::kNoDefect, Provenance::kClassifier, -1.25};
  EXPECT_EQ(defect_map_from_json(defect_map_to_json(m)), m);
}

TEST(DefectMapJson, MalformedInputIsFormatError) {
  EXPECT_THROW(defect_map_from_json("{"), FormatError);
  EXPECT_THROW(defect_map_from_json("{\"image_id\": 3}"), FormatError);
  DefectMap m = empty_map(img::partition(130, 130, 65));
  std::string text = defect_map_to_json(m);
  text.replace(text.find("gated_out"), 9, "sideways!");
  EXPECT_THROW(defect_map_from_json(text), FormatError);
}

TEST(Train, MissingDefectClassIsDatasetError) {
  std::vector<Sample> clean = small_set();
  for (Sample& s : clean) s.mask = img::BinaryMask(s.image.width(), s.image.height());
  EXPECT_THROW(train_pipeline(clean, PipelineConfig{}), DatasetError);
  EXPECT_THROW(train_pipeline({}, PipelineConfig{}), DatasetError);
}

TEST(Train, ExternalWithoutEmbeddingsIsConfigError) {
  PipelineConfig cfg;
  cfg.feature = features::FeatureKind::kExternal;
  EXPECT_THROW(train_pipeline(small_set(), cfg), ConfigError);
  EXPECT_THROW(cross_validate(small_set(), 2, cfg), ConfigError);
}

TEST(Train, DeterministicArtifactBytes) {
  const auto a = serialize_model(train_pipeline(small_set(), PipelineConfig{}));
  EXPECT_EQ(a, serialize_model(small_model()));
  PipelineConfig other;
  other.seed = 8;
  EXPECT_NE(a, serialize_model(train_pipeline(small_set(), other)));
}

TEST(Train, SeparatesItsTrainingDefects) {
  const PipelineModel& model = small_model();
  std::size_t correct = 0, total = 0;
  for (const Sample& s : small_set()) {
    const WorkingImage work = prepare(s.image, Mode::kWashed, 1.5);
    for (const dataset::LabeledPatch& p : dataset::build_labeled_set({s}, 65)) {
      const auto f = patch_features(work, p, 65, model.feature, nullptr);
      const bool defect = svm::predict(model.svm, f.values).label > 0;
      correct += defect == (p.label == PatchLabel::kDefect);
      ++total;
    }
  }
  EXPECT_GE(double(correct) / total, 0.95);
}

TEST(ModelFile, RoundTripIsByteIdentical) {
  const auto bytes = serialize_model(small_model());
  const PipelineModel back = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.svm.w, small_model().svm.w);
  EXPECT_EQ(back.svm.b, small_model().svm.b);
  EXPECT_EQ(back.feature, small_model().feature);
  EXPECT_EQ(back.patch_size, 65);

  const auto path = std::filesystem::temp_directory_path() / "fuselage_model.fdsm";
  save_model(path, small_model());
  EXPECT_EQ(serialize_model(load_model(path)), bytes);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path), IoError);
}

TEST(ModelFile, CorruptionIsFormatError) {
  const auto bytes = serialize_model(small_model());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_model(bad_version), FormatError);
  EXPECT_THROW(deserialize_model({bytes.begin(), bytes.end() - 3}), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);
  EXPECT_THROW(deserialize_model({}), FormatError);
}

TEST(Infer, DefectFreeImageHasNoDefects) {
  dataset::SynthConfig cfg = small_scene();
  cfg.defect_count = 0;
  cfg.seed = 404;
  const Sample clean = dataset::synth_generate(cfg, "clean");
  for (Mode mode : {Mode::kWashed, Mode::kUnwashed}) {
    PipelineConfig pc;
    pc.mode = mode;
    const DefectMap m = infer(small_model(), clean.image, clean.id, pc);
    EXPECT_EQ(m.defect_count(), 0u) << mode_name(mode);
    EXPECT_EQ(m.entries.size(), m.grid.size());
  }
}

TEST(Infer, GatingSoundnessAndDeterminism) {
  const PipelineConfig pc;
  for (const Sample& s : small_set()) {
    InferStats stats;
    const DefectMap m = infer(small_model(), s.image, s.id, pc, nullptr, true, &stats);
    EXPECT_EQ(m, infer(small_model(), s.image, s.id, pc));
    const auto kps = surf::detect(prepare(s.image, pc.mode, pc.blur_sigma).gray, pc.detector);
    EXPECT_EQ(stats.keypoints, kps.size());
    std::size_t classified = 0;
    for (std::size_t i = 0; i < m.grid.size(); ++i) {
      const img::Rect r = m.grid.rect(i);
      const bool has_kp = std::any_of(kps.begin(), kps.end(), [&](const surf::Keypoint& k) {
        return k.x >= r.x && k.x < r.x + r.w && k.y >= r.y && k.y < r.y + r.h;
      });
      const MapEntry& e = m.entries[i];
      if (e.provenance == Provenance::kClassifier) {
        EXPECT_TRUE(has_kp);
        EXPECT_TRUE(e.score.has_value());
        EXPECT_EQ(e.decision == Decision::kDefect, *e.score > 0.0);
        ++classified;
      } else {
        EXPECT_FALSE(has_kp);
        EXPECT_EQ(e.provenance, Provenance::kGatedOut);
        EXPECT_EQ(e.decision, Decision::kNoDefect);
        EXPECT_FALSE(e.score.has_value());
      }
    }
    EXPECT_EQ(stats.classified, classified);
  }
}

TEST(Infer, UngatedClassifiesEveryPatch) {
  const Sample& s = small_set()[0];
  InferStats stats;
  const DefectMap m = infer(small_model(), s.image, s.id, {}, nullptr, false, &stats);
  EXPECT_EQ(stats.classified, m.grid.size());
  for (const MapEntry& e : m.entries) EXPECT_EQ(e.provenance, Provenance::kClassifier);
}

TEST(Infer, UnwashedKeepsRecallOnCleanImages) {
  PipelineConfig unwashed;
  unwashed.mode = Mode::kUnwashed;
  const PipelineModel unwashed_model = train_pipeline(small_set(), unwashed);
  dataset::SynthConfig cfg = small_scene();
  cfg.seed = 77;
  std::size_t washed_tp = 0, unwashed_tp = 0, positives = 0;
  for (const Sample& s : dataset::synth_dataset(cfg, 4)) {
    const MetricsReport w = evaluate(infer(small_model(), s.image, s.id, {}), s.mask);
    const MetricsReport u = evaluate(infer(unwashed_model, s.image, s.id, unwashed), s.mask);
    washed_tp += w.tp;
    unwashed_tp += u.tp;
    positives += w.tp + w.fn;
  }
  ASSERT_GT(positives, 0u);
  EXPECT_GE(unwashed_tp, washed_tp);
}

TEST(Infer, Errors) {
  EXPECT_THROW(infer(small_model(), img::RgbImage(64, 200), "tiny", {}), ParameterError);
  PipelineModel external = small_model();
  external.feature = features::FeatureKind::kExternal;
  EXPECT_THROW(infer(external, small_set()[0].image, "x", {}), ConfigError);
}

TEST(CrossValidation, TwoImagesTwoFolds) {
  const std::vector<Sample> two(small_set().begin(), small_set().begin() + 2);
  const CrossValidationResult cv = cross_validate(two, 2, PipelineConfig{});
  ASSERT_EQ(cv.folds.size(), 2u);
  std::set<std::string> tested;
  for (const FoldResult& f : cv.folds) {
    ASSERT_EQ(f.test_ids.size(), 1u);
    ASSERT_EQ(f.train_ids.size(), 1u);
    EXPECT_NE(f.test_ids[0], f.train_ids[0]);
    tested.insert(f.test_ids[0]);
    EXPECT_EQ(f.metrics.total(), 36u);
  }
  EXPECT_EQ(tested.size(), 2u);
}

TEST(CrossValidation, NoLeakageAndUnweightedMeans) {
  const CrossValidationResult cv = cross_validate(small_set(), 3, PipelineConfig{});
  double sens = 0.0;
  for (const FoldResult& f : cv.folds) {
    for (const std::string& id : f.test_ids) {
      EXPECT_EQ(std::find(f.train_ids.begin(), f.train_ids.end(), id), f.train_ids.end());
    }
    EXPECT_EQ(f.train_ids.size() + f.test_ids.size(), small_set().size());
    sens += f.metrics.sensitivity;
  }
  EXPECT_NEAR(cv.mean_sensitivity, sens / 3.0, 1e-15);
  const std::string csv = metrics_csv(cv);
  EXPECT_EQ(csv.rfind("fold,tp,fp,tn,fn,sensitivity,specificity,accuracy\n", 0), 0u);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(CrossValidation, FewerImagesThanFolds) {
  EXPECT_THROW(cross_validate(small_set(), 7, PipelineConfig{}), ParameterError);
}

TEST(Benchmark, CountsAndRatio) {
  const TimingReport t = benchmark(small_model(), small_set()[0].image, {}, 1);
  EXPECT_LE(t.gated_patches, t.full_patches);
  EXPECT_EQ(t.full_patches, 36u);
  EXPECT_DOUBLE_EQ(t.speedup, t.full_seconds / t.gated_seconds);
}

TEST(Overlay, OutlinesByProvenance) {
  const PatchGrid grid = img::partition(130, 130, 65);
  DefectMap m = empty_map(grid);
  seed_defect(m, 0);
  m.entries[3] = {Decision::kDefect, Provenance::kExpanded, std::nullopt};
  const img::RgbImage base(130, 130);
  const img::RgbImage out = render_overlay(base, m);
  EXPECT_EQ(out.at(0, 30, 0), 230);
  EXPECT_EQ(out.at(0, 30, 1), 20);
  EXPECT_EQ(out.at(129, 100, 0), 255);
  EXPECT_EQ(out.at(129, 100, 1), 210);
  EXPECT_EQ(out.at(97, 30, 0), 0);
  EXPECT_EQ(out.at(30, 30, 0), 0);
}

}  // namespace
}  // namespace fuselage::pipeline
