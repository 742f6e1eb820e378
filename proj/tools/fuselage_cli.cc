// Batch front end: synth, train, infer, cv, bench, eval, export-patches.
// Exit status: 0 success, 1 usage or configuration error, 2 data/format error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fuselage/dataset.h"
#include "fuselage/errors.h"
#include "fuselage/image_io.h"
#include "fuselage/pipeline.h"
#include "fuselage/synth.h"

namespace fs = std::filesystem;
using namespace fuselage;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct GlobalFlags {
  std::uint64_t seed = 7;
  int patch_size = 65;
  std::string feature = "lbp";
  std::string embeddings;
  std::string mode = "washed";
  double iv_threshold = pipeline::PipelineConfig{}.iv_threshold;
  double surf_threshold = surf::kDefaultThreshold;
  double sigma = 1.5;
  double svm_c = 1.0;
  bool expand = false;
  bool no_expand = false;

  CLI::Option* mode_opt = nullptr;
  CLI::Option* patch_opt = nullptr;
  CLI::Option* sigma_opt = nullptr;
  CLI::Option* feature_opt = nullptr;
};

void add_global_flags(CLI::App& app, GlobalFlags& g) {
  app.add_option("--seed", g.seed, "Seed for synthesis, balancing and folds")->capture_default_str();
  g.patch_opt = app.add_option("--patch-size", g.patch_size, "Patch side in pixels (20..100)")
                    ->capture_default_str();
  g.feature_opt = app.add_option("--feature", g.feature, "Feature descriptor")
                      ->check(CLI::IsMember({"rgb-hist", "hsv-hist", "lbp", "surf", "external"}))
                      ->capture_default_str();
  app.add_option("--embeddings", g.embeddings, "Embedding manifest for --feature external");
  g.mode_opt = app.add_option("--mode", g.mode, "Preprocessing condition")
                   ->check(CLI::IsMember({"washed", "unwashed"}))
                   ->capture_default_str();
  app.add_option("--iv-threshold", g.iv_threshold, "Expansion similarity threshold T_iv")
      ->capture_default_str();
  app.add_option("--surf-threshold", g.surf_threshold, "Hessian response threshold")
      ->capture_default_str();
  g.sigma_opt = app.add_option("--sigma", g.sigma, "Gaussian sigma for unwashed mode")
                    ->capture_default_str();
  app.add_option("--C", g.svm_c, "SVM regularization trade-off")->capture_default_str();
  auto* expand = app.add_flag("--expand", g.expand, "Force neighbor expansion on");
  auto* no_expand = app.add_flag("--no-expand", g.no_expand, "Force neighbor expansion off");
  expand->excludes(no_expand);
}

pipeline::PipelineConfig make_config(const GlobalFlags& g) {
  pipeline::PipelineConfig cfg;
  cfg.seed = g.seed;
  cfg.patch_size = g.patch_size;
  cfg.feature = *features::parse_kind(g.feature);
  cfg.mode = *pipeline::parse_mode(g.mode);
  cfg.iv_threshold = g.iv_threshold;
  cfg.detector.threshold = g.surf_threshold;
  cfg.blur_sigma = g.sigma;
  cfg.svm.C = g.svm_c;
  if (g.expand) cfg.expand = true;
  if (g.no_expand) cfg.expand = false;
  cfg.validate();
  cfg.svm.validate();
  return cfg;
}

// The table is loaded only for external features; other kinds ignore it.
std::optional<features::EmbeddingTable> load_table(const GlobalFlags& g,
                                                   features::FeatureKind kind) {
  if (kind != features::FeatureKind::kExternal) {
    if (!g.embeddings.empty()) std::cerr << "note: --embeddings ignored for --feature " << g.feature << "\n";
    return std::nullopt;
  }
  if (g.embeddings.empty()) {
    throw ConfigError("--feature external requires --embeddings <manifest>");
  }
  return features::load_embeddings(g.embeddings);
}

const features::EmbeddingTable* ptr(const std::optional<features::EmbeddingTable>& t) {
  return t ? &*t : nullptr;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void print_metrics(const pipeline::MetricsReport& m) {
  auto ratio = [](double v, bool undefined) {
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << v << (undefined ? " (undefined)" : "");
    return s.str();
  };
  std::cout << "TP " << m.tp << "  FP " << m.fp << "  TN " << m.tn << "  FN " << m.fn << "\n"
            << "sensitivity " << ratio(m.sensitivity, m.sensitivity_undefined) << "\n"
            << "specificity " << ratio(m.specificity, m.specificity_undefined) << "\n"
            << "accuracy    " << ratio(m.accuracy, false) << "\n";
}

// ---- Subcommands -----------------------------------------------------------

struct SynthArgs {
  int images = 30;
  std::string out;
  int width = 1024;
  int height = 1024;
  int defects = 3;
  double dirt = 0.0;
};

void run_synth(const GlobalFlags& g, const SynthArgs& a) {
  dataset::SynthConfig cfg;
  cfg.seed = g.seed;
  cfg.width = a.width;
  cfg.height = a.height;
  cfg.defect_count = a.defects;
  cfg.dirt_level = a.dirt;
  cfg.validate();
  if (a.images < 1) throw ParameterError("--images must be positive");
  const fs::path manifest = fs::path(a.out) / "manifest.tsv";
  dataset::write_samples(manifest, dataset::synth_dataset(cfg, a.images));
  std::cout << "wrote " << a.images << " images and " << manifest.string() << "\n";
}

struct TrainArgs {
  std::string manifest;
  std::string model;
};

void run_train(const GlobalFlags& g, const TrainArgs& a) {
  const pipeline::PipelineConfig cfg = make_config(g);
  const auto table = load_table(g, cfg.feature);
  const auto samples = dataset::load_samples(dataset::read_manifest(a.manifest));
  const pipeline::PipelineModel model = pipeline::train_pipeline(samples, cfg, ptr(table));
  pipeline::save_model(a.model, model);
  const svm::TrainReport& r = model.svm.report;
  std::cout << "trained on " << model.training_patches << " balanced patches from "
            << samples.size() << " images (" << features::kind_name(model.feature) << ", "
            << pipeline::mode_name(model.mode) << ")\n"
            << "epochs " << r.epochs << (r.converged ? " (converged)" : " (max epochs)")
            << ", relative gap " << r.relative_gap << "\n"
            << "model written to " << a.model << "\n";
}

struct InferArgs {
  std::string model;
  std::string image;
  std::string id;
  std::string json;
  std::string overlay;
  std::string keypoints;
  bool full_grid = false;
};

// Preprocessing comes from the model unless the flags override it.
pipeline::PipelineConfig inference_config(const GlobalFlags& g,
                                          const pipeline::PipelineModel& model) {
  GlobalFlags local = g;
  if (g.mode_opt->count() == 0) {
    local.mode = std::string(pipeline::mode_name(model.mode));
  } else if (*pipeline::parse_mode(g.mode) != model.mode) {
    std::cerr << "warning: model was trained in " << pipeline::mode_name(model.mode)
              << " mode; running " << g.mode << "\n";
  }
  if (g.sigma_opt->count() == 0) local.sigma = model.blur_sigma;
  if (g.patch_opt->count() > 0 && g.patch_size != model.patch_size) {
    std::cerr << "warning: --patch-size ignored; the model uses " << model.patch_size << "\n";
  }
  local.patch_size = model.patch_size;
  local.feature = std::string(features::kind_name(model.feature));
  return make_config(local);
}

void run_infer(const GlobalFlags& g, const InferArgs& a) {
  const pipeline::PipelineModel model = pipeline::load_model(a.model);
  const pipeline::PipelineConfig cfg = inference_config(g, model);
  const auto table = load_table(g, model.feature);
  const img::RgbImage image = img::read_png(a.image);
  const std::string id = a.id.empty() ? fs::path(a.image).stem().string() : a.id;

  pipeline::InferStats stats;
  const pipeline::DefectMap map =
      pipeline::infer(model, image, id, cfg, ptr(table), !a.full_grid, &stats);
  const std::string json = pipeline::defect_map_to_json(map);
  if (a.json.empty()) {
    std::cout << json << "\n";
  } else {
    write_text(a.json, json + "\n");
  }
  if (!a.overlay.empty()) img::write_png(a.overlay, pipeline::render_overlay(image, map));
  if (!a.keypoints.empty()) {
    const auto work = pipeline::prepare(image, cfg.mode, cfg.blur_sigma);
    std::ostringstream csv;
    csv << "x,y,scale,response\n";
    for (const surf::Keypoint& k : surf::detect(work.gray, cfg.detector)) {
      csv << k.x << ',' << k.y << ',' << k.scale << ',' << k.response << '\n';
    }
    write_text(a.keypoints, csv.str());
  }
  std::cerr << id << ": " << map.defect_count() << " defect patches of " << map.grid.size()
            << "; " << stats.keypoints << " keypoints, " << stats.classified
            << " patches classified\n";
}

struct CvArgs {
  std::string manifest;
  int folds = 10;
  std::string csv;
};

void run_cv(const GlobalFlags& g, const CvArgs& a) {
  const pipeline::PipelineConfig cfg = make_config(g);
  const auto table = load_table(g, cfg.feature);
  const auto samples = dataset::load_samples(dataset::read_manifest(a.manifest));
  const pipeline::CrossValidationResult cv =
      pipeline::cross_validate(samples, a.folds, cfg, ptr(table));
  std::printf("%-5s %6s %6s %7s %6s %8s %8s %8s\n", "fold", "tp", "fp", "tn", "fn", "sens",
              "spec", "acc");
  for (const pipeline::FoldResult& f : cv.folds) {
    const auto& m = f.metrics;
    std::printf("%-5d %6zu %6zu %7zu %6zu %8.4f %8.4f %8.4f\n", f.fold, m.tp, m.fp, m.tn, m.fn,
                m.sensitivity, m.specificity, m.accuracy);
  }
  std::printf("%-5s %6s %6s %7s %6s %8.4f %8.4f %8.4f\n", "mean", "", "", "", "",
              cv.mean_sensitivity, cv.mean_specificity, cv.mean_accuracy);
  if (!a.csv.empty()) write_text(a.csv, pipeline::metrics_csv(cv));
}

struct BenchArgs {
  std::string model;
  std::string image;
  int repeats = 3;
  std::string out;
};

void run_bench(const GlobalFlags& g, const BenchArgs& a) {
  const pipeline::PipelineModel model = pipeline::load_model(a.model);
  const pipeline::PipelineConfig cfg = inference_config(g, model);
  const auto table = load_table(g, model.feature);
  const img::RgbImage image = img::read_png(a.image);
  if (a.repeats < 1) throw ParameterError("--repeats must be positive");
  const std::string json =
      pipeline::timing_to_json(pipeline::benchmark(model, image, cfg, a.repeats, ptr(table)));
  if (a.out.empty()) {
    std::cout << json << "\n";
  } else {
    write_text(a.out, json + "\n");
  }
}

struct EvalArgs {
  std::string map;
  std::string mask;
};

void run_eval(const EvalArgs& a) {
  const pipeline::DefectMap map = pipeline::defect_map_from_json(read_text(a.map));
  print_metrics(pipeline::evaluate(map, img::read_mask(a.mask)));
}

struct ExportArgs {
  std::string manifest;
  std::string out;
};

// Writes every grid patch, plus the augmented copies of defect patches, as
// PNGs with a key list, for an outside feature extractor.
void run_export(const GlobalFlags& g, const ExportArgs& a) {
  const pipeline::PipelineConfig cfg = make_config(g);
  const dataset::Manifest manifest = dataset::read_manifest(a.manifest);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ostringstream keys;
  std::size_t count = 0;
  for (const dataset::ManifestEntry& e : manifest.entries) {
    const dataset::Sample s = dataset::load_sample(manifest, e);
    const pipeline::WorkingImage work = pipeline::prepare(s.image, cfg.mode, cfg.blur_sigma);
    for (const dataset::LabeledPatch& p : dataset::build_labeled_set({s}, cfg.patch_size)) {
      std::vector<dataset::LabeledPatch> variants = {p};
      if (p.label == dataset::PatchLabel::kDefect) {
        for (const std::string& name : dataset::augmentation_names()) {
          variants.push_back({p.parent_id, p.anchor, p.label, name});
        }
      }
      for (const dataset::LabeledPatch& v : variants) {
        std::string file = v.key();
        std::replace(file.begin(), file.end(), ':', '_');
        file += ".png";
        img::write_png(out / file, dataset::render_patch(work.rgb, v, cfg.patch_size));
        keys << v.key() << '\t' << file << '\t' << dataset::label_name(v.label) << '\n';
        ++count;
      }
    }
  }
  write_text(out / "patches.tsv", keys.str());
  std::cout << "exported " << count << " patches to " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based fuselage defect detection"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  add_global_flags(app, g);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset and manifest");
  synth_cmd->add_option("--images", synth.images, "Number of images")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--width", synth.width)->capture_default_str();
  synth_cmd->add_option("--height", synth.height)->capture_default_str();
  synth_cmd->add_option("--defects", synth.defects, "Defects per image")->capture_default_str();
  synth_cmd->add_option("--dirt", synth.dirt, "Dirt level in [0, 1]")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a manifest");
  train_cmd->add_option("--manifest", train.manifest)->required();
  train_cmd->add_option("--model", train.model, "Output model file")->required();

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Detect defects in one image");
  infer_cmd->add_option("--model", infer.model)->required();
  infer_cmd->add_option("--image", infer.image)->required();
  infer_cmd->add_option("--id", infer.id, "Image id (default: file stem)");
  infer_cmd->add_option("--json", infer.json, "Defect map output (default: stdout)");
  infer_cmd->add_option("--overlay", infer.overlay, "Overlay PNG output");
  infer_cmd->add_option("--keypoints", infer.keypoints, "Keypoint CSV output");
  infer_cmd->add_flag("--full-grid", infer.full_grid, "Classify every patch, no gating");

  CvArgs cv;
  auto* cv_cmd = app.add_subcommand("cv", "Grouped k-fold cross-validation");
  cv_cmd->add_option("--manifest", cv.manifest)->required();
  cv_cmd->add_option("--folds", cv.folds)->capture_default_str();
  cv_cmd->add_option("--csv", cv.csv, "Metrics CSV output");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time full-grid against gated inference");
  bench_cmd->add_option("--model", bench.model)->required();
  bench_cmd->add_option("--image", bench.image)->required();
  bench_cmd->add_option("--repeats", bench.repeats)->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Timing JSON output (default: stdout)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a defect map against a mask");
  eval_cmd->add_option("--map", eval.map, "Defect-map JSON")->required();
  eval_cmd->add_option("--mask", eval.mask, "Ground-truth mask PNG")->required();

  ExportArgs exp;
  auto* export_cmd =
      app.add_subcommand("export-patches", "Write patch PNGs for an external extractor");
  export_cmd->add_option("--manifest", exp.manifest)->required();
  export_cmd->add_option("--out", exp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth_cmd) run_synth(g, synth);
    if (*train_cmd) run_train(g, train);
    if (*infer_cmd) run_infer(g, infer);
    if (*cv_cmd) run_cv(g, cv);
    if (*bench_cmd) run_bench(g, bench);
    if (*eval_cmd) run_eval(eval);
    if (*export_cmd) run_export(g, exp);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
