#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fuselage/errors.h"
#include "fuselage/pipeline.h"
#include "json.hpp"

namespace fuselage::pipeline {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'F', 'D', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[at + i]) << (8 * i);
  return v;
}

void put_doubles(std::vector<std::uint8_t>& out, const std::vector<double>& values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(double));
  std::memcpy(out.data() + start, values.data(), values.size() * sizeof(double));
}

std::vector<double> get_doubles(const std::vector<std::uint8_t>& in, std::size_t& at,
                                std::size_t count) {
  if (in.size() < at + count * sizeof(double)) {
    throw FormatError("model file is truncated");
  }
  std::vector<double> values(count);
  std::memcpy(values.data(), in.data() + at, count * sizeof(double));
  at += count * sizeof(double);
  return values;
}

json report_json(const svm::TrainReport& r) {
  return {{"epochs", r.epochs},
          {"converged", r.converged},
          {"primal", r.primal},
          {"dual", r.dual},
          {"relative_gap", r.relative_gap}};
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const PipelineModel& model) {
  const std::size_t k = model.svm.w.size();
  if (model.svm.standardizer.mean.size() != k ||
      model.svm.standardizer.stddev.size() != k) {
    throw ParameterError("model standardizer and weights disagree in dimension");
  }
  const json header = {
      {"feature", features::kind_name(model.feature)},
      {"dimension", k},
      {"patch_size", model.patch_size},
      {"mode", mode_name(model.mode)},
      {"blur_sigma", model.blur_sigma},
      {"grayscale", "bt601"},
      {"C", model.svm.C},
      {"seed", model.seed},
      {"training_patches", model.training_patches},
      {"train_report", report_json(model.svm.report)},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_doubles(out, model.svm.standardizer.mean);
  put_doubles(out, model.svm.standardizer.stddev);
  put_doubles(out, model.svm.w);
  put_doubles(out, {model.svm.b});
  return out;
}

PipelineModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + std::size_t(header_len)) {
    throw FormatError("model file is truncated");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }

  PipelineModel model;
  try {
    const auto kind = features::parse_kind(header.at("feature").get<std::string>());
    const auto mode = parse_mode(header.at("mode").get<std::string>());
    if (!kind || !mode) throw FormatError("model header has an unknown feature or mode");
    model.feature = *kind;
    model.mode = *mode;
    model.patch_size = header.at("patch_size").get<int>();
    model.blur_sigma = header.at("blur_sigma").get<double>();
    model.seed = header.at("seed").get<std::uint64_t>();
    model.training_patches = header.at("training_patches").get<std::size_t>();
    model.svm.C = header.at("C").get<double>();
    const json& r = header.at("train_report");
    model.svm.report = {r.at("epochs").get<int>(), r.at("converged").get<bool>(),
                        r.at("primal").get<double>(), r.at("dual").get<double>(),
                        r.at("relative_gap").get<double>()};
    const std::size_t k = header.at("dimension").get<std::size_t>();
    std::size_t at = 12 + header_len;
    model.svm.standardizer.mean = get_doubles(bytes, at, k);
    model.svm.standardizer.stddev = get_doubles(bytes, at, k);
    model.svm.w = get_doubles(bytes, at, k);
    model.svm.b = get_doubles(bytes, at, 1).front();
    if (at != bytes.size()) throw FormatError("model file has trailing bytes");
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is incomplete: ") + e.what());
  }
  return model;
}

void save_model(const std::filesystem::path& path, const PipelineModel& model) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

PipelineModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::string defect_map_to_json(const DefectMap& map) {
  json entries = json::array();
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    const MapEntry& e = map.entries[i];
    const img::Anchor a = map.grid.anchor(i);
    json item = {{"row", a.row},
                 {"col", a.col},
                 {"decision", decision_name(e.decision)},
                 {"provenance", provenance_name(e.provenance)}};
    if (e.score) item["score"] = *e.score;
    entries.push_back(std::move(item));
  }
  const json doc = {{"image_id", map.image_id},
                    {"patch_size", map.grid.patch_size},
                    {"image_width", map.grid.image_width},
                    {"image_height", map.grid.image_height},
                    {"entries", std::move(entries)}};
  return doc.dump(2) + "\n";
}

DefectMap defect_map_from_json(std::string_view text) {
  DefectMap map;
  try {
    const json doc = json::parse(text);
    map.image_id = doc.at("image_id").get<std::string>();
    map.grid = img::partition(doc.at("image_width").get<int>(),
                              doc.at("image_height").get<int>(),
                              doc.at("patch_size").get<int>());
    const json& entries = doc.at("entries");
    if (entries.size() != map.grid.size()) {
      throw FormatError("defect map has " + std::to_string(entries.size()) +
                        " entries, grid has " + std::to_string(map.grid.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const json& item = entries[i];
      const img::Anchor a = map.grid.anchor(i);
      if (item.at("row").get<int>() != a.row || item.at("col").get<int>() != a.col) {
        throw FormatError("defect map entry " + std::to_string(i) +
                          " is not at its grid anchor");
      }
      MapEntry e;
      const std::string decision = item.at("decision").get<std::string>();
      const std::string provenance = item.at("provenance").get<std::string>();
      if (decision == "defect") {
        e.decision = Decision::kDefect;
      } else if (decision != "no_defect") {
        throw FormatError("unknown decision '" + decision + "'");
      }
      if (provenance == "classifier") {
        e.provenance = Provenance::kClassifier;
      } else if (provenance == "expanded") {
        e.provenance = Provenance::kExpanded;
      } else if (provenance == "gated_out") {
        e.provenance = Provenance::kGatedOut;
      } else {
        throw FormatError("unknown provenance '" + provenance + "'");
      }
      if (item.contains("score")) e.score = item.at("score").get<double>();
      map.entries.push_back(e);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid defect map JSON: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("invalid defect map grid: ") + e.what());
  }
  return map;
}

std::string timing_to_json(const TimingReport& t) {
  const json doc = {{"full_seconds", t.full_seconds},
                    {"gated_seconds", t.gated_seconds},
                    {"full_patches", t.full_patches},
                    {"gated_patches", t.gated_patches},
                    {"keypoints", t.keypoints},
                    {"speedup", t.speedup}};
  return doc.dump(2) + "\n";
}

}  // namespace fuselage::pipeline
