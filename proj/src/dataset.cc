#include "fuselage/dataset.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fuselage/errors.h"
#include "fuselage/image_io.h"
#include "fuselage/random.h"

namespace fuselage::dataset {
namespace {

constexpr int kRotationStep = 60;

template <typename Image>
Image augment_one(const Image& patch, std::string_view name) {
  if (name == "orig") return patch;
  if (name == "fliph") return img::flip_patch(patch, img::FlipAxis::kHorizontal);
  if (name == "flipv") return img::flip_patch(patch, img::FlipAxis::kVertical);
  if (name.starts_with("rot")) {
    const int degrees = std::stoi(std::string(name.substr(3)));
    return img::rotate_patch(patch, degrees);
  }
  throw ParameterError("unknown augmentation '" + std::string(name) + "'");
}

template <typename Image>
std::vector<Image> augment_all(const Image& patch) {
  if (patch.width() != patch.height()) {
    throw ParameterError("defect augmentation requires a square patch");
  }
  std::vector<Image> out;
  out.reserve(augmentation_names().size());
  for (const std::string& name : augmentation_names()) {
    out.push_back(augment_one(patch, name));
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::string_view label_name(PatchLabel label) {
  return label == PatchLabel::kDefect ? "defect" : "no_defect";
}

std::string patch_key(std::string_view image_id, img::Anchor anchor,
                      std::optional<std::string_view> transform) {
  std::string key(image_id);
  key += ':';
  key += std::to_string(anchor.row);
  key += ':';
  key += std::to_string(anchor.col);
  if (transform) {
    key += ':';
    key += *transform;
  }
  return key;
}

std::string LabeledPatch::key() const {
  if (transform) return patch_key(parent_id, anchor, std::string_view(*transform));
  return patch_key(parent_id, anchor);
}

PatchLabel label_patch(const img::BinaryMask& mask, const img::Rect& r) {
  if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > mask.width() ||
      r.y + r.h > mask.height()) {
    throw BoundsError("label rect outside mask");
  }
  std::size_t ones = 0;
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) ones += mask.at(x, y);
  }
  const std::size_t area = static_cast<std::size_t>(r.w) * r.h;
  return 2 * ones > area ? PatchLabel::kDefect : PatchLabel::kNoDefect;
}

std::vector<PatchLabel> label_grid(const img::BinaryMask& mask,
                                   const img::PatchGrid& grid) {
  std::vector<PatchLabel> labels(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    labels[i] = label_patch(mask, grid.rect(i));
  }
  return labels;
}

std::vector<LabeledPatch> build_labeled_set(const std::vector<Sample>& samples,
                                            int patch_size) {
  std::vector<LabeledPatch> out;
  for (const Sample& s : samples) {
    if (s.mask.width() != s.image.width() ||
        s.mask.height() != s.image.height()) {
      throw DatasetError("mask and image dimensions differ for sample " + s.id);
    }
    const img::PatchGrid grid =
        img::partition(s.image.width(), s.image.height(), patch_size);
    const std::vector<PatchLabel> labels = label_grid(s.mask, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out.push_back({s.id, grid.anchor(i), labels[i], std::nullopt});
    }
  }
  return out;
}

const std::vector<std::string>& augmentation_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v{"orig"};
    for (int a = kRotationStep; a < 360; a += kRotationStep) {
      v.push_back("rot" + std::to_string(a));
    }
    v.push_back("fliph");
    v.push_back("flipv");
    return v;
  }();
  return names;
}

img::RgbImage apply_augmentation(const img::RgbImage& patch,
                                 std::string_view name) {
  return augment_one(patch, name);
}

img::GrayImage apply_augmentation(const img::GrayImage& patch,
                                  std::string_view name) {
  return augment_one(patch, name);
}

std::vector<img::RgbImage> augment_defect(const img::RgbImage& patch) {
  return augment_all(patch);
}

std::vector<img::GrayImage> augment_defect(const img::GrayImage& patch) {
  return augment_all(patch);
}

std::vector<LabeledPatch> balance(const std::vector<LabeledPatch>& patches,
                                  std::uint64_t seed) {
  std::vector<LabeledPatch> defects;
  std::vector<std::size_t> clean;  // indices into `patches`
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const LabeledPatch& p = patches[i];
    if (p.label == PatchLabel::kDefect) {
      for (const std::string& name : augmentation_names()) {
        LabeledPatch copy = p;
        if (name != "orig") copy.transform = name;
        defects.push_back(std::move(copy));
      }
    } else {
      clean.push_back(i);
    }
  }
  if (defects.empty()) throw DatasetError("no defect patches to balance");
  if (clean.empty()) throw DatasetError("no no-defect patches to balance");

  // Selects `keep` of `n` positions uniformly without replacement and returns
  // them sorted so the output keeps its input order.
  Rng rng(seed);
  auto choose = [&rng](std::size_t n, std::size_t keep) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < keep; ++i) {
      std::swap(order[i], order[i + rng.index(n - i)]);
    }
    order.resize(keep);
    std::sort(order.begin(), order.end());
    return order;
  };

  std::vector<LabeledPatch> out;
  if (clean.size() >= defects.size()) {
    const std::vector<std::size_t> kept = choose(clean.size(), defects.size());
    std::vector<bool> keep_clean(patches.size(), false);
    for (std::size_t k : kept) keep_clean[clean[k]] = true;
    std::size_t next_defect = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (patches[i].label == PatchLabel::kDefect) {
        for (std::size_t a = 0; a < augmentation_names().size(); ++a) {
          out.push_back(defects[next_defect++]);
        }
      } else if (keep_clean[i]) {
        out.push_back(patches[i]);
      }
    }
  } else {
    const std::vector<std::size_t> kept = choose(defects.size(), clean.size());
    std::vector<bool> keep_defect(defects.size(), false);
    for (std::size_t k : kept) keep_defect[k] = true;
    std::size_t next_defect = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (patches[i].label == PatchLabel::kDefect) {
        for (std::size_t a = 0; a < augmentation_names().size(); ++a) {
          if (keep_defect[next_defect]) out.push_back(defects[next_defect]);
          ++next_defect;
        }
      } else {
        out.push_back(patches[i]);
      }
    }
  }
  return out;
}

img::RgbImage render_patch(const img::RgbImage& parent,
                           const LabeledPatch& patch, int patch_size) {
  img::RgbImage pixels = img::crop(
      parent, {patch.anchor.col, patch.anchor.row, patch_size, patch_size});
  if (patch.transform) return apply_augmentation(pixels, *patch.transform);
  return pixels;
}

std::vector<std::string> FoldPlan::fold_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignment) {
    if (f == fold) ids.push_back(id);
  }
  return ids;
}

FoldPlan group_kfold(const std::vector<std::string>& image_ids, int k,
                     std::uint64_t seed) {
  if (k < 2) throw ParameterError("fold count must be at least 2");
  if (image_ids.size() < static_cast<std::size_t>(k)) {
    throw ParameterError("need at least " + std::to_string(k) +
                         " images for " + std::to_string(k) +
                         "-fold cross-validation, got " +
                         std::to_string(image_ids.size()));
  }
  std::vector<std::string> shuffled = image_ids;
  Rng rng(seed);
  rng.shuffle(shuffled);
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    if (!plan.assignment.emplace(shuffled[i], static_cast<int>(i % k)).second) {
      throw ParameterError("duplicate image id '" + shuffled[i] + "'");
    }
  }
  return plan;
}

std::filesystem::path Manifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : directory / p;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.directory = path.parent_path();
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + why +
                  " in record '" + line + "'");
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() < 3 || f.size() > 4) fail("expected 3 or 4 tab-separated fields");
    if (f[0].empty() || f[1].empty() || f[2].empty()) fail("empty field");
    ManifestEntry e{f[0], f[1], f[2], std::nullopt};
    if (f.size() == 4) {
      std::size_t used = 0;
      int fold = -1;
      try {
        fold = std::stoi(f[3], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f[3].size() || fold < 0) fail("invalid fold index");
      e.fold = fold;
    }
    for (const auto* p : {&e.image_path, &e.mask_path}) {
      if (!std::filesystem::exists(m.resolve(*p))) {
        fail("missing file " + m.resolve(*p).string());
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# id\timage\tmask\t[fold]\n";
  for (const ManifestEntry& e : entries) {
    out << e.id << '\t' << e.image_path.generic_string() << '\t'
        << e.mask_path.generic_string();
    if (e.fold) out << '\t' << *e.fold;
    out << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

Sample load_sample(const Manifest& manifest, const ManifestEntry& entry) {
  Sample s{entry.id, img::read_png(manifest.resolve(entry.image_path)),
           img::read_mask(manifest.resolve(entry.mask_path))};
  if (s.mask.width() != s.image.width() || s.mask.height() != s.image.height()) {
    throw DatasetError("mask and image dimensions differ for " + entry.id);
  }
  return s;
}

std::vector<Sample> load_samples(const Manifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    out.push_back(load_sample(manifest, e));
  }
  return out;
}

void write_samples(const std::filesystem::path& manifest_path,
                   const std::vector<Sample>& samples) {
  const std::filesystem::path dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const Sample& s : samples) {
    ManifestEntry e{s.id, s.id + ".png", s.id + "_mask.png", std::nullopt};
    img::write_png(dir / e.image_path, s.image);
    img::write_png(dir / e.mask_path, s.mask);
    entries.push_back(std::move(e));
  }
  write_manifest(manifest_path, entries);
}

}  // namespace fuselage::dataset
