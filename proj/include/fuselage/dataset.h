#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fuselage/image.h"

namespace fuselage::dataset {

// One annotated image. mask(i, j) == 1 marks a defect pixel.
struct Sample {
  std::string id;
  img::RgbImage image;
  img::BinaryMask mask;
};

enum class PatchLabel { kNoDefect = 0, kDefect = 1 };

std::string_view label_name(PatchLabel label);

// Grid patch of a parent image. An augmented copy keeps the parent anchor and
// records the transform that produced it.
struct LabeledPatch {
  std::string parent_id;
  img::Anchor anchor;
  PatchLabel label = PatchLabel::kNoDefect;
  std::optional<std::string> transform;

  // "<image_id>:<row>:<col>[:<transform>]"
  std::string key() const;

  friend bool operator==(const LabeledPatch&, const LabeledPatch&) = default;
};

std::string patch_key(std::string_view image_id, img::Anchor anchor,
                      std::optional<std::string_view> transform = {});

// Strict majority: defect iff more than half of the rect's pixels are set.
PatchLabel label_patch(const img::BinaryMask& mask, const img::Rect& r);

// Per-anchor labels of one mask, in grid order.
std::vector<PatchLabel> label_grid(const img::BinaryMask& mask,
                                   const img::PatchGrid& grid);

std::vector<LabeledPatch> build_labeled_set(const std::vector<Sample>& samples,
                                            int patch_size);

// Names of the eight defect augmentations in output order. The first entry is
// the identity; rotations come next, then the two flips of the original.
const std::vector<std::string>& augmentation_names();

img::RgbImage apply_augmentation(const img::RgbImage& patch,
                                 std::string_view name);
img::GrayImage apply_augmentation(const img::GrayImage& patch,
                                  std::string_view name);

std::vector<img::RgbImage> augment_defect(const img::RgbImage& patch);
std::vector<img::GrayImage> augment_defect(const img::GrayImage& patch);

// Replaces every defect patch by its eight augmentations, then undersamples
// the larger class (seeded, uniform without replacement) so both classes end
// up the same size. Output keeps input order. Throws DatasetError if either
// class is empty.
std::vector<LabeledPatch> balance(const std::vector<LabeledPatch>& patches,
                                  std::uint64_t seed);

// Pixels of a (possibly augmented) labeled patch cut from its parent image.
img::RgbImage render_patch(const img::RgbImage& parent,
                           const LabeledPatch& patch, int patch_size);

struct FoldPlan {
  int k = 10;
  std::map<std::string, int> assignment;

  std::vector<std::string> fold_ids(int fold) const;
};

// Seeded shuffle followed by round-robin assignment. Throws ParameterError if
// k < 2 or there are fewer ids than folds.
FoldPlan group_kfold(const std::vector<std::string>& image_ids, int k,
                     std::uint64_t seed);

// ---- Manifest files -------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path image_path;  // as written, relative to the manifest
  std::filesystem::path mask_path;
  std::optional<int> fold;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::filesystem::path directory;  // base for relative paths
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// Tab-separated "id  image  mask [fold]" lines; '#' starts a comment line.
// Throws IoError naming the file and line on malformed records or when a
// referenced image or mask file does not exist.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);

Sample load_sample(const Manifest& manifest, const ManifestEntry& entry);
std::vector<Sample> load_samples(const Manifest& manifest);

// Writes image and mask PNGs under `directory` plus the manifest file.
void write_samples(const std::filesystem::path& manifest_path,
                   const std::vector<Sample>& samples);

}  // namespace fuselage::dataset
