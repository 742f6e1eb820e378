#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fuselage/dataset.h"

namespace fuselage::dataset {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Procedural painted-fuselage scene: illumination gradient, seam lines and a
// rivet lattice, with scratch and dent defects whose footprint is recorded in
// the mask. Dirt speckle is painted last and never enters the mask.
struct SynthConfig {
  int width = 1024;
  int height = 1024;
  int rivet_spacing = 160;  // pixels between lattice rivets
  int seam_count = 2;
  int defect_count = 3;
  bool scratches = true;
  bool dents = true;
  Range dent_radius{55.0, 85.0};
  Range scratch_width{44.0, 64.0};
  Range scratch_length{150.0, 260.0};
  Range contrast{40.0, 70.0};  // intensity levels
  double dirt_level = 0.0;     // [0, 1]
  std::uint64_t seed = 7;

  void validate() const;
};

// Deterministic in cfg (including seed). Throws ParameterError for invalid
// configs or when a defect cannot fit inside the image.
Sample synth_generate(const SynthConfig& cfg, const std::string& id = "synth");

// `count` scenes whose seeds are derived from cfg.seed; ids are
// "img000", "img001", ...
std::vector<Sample> synth_dataset(const SynthConfig& cfg, int count);

}  // namespace fuselage::dataset
