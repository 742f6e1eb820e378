#include "fuselage/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fuselage/errors.h"
#include "fuselage/random.h"

namespace fuselage::dataset {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kPlacementGap = 4;       // pixels kept clear between defects
constexpr int kPlacementAttempts = 2000;
constexpr double kRoughness = 9.0;     // per-pixel texture inside defects
constexpr Range kSpeckDepth{1.0, 5.0};  // dirt darkening, intensity levels
constexpr double kPitDensity = 1.0 / 170.0;  // pits per defect pixel

struct Box {
  int x0, y0, x1, y1;  // inclusive

  bool overlaps(const Box& o, int gap) const {
    return x0 - gap <= o.x1 && o.x0 - gap <= x1 && y0 - gap <= o.y1 &&
           o.y0 - gap <= y1;
  }
};

struct Pit {
  double x, y, radius, depth;
};

struct Canvas {
  int width;
  int height;
  std::vector<double> gray;
  std::vector<std::uint8_t> kind;  // 0 background, 1 scratch, 2 dent

  double& at(int x, int y) { return gray[std::size_t(y) * width + x]; }
};

double pit_delta(const std::vector<Pit>& pits, double x, double y) {
  double delta = 0.0;
  for (const Pit& p : pits) {
    const double dx = x - p.x;
    const double dy = y - p.y;
    const double r2 = (dx * dx + dy * dy) / (p.radius * p.radius);
    if (r2 < 1.0) delta -= p.depth * (1.0 - r2);
  }
  return delta;
}

// Distance from (px, py) to segment a-b and the signed perpendicular offset.
std::pair<double, double> segment_distance(double px, double py, double ax,
                                           double ay, double bx, double by) {
  const double vx = bx - ax;
  const double vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
  const double cx = ax + t * vx;
  const double cy = ay + t * vy;
  const double dist = std::hypot(px - cx, py - cy);
  const double side = ((px - ax) * vy - (py - ay) * vx) / std::sqrt(len2);
  return {dist, side};
}

void paint_background(Canvas& c, const SynthConfig& cfg, Rng& rng) {
  const double phase = rng.uniform(0.0, kTwoPi);
  const double gx = rng.uniform(-20.0, 20.0);
  const double gy = rng.uniform(-14.0, 14.0);
  const double base = rng.uniform(140.0, 160.0);
  for (int y = 0; y < c.height; ++y) {
    const double v = static_cast<double>(y) / c.height;
    for (int x = 0; x < c.width; ++x) {
      const double u = static_cast<double>(x) / c.width;
      c.at(x, y) = base + gx * (u - 0.5) + gy * (v - 0.5) +
                   5.0 * std::sin(kTwoPi * (0.7 * u + 0.4 * v) + phase);
    }
  }

  for (int s = 0; s < cfg.seam_count; ++s) {
    const bool vertical = s % 2 == 0;
    const int extent = vertical ? c.width : c.height;
    const double pos = rng.uniform(0.15, 0.85) * extent;
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x) {
        const double d = std::abs((vertical ? x : y) - pos);
        if (d < 2.0) c.at(x, y) -= 30.0 * (1.0 - d / 2.0);
      }
    }
  }

  if (cfg.rivet_spacing > 0) {
    const int ox = rng.uniform_int(0, cfg.rivet_spacing - 1);
    const int oy = rng.uniform_int(0, cfg.rivet_spacing - 1);
    constexpr double kHead = 4.5;
    constexpr double kRing = 6.5;
    for (int ry = oy; ry < c.height; ry += cfg.rivet_spacing) {
      for (int rx = ox; rx < c.width; rx += cfg.rivet_spacing) {
        for (int y = std::max(0, ry - 7); y <= std::min(c.height - 1, ry + 7); ++y) {
          for (int x = std::max(0, rx - 7); x <= std::min(c.width - 1, rx + 7); ++x) {
            const double r = std::hypot(x - rx, y - ry);
            if (r < kHead) {
              c.at(x, y) += 25.0 * (1.0 - (r * r) / (kHead * kHead));
            } else if (r < kRing) {
              c.at(x, y) -= 25.0 * std::sin(std::numbers::pi * (r - kHead) /
                                            (kRing - kHead));
            }
          }
        }
      }
    }
  }
}

// Writes the defect delta for one pixel and records it in the mask.
void touch(Canvas& c, img::BinaryMask& mask, int x, int y, double delta,
           std::uint8_t kind) {
  c.at(x, y) += delta;
  mask.set(x, y, true);
  c.kind[std::size_t(y) * c.width + x] = kind;
}

struct Dent {
  double cx, cy, radius, contrast;
  Box box() const {
    return {static_cast<int>(std::floor(cx - radius)),
            static_cast<int>(std::floor(cy - radius)),
            static_cast<int>(std::ceil(cx + radius)),
            static_cast<int>(std::ceil(cy + radius))};
  }
};

struct Scratch {
  std::vector<std::pair<double, double>> points;
  double half_width, contrast;
  Box box() const {
    double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
    for (auto [x, y] : points) {
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
    const double m = half_width + 1.0;
    return {static_cast<int>(std::floor(x0 - m)), static_cast<int>(std::floor(y0 - m)),
            static_cast<int>(std::ceil(x1 + m)), static_cast<int>(std::ceil(y1 + m))};
  }
};

bool inside(const Box& b, const Canvas& c) {
  return b.x0 >= 1 && b.y0 >= 1 && b.x1 <= c.width - 2 && b.y1 <= c.height - 2;
}

void paint_dent(Canvas& c, img::BinaryMask& mask, const Dent& d, Rng& rng) {
  std::vector<Pit> pits;
  const int n_pits = static_cast<int>(std::numbers::pi * d.radius * d.radius *
                                      kPitDensity);
  for (int i = 0; i < n_pits; ++i) {
    const double r = rng.uniform(2.0, 4.0);
    const double rho = std::sqrt(rng.uniform()) * (d.radius - r - 1.0);
    const double theta = rng.uniform(0.0, kTwoPi);
    pits.push_back({d.cx + rho * std::cos(theta), d.cy + rho * std::sin(theta), r,
                    rng.uniform(35.0, 70.0)});
  }
  const Box b = d.box();
  for (int y = b.y0; y <= b.y1; ++y) {
    for (int x = b.x0; x <= b.x1; ++x) {
      const double r = std::hypot(x - d.cx, y - d.cy);
      if (r > d.radius) continue;
      const double dome = 0.5 * (1.0 + std::cos(std::numbers::pi * r / d.radius));
      const double delta = -d.contrast * dome + pit_delta(pits, x, y) +
                           rng.uniform(-kRoughness, kRoughness);
      touch(c, mask, x, y, delta, 2);
    }
  }
}

void paint_scratch(Canvas& c, img::BinaryMask& mask, const Scratch& s, Rng& rng) {
  std::vector<Pit> pits;
  double length = 0.0;
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    length += std::hypot(s.points[i].first - s.points[i - 1].first,
                         s.points[i].second - s.points[i - 1].second);
  }
  const int n_pits = static_cast<int>(length * 2.0 * s.half_width * kPitDensity);
  for (int i = 0; i < n_pits; ++i) {
    const std::size_t seg = 1 + rng.index(s.points.size() - 1);
    const auto [ax, ay] = s.points[seg - 1];
    const auto [bx, by] = s.points[seg];
    const double t = rng.uniform();
    const double len = std::hypot(bx - ax, by - ay);
    const double nx = -(by - ay) / len;
    const double ny = (bx - ax) / len;
    const double r = rng.uniform(2.0, 4.0);
    const double off = rng.uniform(-1.0, 1.0) * (s.half_width - r - 1.0);
    pits.push_back({ax + t * (bx - ax) + off * nx, ay + t * (by - ay) + off * ny, r,
                    rng.uniform(35.0, 70.0)});
  }
  const double stripe_period = rng.uniform(4.0, 7.0);
  const double stripe_phase = rng.uniform(0.0, kTwoPi);
  const Box b = s.box();
  for (int y = b.y0; y <= b.y1; ++y) {
    for (int x = b.x0; x <= b.x1; ++x) {
      double dist = 1e18;
      double side = 0.0;
      for (std::size_t i = 1; i < s.points.size(); ++i) {
        const auto [dd, sd] =
            segment_distance(x, y, s.points[i - 1].first, s.points[i - 1].second,
                             s.points[i].first, s.points[i].second);
        if (dd < dist) {
          dist = dd;
          side = sd;
        }
      }
      // Anti-aliased band edge.
      const double coverage = std::clamp(s.half_width + 0.5 - dist, 0.0, 1.0);
      if (coverage <= 0.0) continue;
      const double stripes = std::sin(kTwoPi * side / stripe_period + stripe_phase);
      const double delta =
          coverage * (0.6 * s.contrast + 0.4 * s.contrast * stripes +
                      pit_delta(pits, x, y) + rng.uniform(-kRoughness, kRoughness));
      touch(c, mask, x, y, delta, 1);
    }
  }
}

// Per-pixel speckle: each pixel is darkened by a few levels with probability
// equal to the dirt level.
void paint_dirt(Canvas& c, double level, Rng& rng) {
  for (double& v : c.gray) {
    if (rng.uniform() < level) v -= rng.uniform(kSpeckDepth.lo, kSpeckDepth.hi);
  }
}

}  // namespace

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) {
    throw ParameterError("invalid synth config: " + what);
  };
  if (width < 1 || height < 1) bad("image size must be positive");
  if (rivet_spacing < 0) bad("rivet spacing must be non-negative");
  if (seam_count < 0) bad("seam count must be non-negative");
  if (defect_count < 0) bad("defect count must be non-negative");
  if (defect_count > 0 && !scratches && !dents) bad("no defect kind enabled");
  for (const Range* r : {&dent_radius, &scratch_width, &scratch_length, &contrast}) {
    if (!(r->lo > 0.0) || r->hi < r->lo) bad("ranges must be positive and ordered");
  }
  if (!(dirt_level >= 0.0 && dirt_level <= 1.0)) bad("dirt level must be in [0, 1]");
  if (defect_count > 0) {
    const double extent = std::min(width, height) - 2.0;
    if (dents && 2.0 * dent_radius.hi + 2.0 > extent) {
      throw ParameterError("dent diameter exceeds image size");
    }
    if (scratches && scratch_length.hi + scratch_width.hi + 2.0 > extent) {
      throw ParameterError("scratch extent exceeds image size");
    }
  }
}

Sample synth_generate(const SynthConfig& cfg, const std::string& id) {
  cfg.validate();
  Canvas c{cfg.width, cfg.height,
           std::vector<double>(std::size_t(cfg.width) * cfg.height, 0.0),
           std::vector<std::uint8_t>(std::size_t(cfg.width) * cfg.height, 0)};
  img::BinaryMask mask(cfg.width, cfg.height);

  // Independent streams so changing e.g. the defect count keeps the
  // background identical.
  Rng background_rng(mix_seed(cfg.seed, 0));
  Rng defect_rng(mix_seed(cfg.seed, 1));
  Rng dirt_rng(mix_seed(cfg.seed, 2));

  paint_background(c, cfg, background_rng);

  std::vector<Box> placed;
  for (int i = 0; i < cfg.defect_count; ++i) {
    const bool dent = cfg.dents && (!cfg.scratches || defect_rng.uniform() < 0.5);
    bool done = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !done; ++attempt) {
      if (dent) {
        Dent d;
        d.radius = defect_rng.uniform(cfg.dent_radius.lo, cfg.dent_radius.hi);
        d.cx = defect_rng.uniform(0.0, cfg.width);
        d.cy = defect_rng.uniform(0.0, cfg.height);
        d.contrast = defect_rng.uniform(cfg.contrast.lo, cfg.contrast.hi);
        const Box b = d.box();
        if (!inside(b, c) ||
            std::any_of(placed.begin(), placed.end(),
                        [&](const Box& o) { return b.overlaps(o, kPlacementGap); })) {
          continue;
        }
        placed.push_back(b);
        paint_dent(c, mask, d, defect_rng);
      } else {
        Scratch s;
        const double length =
            defect_rng.uniform(cfg.scratch_length.lo, cfg.scratch_length.hi);
        s.half_width =
            0.5 * defect_rng.uniform(cfg.scratch_width.lo, cfg.scratch_width.hi);
        s.contrast = defect_rng.uniform(cfg.contrast.lo, cfg.contrast.hi);
        double x = defect_rng.uniform(0.0, cfg.width);
        double y = defect_rng.uniform(0.0, cfg.height);
        double heading = defect_rng.uniform(0.0, kTwoPi);
        s.points.emplace_back(x, y);
        for (int seg = 0; seg < 2; ++seg) {
          x += 0.5 * length * std::cos(heading);
          y += 0.5 * length * std::sin(heading);
          s.points.emplace_back(x, y);
          heading += defect_rng.uniform(-0.5, 0.5);
        }
        const Box b = s.box();
        if (!inside(b, c) ||
            std::any_of(placed.begin(), placed.end(),
                        [&](const Box& o) { return b.overlaps(o, kPlacementGap); })) {
          continue;
        }
        placed.push_back(b);
        paint_scratch(c, mask, s, defect_rng);
      }
      done = true;
    }
    if (!done) {
      throw ParameterError("could not place " + std::to_string(cfg.defect_count) +
                           " non-overlapping defects in a " +
                           std::to_string(cfg.width) + "x" +
                           std::to_string(cfg.height) + " image");
    }
  }

  if (cfg.dirt_level > 0.0) paint_dirt(c, cfg.dirt_level, dirt_rng);

  // Painted surface is a warm gray; bare metal in scratches is slightly blue
  // and dents slightly darker in red.
  static constexpr double kTint[3][3] = {
      {1.00, 0.99, 0.95}, {0.95, 0.99, 1.06}, {0.97, 0.98, 0.99}};
  img::RgbImage image(cfg.width, cfg.height);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      const std::size_t i = std::size_t(y) * cfg.width + x;
      const double* tint = kTint[c.kind[i]];
      std::uint8_t rgb[3];
      for (int ch = 0; ch < 3; ++ch) {
        rgb[ch] = static_cast<std::uint8_t>(
            std::clamp(std::lround(c.gray[i] * tint[ch]), 0L, 255L));
      }
      image.set(x, y, rgb[0], rgb[1], rgb[2]);
    }
  }
  return {id, std::move(image), std::move(mask)};
}

std::vector<Sample> synth_dataset(const SynthConfig& cfg, int count) {
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SynthConfig one = cfg;
    one.seed = mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(i));
    char id[16];
    std::snprintf(id, sizeof id, "img%03d", i);
    out.push_back(synth_generate(one, id));
  }
  return out;
}

}  // namespace fuselage::dataset
