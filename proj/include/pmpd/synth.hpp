#pragma once

// Deterministic synthetic scenes: axis-aligned textured rectangles over a
// constant-depth background, drawn far-to-near. Colour follows depth (a hue
// band per depth eighth plus a brightness ramp) so depth can be inferred from
// a single image. Only +,-,*,/ and floor are used while rendering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/random.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

inline constexpr double kSceneMaxDepth = 80.0;

struct Sample {
  Tensor image;     // [1,3,H,W], values in [0,1]
  Tensor depth_gt;  // [1,1,H,W], meters
  std::vector<std::uint8_t> mask;  // H*W, nonzero where depth_gt is valid

  std::size_t height() const { return image.dim(2); }
  std::size_t width() const { return image.dim(3); }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int n_objects = 4;
  double min_depth = 4.0;
  double max_depth = 52.0;
  double background_depth = 72.0;
  double noise_sigma = 0.05;

  void validate() const {
    if (n_objects < 1 || n_objects > 8) {
      throw ConfigError("scene: n_objects must be in [1,8], got " +
                        std::to_string(n_objects));
    }
    if (!(min_depth > 0.0) || !(min_depth <= max_depth) || !(max_depth <= kSceneMaxDepth)) {
      throw ConfigError("scene: depth range must satisfy 0 < min <= max <= 80");
    }
    if (!(background_depth > 0.0) || !(background_depth <= kSceneMaxDepth)) {
      throw ConfigError("scene: background depth must lie in (0, 80]");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("scene: noise sigma must be >= 0");
  }
};

// Spec used for dataset sample `seed`: object count drawn from the seed,
// depth range and background tied to the dataset's max depth.
inline SceneSpec default_scene_spec(std::uint64_t seed, double max_depth = kSceneMaxDepth) {
  Rng rng(mix_seed(seed, 0x5CE));
  SceneSpec spec;
  spec.seed = seed;
  spec.n_objects = 1 + static_cast<int>(rng.below(8));
  spec.min_depth = 0.05 * max_depth;
  spec.max_depth = 0.65 * max_depth;
  spec.background_depth = 0.9 * max_depth;
  return spec;
}

struct SceneRect {
  std::size_t x0, y0, x1, y1;  // half-open pixel bounds
  double depth;
  double stripe_period;        // pixels
  bool vertical_stripes;
};

// Base colour for a depth: eight hue bands across [0, 80] m blended with a
// brightness ramp that decreases with distance.
inline std::array<double, 3> depth_colour(double depth) {
  static constexpr std::array<std::array<double, 3>, 8> kBands{{
      {0.95, 0.20, 0.15}, {0.95, 0.60, 0.10}, {0.85, 0.90, 0.15}, {0.30, 0.85, 0.25},
      {0.15, 0.75, 0.80}, {0.20, 0.35, 0.90}, {0.55, 0.25, 0.85}, {0.45, 0.45, 0.50},
  }};
  double t = depth / kSceneMaxDepth;
  t = std::clamp(t, 0.0, 1.0);
  const auto band = std::min<std::size_t>(7, static_cast<std::size_t>(std::floor(t * 8.0)));
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = 0.6 * kBands[band][k] + 0.4 * (1.0 - t);
  return c;
}

// Renders rectangles in the given order (callers pass far-to-near) over the
// background; later rectangles overwrite earlier ones.
inline Sample render_scene(const std::vector<SceneRect>& rects, double background_depth,
                           std::size_t height, std::size_t width, double noise_sigma,
                           Rng& rng) {
  const std::size_t npix = height * width;
  std::vector<double> depth(npix, background_depth);
  std::vector<double> rgb(3 * npix);
  const auto bg = depth_colour(background_depth);
  for (std::size_t k = 0; k < 3; ++k) {
    std::fill(rgb.begin() + k * npix, rgb.begin() + (k + 1) * npix, bg[k]);
  }
  for (const SceneRect& r : rects) {
    const auto c = depth_colour(r.depth);
    for (std::size_t y = r.y0; y < std::min(r.y1, height); ++y) {
      for (std::size_t x = r.x0; x < std::min(r.x1, width); ++x) {
        const double along = static_cast<double>(r.vertical_stripes ? x - r.x0 : y - r.y0);
        const double phase = along / r.stripe_period;
        const double stripe = (phase - std::floor(phase)) < 0.5 ? 0.04 : -0.04;
        depth[y * width + x] = r.depth;
        for (std::size_t k = 0; k < 3; ++k) rgb[k * npix + y * width + x] = c[k] + stripe;
      }
    }
  }
  for (double& v : rgb) v = std::clamp(v + noise_sigma * rng.normal(), 0.0, 1.0);

  Sample s;
  s.image = Tensor::from(Shape{1, 3, height, width}, std::move(rgb));
  s.depth_gt = Tensor::from(Shape{1, 1, height, width}, std::move(depth));
  s.mask.assign(npix, 1);
  return s;
}

inline Sample generate(const SceneSpec& spec, std::size_t height, std::size_t width) {
  spec.validate();
  if (height == 0 || width == 0 || height % 12 != 0 || width % 12 != 0) {
    throw ConfigError("generate: " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by 12");
  }
  Rng rng(mix_seed(spec.seed, 0xD47A));
  std::vector<SceneRect> rects;
  for (int i = 0; i < spec.n_objects; ++i) {
    SceneRect r{};
    const std::size_t rw = width / 8 + rng.below(static_cast<std::uint32_t>(width * 3 / 8 + 1));
    const std::size_t rh = height / 6 + rng.below(static_cast<std::uint32_t>(height / 3 + 1));
    r.x0 = rng.below(static_cast<std::uint32_t>(width - std::min(rw, width) + 1));
    r.y0 = rng.below(static_cast<std::uint32_t>(height - std::min(rh, height) + 1));
    r.x1 = r.x0 + rw;
    r.y1 = r.y0 + rh;
    r.depth = rng.uniform(spec.min_depth, spec.max_depth);
    r.stripe_period = 2.0 + static_cast<double>(rng.below(6));
    r.vertical_stripes = rng.below(2) == 0;
    rects.push_back(r);
  }
  std::stable_sort(rects.begin(), rects.end(),
                   [](const SceneRect& a, const SceneRect& b) { return a.depth > b.depth; });
  return render_scene(rects, spec.background_depth, height, width, spec.noise_sigma, rng);
}

}  // namespace pmpd
