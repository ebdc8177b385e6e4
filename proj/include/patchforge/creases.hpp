#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchforge/image.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/sampling.hpp"

namespace patchforge {

inline constexpr double kMaxCreaseComponent = 5.0;

struct PatchDims {
  int width = 0;
  int height = 0;
};

// A single fabric crease: pixels are pushed along `dx, dy`, most strongly
// on the line through the anchor in that direction.
struct Crease {
  double x0 = 0.0;
  double y0 = 0.0;
  double dx = 0.0;
  double dy = 0.0;

  // Throws unless the anchor lies inside `dims` and |dx|, |dy| <= 5.
  void validate(PatchDims dims) const;
};

struct CreaseFieldConfig {
  int creases_min = 1;
  int creases_max = 5;
  std::uint64_t rng_seed = 0;

  void validate() const;
  static CreaseFieldConfig none() { return {0, 0, 0}; }
};

// 1 - sin^2(theta) * |p - anchor|^2 / (width^2 + height^2), where theta is the
// angle between (p - anchor) and the crease vector. Defined as 1 at the anchor.
double crease_multiplier(double x, double y, const Crease& crease, PatchDims dims);

// Per-pixel displacement summed over all creases.
void crease_displacement(double x, double y, std::span<const Crease> creases, PatchDims dims, double& out_dx,
                         double& out_dy);

// Inverse warp: output(x, y) samples input at (x, y) - displacement(x, y).
SampleGrid crease_grid(PatchDims dims, std::span<const Crease> creases);

Image apply_creases(const Image& patch, std::span<const Crease> creases);
void apply_creases_backward(PatchDims dims, std::span<const Crease> creases, const Image& grad_output,
                            Image& grad_input);

std::vector<Crease> sample_crease_field(const CreaseFieldConfig& config, PatchDims dims);
std::vector<Crease> sample_crease_field(const CreaseFieldConfig& config, PatchDims dims, Rng& rng);

// Plain-text record: a "seed <n>" line followed by one "crease x0 y0 dx dy" line each.
std::string serialize_creases(std::span<const Crease> creases, std::uint64_t seed);
std::vector<Crease> parse_creases(const std::string& text, std::uint64_t* seed = nullptr);

}  // namespace patchforge
