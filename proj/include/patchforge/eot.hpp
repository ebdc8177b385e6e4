#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchforge/creases.hpp"
#include "patchforge/image.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/sampling.hpp"

namespace patchforge {

// Distribution of rigid and appearance distortions drawn per training step.
struct EOTConfig {
  double rotation_deg = 20.0;
  double noise_amp = 0.1;
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;
  double brightness_amp = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  std::uint64_t rng_seed = 0;

  void validate() const;
  // Degenerate distribution: every draw is the identity.
  static EOTConfig identity();
};

struct SampledTransform {
  double angle_deg = 0.0;
  double scale_mult = 1.0;   // consumed by the renderer
  Image noise_field;         // H x W x 3, empty means no noise
  double contrast = 1.0;
  double brightness = 0.0;
  std::vector<Crease> creases;

  bool is_identity() const;
  std::string describe() const;
};

SampledTransform sample_transform(const EOTConfig& eot, const CreaseFieldConfig& creases, PatchDims dims);
SampledTransform sample_transform(const EOTConfig& eot, const CreaseFieldConfig& creases, PatchDims dims, Rng& rng);

// Rotation about the patch centre, bilinear, clamp-to-edge. Positive angles
// turn the content counter-clockwise as displayed (y axis pointing down).
SampleGrid rotation_grid(PatchDims dims, double angle_deg);
Image rotate(const Image& patch, double angle_deg);

// creases -> rotation -> clamp(contrast * p + brightness + noise, 0, 1)
Image apply_transform(const Image& patch, const SampledTransform& t);
// grad_input += J^T grad_output, J evaluated at `patch`.
void apply_transform_backward(const Image& patch, const SampledTransform& t, const Image& grad_output,
                              Image& grad_input);

}  // namespace patchforge
