#include "patchforge/eot.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "patchforge/error.hpp"

namespace patchforge {

void EOTConfig::validate() const {
  if (!(rotation_deg >= 0.0)) throw Error(ErrorCategory::config, "eot.rotation_deg must be >= 0");
  if (!(noise_amp >= 0.0)) throw Error(ErrorCategory::config, "eot.noise_amp must be >= 0");
  if (!(brightness_amp >= 0.0)) throw Error(ErrorCategory::config, "eot.brightness_amp must be >= 0");
  if (!(contrast_lo > 0.0 && contrast_lo <= contrast_hi)) {
    throw Error(ErrorCategory::config, "eot.contrast range must satisfy 0 < lo <= hi");
  }
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw Error(ErrorCategory::config, "eot.scale range must satisfy 0 < lo <= hi");
  }
}

EOTConfig EOTConfig::identity() {
  EOTConfig c;
  c.rotation_deg = 0.0;
  c.noise_amp = 0.0;
  c.contrast_lo = c.contrast_hi = 1.0;
  c.brightness_amp = 0.0;
  c.scale_lo = c.scale_hi = 1.0;
  return c;
}

bool SampledTransform::is_identity() const {
  const bool no_noise = noise_field.empty() ||
                        std::all_of(noise_field.data().begin(), noise_field.data().end(),
                                    [](double v) { return v == 0.0; });
  return angle_deg == 0.0 && scale_mult == 1.0 && contrast == 1.0 && brightness == 0.0 && no_noise &&
         creases.empty();
}

std::string SampledTransform::describe() const {
  std::ostringstream os;
  os << "angle=" << angle_deg << " scale=" << scale_mult << " contrast=" << contrast
     << " brightness=" << brightness << " creases=" << creases.size();
  return os.str();
}

SampledTransform sample_transform(const EOTConfig& eot, const CreaseFieldConfig& creases, PatchDims dims) {
  Rng rng = Rng::derive(eot.rng_seed, {creases.rng_seed});
  return sample_transform(eot, creases, dims, rng);
}

SampledTransform sample_transform(const EOTConfig& eot, const CreaseFieldConfig& creases, PatchDims dims,
                                  Rng& rng) {
  eot.validate();
  creases.validate();
  SampledTransform t;
  t.angle_deg = eot.rotation_deg > 0.0 ? rng.uniform(-eot.rotation_deg, eot.rotation_deg) : 0.0;
  t.scale_mult = eot.scale_hi > eot.scale_lo ? rng.uniform(eot.scale_lo, eot.scale_hi) : eot.scale_lo;
  t.contrast = eot.contrast_hi > eot.contrast_lo ? rng.uniform(eot.contrast_lo, eot.contrast_hi) : eot.contrast_lo;
  t.brightness = eot.brightness_amp > 0.0 ? rng.uniform(-eot.brightness_amp, eot.brightness_amp) : 0.0;
  if (eot.noise_amp > 0.0) {
    t.noise_field = Image(dims.height, dims.width, 3);
    for (auto& v : t.noise_field.data()) v = rng.uniform(-eot.noise_amp, eot.noise_amp);
  }
  t.creases = sample_crease_field(creases, dims, rng);
  return t;
}

SampleGrid rotation_grid(PatchDims dims, double angle_deg) {
  SampleGrid grid(dims.height, dims.width, dims.height, dims.width);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a);
  const double sa = std::sin(a);
  const double cx = (dims.width - 1) / 2.0;
  const double cy = (dims.height - 1) / 2.0;
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      // Inverse map of a counter-clockwise (on screen) rotation.
      const double rx = x - cx;
      const double ry = y - cy;
      const double sx = ca * rx - sa * ry + cx;
      const double sy = sa * rx + ca * ry + cy;
      grid.tap(y, x) = bilinear_tap(sx, sy, dims.width, dims.height);
    }
  }
  return grid;
}

Image rotate(const Image& patch, double angle_deg) {
  if (angle_deg == 0.0) return patch;
  return rotation_grid({patch.width(), patch.height()}, angle_deg).apply(patch);
}

static void check_noise(const Image& patch, const SampledTransform& t) {
  if (!t.noise_field.empty()) require_same_shape(patch, t.noise_field, "apply_transform noise field");
}

static Image geometric_part(const Image& patch, const SampledTransform& t) {
  Image warped = apply_creases(patch, t.creases);
  return rotate(warped, t.angle_deg);
}

Image apply_transform(const Image& patch, const SampledTransform& t) {
  check_noise(patch, t);
  Image out = geometric_part(patch, t);
  const bool has_noise = !t.noise_field.empty();
  auto px = out.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double noise = has_noise ? t.noise_field[i] : 0.0;
    px[i] = std::clamp(t.contrast * px[i] + t.brightness + noise, 0.0, 1.0);
  }
  return out;
}

void apply_transform_backward(const Image& patch, const SampledTransform& t, const Image& grad_output,
                              Image& grad_input) {
  check_noise(patch, t);
  require_same_shape(patch, grad_output, "apply_transform_backward");
  const PatchDims dims{patch.width(), patch.height()};
  const Image rotated = geometric_part(patch, t);
  const bool has_noise = !t.noise_field.empty();

  Image g_rot(patch.height(), patch.width(), patch.channels());
  for (std::size_t i = 0; i < g_rot.size(); ++i) {
    const double noise = has_noise ? t.noise_field[i] : 0.0;
    const double pre = t.contrast * rotated[i] + t.brightness + noise;
    g_rot[i] = (pre >= 0.0 && pre <= 1.0) ? t.contrast * grad_output[i] : 0.0;
  }

  Image g_warp;
  if (t.angle_deg == 0.0) {
    g_warp = std::move(g_rot);
  } else {
    g_warp = Image(patch.height(), patch.width(), patch.channels());
    rotation_grid(dims, t.angle_deg).backward(g_rot, g_warp);
  }
  apply_creases_backward(dims, t.creases, g_warp, grad_input);
}

}  // namespace patchforge
