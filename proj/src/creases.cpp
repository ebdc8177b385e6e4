#include "patchforge/creases.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "patchforge/error.hpp"

namespace patchforge {

void Crease::validate(PatchDims dims) const {
  if (!(x0 >= 0.0 && x0 <= dims.width - 1 && y0 >= 0.0 && y0 <= dims.height - 1)) {
    throw Error(ErrorCategory::data, "crease anchor outside patch bounds");
  }
  if (!(std::abs(dx) <= kMaxCreaseComponent && std::abs(dy) <= kMaxCreaseComponent)) {
    throw Error(ErrorCategory::data, "crease vector component exceeds 5 pixels");
  }
}

void CreaseFieldConfig::validate() const {
  if (creases_min < 0 || creases_max < creases_min) {
    throw Error(ErrorCategory::config, "crease count range must satisfy 0 <= min <= max");
  }
}

double crease_multiplier(double x, double y, const Crease& crease, PatchDims dims) {
  if (dims.width <= 0 || dims.height <= 0) {
    throw Error(ErrorCategory::shape, "crease_multiplier: patch dimensions must be positive");
  }
  const double vnorm2 = crease.dx * crease.dx + crease.dy * crease.dy;
  if (vnorm2 == 0.0) throw Error(ErrorCategory::data, "crease_multiplier: zero-length crease vector");
  const double rx = x - crease.x0;
  const double ry = y - crease.y0;
  const double dist2 = rx * rx + ry * ry;
  if (dist2 == 0.0) return 1.0;
  const double cross = rx * crease.dy - ry * crease.dx;
  // sin^2(theta) * |r|^2 == cross^2 / |v|^2
  const double sin2_dist2 = cross * cross / vnorm2;
  const double diag2 = static_cast<double>(dims.width) * dims.width + static_cast<double>(dims.height) * dims.height;
  return 1.0 - sin2_dist2 / diag2;
}

void crease_displacement(double x, double y, std::span<const Crease> creases, PatchDims dims, double& out_dx,
                         double& out_dy) {
  out_dx = 0.0;
  out_dy = 0.0;
  for (const auto& c : creases) {
    if (c.dx == 0.0 && c.dy == 0.0) continue;
    const double m = crease_multiplier(x, y, c, dims);
    out_dx += c.dx * m;
    out_dy += c.dy * m;
  }
}

SampleGrid crease_grid(PatchDims dims, std::span<const Crease> creases) {
  for (const auto& c : creases) c.validate(dims);
  SampleGrid grid(dims.height, dims.width, dims.height, dims.width);
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      double dx = 0.0, dy = 0.0;
      crease_displacement(x, y, creases, dims, dx, dy);
      grid.tap(y, x) = bilinear_tap(x - dx, y - dy, dims.width, dims.height);
    }
  }
  return grid;
}

static PatchDims dims_of(const Image& img) { return {img.width(), img.height()}; }

Image apply_creases(const Image& patch, std::span<const Crease> creases) {
  if (patch.height() < 2 || patch.width() < 2) {
    throw Error(ErrorCategory::shape, "apply_creases: degenerate patch " + patch.shape_string());
  }
  if (creases.empty()) return patch;
  return crease_grid(dims_of(patch), creases).apply(patch);
}

void apply_creases_backward(PatchDims dims, std::span<const Crease> creases, const Image& grad_output,
                            Image& grad_input) {
  if (creases.empty()) {
    if (grad_input.empty()) grad_input = Image(grad_output.height(), grad_output.width(), grad_output.channels());
    auto gi = grad_input.data();
    const auto go = grad_output.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    return;
  }
  crease_grid(dims, creases).backward(grad_output, grad_input);
}

std::vector<Crease> sample_crease_field(const CreaseFieldConfig& config, PatchDims dims) {
  Rng rng(config.rng_seed);
  return sample_crease_field(config, dims, rng);
}

std::vector<Crease> sample_crease_field(const CreaseFieldConfig& config, PatchDims dims, Rng& rng) {
  config.validate();
  const int count = rng.uniform_int(config.creases_min, config.creases_max);
  std::vector<Crease> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Crease c;
    c.x0 = rng.uniform(0.0, dims.width - 1);
    c.y0 = rng.uniform(0.0, dims.height - 1);
    c.dx = rng.uniform(-kMaxCreaseComponent, kMaxCreaseComponent);
    c.dy = rng.uniform(-kMaxCreaseComponent, kMaxCreaseComponent);
    out.push_back(c);
  }
  return out;
}

std::string serialize_creases(std::span<const Crease> creases, std::uint64_t seed) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "seed " << seed << "\n";
  for (const auto& c : creases) os << "crease " << c.x0 << " " << c.y0 << " " << c.dx << " " << c.dy << "\n";
  return os.str();
}

std::vector<Crease> parse_creases(const std::string& text, std::uint64_t* seed) {
  std::istringstream is(text);
  std::string line;
  std::vector<Crease> out;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "seed") {
      std::uint64_t s = 0;
      if (!(ls >> s)) throw Error(ErrorCategory::data, "crease record line " + std::to_string(line_no) + ": bad seed");
      if (seed) *seed = s;
    } else if (tag == "crease") {
      Crease c;
      if (!(ls >> c.x0 >> c.y0 >> c.dx >> c.dy)) {
        throw Error(ErrorCategory::data, "crease record line " + std::to_string(line_no) + ": expected 4 numbers");
      }
      out.push_back(c);
    } else {
      throw Error(ErrorCategory::data, "crease record line " + std::to_string(line_no) + ": unknown tag '" + tag + "'");
    }
  }
  return out;
}

}  // namespace patchforge
