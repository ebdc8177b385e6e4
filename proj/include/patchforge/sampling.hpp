#pragma once

#include <array>
#include <vector>

#include "patchforge/image.hpp"

namespace patchforge {

// Four bilinear taps into a single-channel plane (pixel indices y * width + x).
struct Tap {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
};

// Bilinear tap at continuous pixel coordinate (x, y), pixel centers on
// integers, coordinates clamped to the edge pixels.
Tap bilinear_tap(double x, double y, int width, int height);

// A linear resampling operator: every output pixel is a bilinear blend of
// four input pixels, identically for every channel. Forward and adjoint
// (backward) apply the same taps, so gradients w.r.t. input pixels are exact.
class SampleGrid {
 public:
  SampleGrid() = default;
  SampleGrid(int in_height, int in_width, int out_height, int out_width);

  int in_height() const noexcept { return in_h_; }
  int in_width() const noexcept { return in_w_; }
  int out_height() const noexcept { return out_h_; }
  int out_width() const noexcept { return out_w_; }

  Tap& tap(int y, int x) { return taps_[static_cast<std::size_t>(y) * out_w_ + x]; }
  const Tap& tap(int y, int x) const { return taps_[static_cast<std::size_t>(y) * out_w_ + x]; }

  Image apply(const Image& input) const;
  // grad_input += J^T grad_output
  void backward(const Image& grad_output, Image& grad_input) const;

 private:
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  std::vector<Tap> taps_;
};

// Half-pixel-centre bilinear resize map.
SampleGrid resize_grid(int in_height, int in_width, int out_height, int out_width);

Image resize_bilinear(const Image& input, int out_height, int out_width);

}  // namespace patchforge
