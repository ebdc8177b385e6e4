#include "patchforge/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "patchforge/error.hpp"

namespace patchforge {

Tap bilinear_tap(double x, double y, int width, int height) {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  Tap t;
  t.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  t.weight = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
  return t;
}

SampleGrid::SampleGrid(int in_height, int in_width, int out_height, int out_width)
    : in_h_(in_height), in_w_(in_width), out_h_(out_height), out_w_(out_width),
      taps_(static_cast<std::size_t>(out_height) * out_width) {}

Image SampleGrid::apply(const Image& input) const {
  if (input.height() != in_h_ || input.width() != in_w_) {
    throw Error(ErrorCategory::shape, "SampleGrid::apply: input " + input.shape_string() +
                                          " does not match grid input " + std::to_string(in_h_) +
                                          "x" + std::to_string(in_w_));
  }
  const int channels = input.channels();
  Image out(out_h_, out_w_, channels);
  const auto src = input.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < taps_.size(); ++p) {
    const Tap& t = taps_[p];
    for (int c = 0; c < channels; ++c) {
      double v = 0.0;
      for (int k = 0; k < 4; ++k) v += t.weight[k] * src[static_cast<std::size_t>(t.index[k]) * channels + c];
      dst[p * channels + c] = v;
    }
  }
  return out;
}

void SampleGrid::backward(const Image& grad_output, Image& grad_input) const {
  if (grad_output.height() != out_h_ || grad_output.width() != out_w_) {
    throw Error(ErrorCategory::shape, "SampleGrid::backward: gradient shape mismatch");
  }
  const int channels = grad_output.channels();
  if (grad_input.empty()) grad_input = Image(in_h_, in_w_, channels);
  const auto g = grad_output.data();
  auto gi = grad_input.data();
  for (std::size_t p = 0; p < taps_.size(); ++p) {
    const Tap& t = taps_[p];
    for (int c = 0; c < channels; ++c) {
      const double go = g[p * channels + c];
      if (go == 0.0) continue;
      for (int k = 0; k < 4; ++k) gi[static_cast<std::size_t>(t.index[k]) * channels + c] += t.weight[k] * go;
    }
  }
}

SampleGrid resize_grid(int in_height, int in_width, int out_height, int out_width) {
  SampleGrid grid(in_height, in_width, out_height, out_width);
  const double sy = static_cast<double>(in_height) / out_height;
  const double sx = static_cast<double>(in_width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_width; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      grid.tap(y, x) = bilinear_tap(src_x, src_y, in_width, in_height);
    }
  }
  return grid;
}

Image resize_bilinear(const Image& input, int out_height, int out_width) {
  return resize_grid(input.height(), input.width(), out_height, out_width).apply(input);
}

}  // namespace patchforge
