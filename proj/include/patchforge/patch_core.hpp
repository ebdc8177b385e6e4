#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patchforge/detection.hpp"
#include "patchforge/image.hpp"

namespace patchforge {

// The optimized perturbation: H x W x 3, values in [0, 1].
struct PatchImage {
  Image pixels;
  bool requires_grad = true;

  int height() const noexcept { return pixels.height(); }
  int width() const noexcept { return pixels.width(); }

  // Projection onto the feasible set; applied after every optimizer step.
  void project() { pixels.clamp(0.0, 1.0); }

  static PatchImage random_uniform(int height, int width, std::uint64_t seed);
  static PatchImage constant(int height, int width, double value);
};

// Benign image the patch is steered towards; same shape as the patch.
struct GuideImage {
  Image pixels;
};

struct LossWeights {
  double alpha = 1.0;  // detection
  double beta = 4.0;   // similarity
  double gamma = 0.5;  // total variation

  void validate() const;
};

struct LossBreakdown {
  double l_det = 0.0;
  double l_sim = 0.0;
  double l_tv = 0.0;
  double l_total = 0.0;
};

// Added under the square root of each total-variation term.
inline constexpr double kTvEpsilon = 1e-8;

// ((1/n) sum |P - N|)^2 over all n = H*W*C scalar elements.
double similarity_loss(const Image& patch, const Image& guide);
// grad += upstream * d(similarity_loss)/d(patch)
void similarity_loss_backward(const Image& patch, const Image& guide, double upstream, Image& grad);

// Sum over (i, j) with i+1 < H, j+1 < W and over channels of
// sqrt(dy^2 + dx^2 + eps) - sqrt(eps); exactly zero on a constant patch.
double tv_loss(const Image& patch);
void tv_loss_backward(const Image& patch, double upstream, Image& grad);

// Mean over images of the mean over selected detections of
// objectness * P(person). Images with no selected detections contribute 0.
double detection_loss(std::span<const std::vector<Detection>> per_image, int person_class);

struct DetectionGrad {
  double d_objectness = 0.0;
  double d_class_prob = 0.0;  // w.r.t. the person-class probability
};
std::vector<std::vector<DetectionGrad>> detection_loss_backward(
    std::span<const std::vector<Detection>> per_image, int person_class, double upstream);

LossBreakdown total_loss(const PatchImage& patch, const GuideImage& guide,
                         std::span<const std::vector<Detection>> per_image, const LossWeights& weights,
                         int person_class);

// Gradient of the similarity and TV terms (weighted) w.r.t. patch pixels.
// The detection term's gradient flows through the renderer and detector.
void regularizer_backward(const PatchImage& patch, const GuideImage& guide, const LossWeights& weights,
                          Image& grad);

}  // namespace patchforge
