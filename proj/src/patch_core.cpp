#include "patchforge/patch_core.hpp"

#include <algorithm>
#include <cmath>

#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

PatchImage PatchImage::random_uniform(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  PatchImage p{Image(height, width, 3)};
  for (auto& v : p.pixels.data()) v = rng.uniform();
  return p;
}

PatchImage PatchImage::constant(int height, int width, double value) {
  return PatchImage{Image(height, width, 3, value)};
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw Error(ErrorCategory::config, "loss weights must be non-negative");
  }
}

double similarity_loss(const Image& patch, const Image& guide) {
  require_same_shape(patch, guide, "similarity_loss");
  if (patch.empty()) return 0.0;
  const auto p = patch.data();
  const auto g = guide.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - g[i]);
  const double mean = sum / static_cast<double>(p.size());
  return mean * mean;
}

void similarity_loss_backward(const Image& patch, const Image& guide, double upstream, Image& grad) {
  require_same_shape(patch, guide, "similarity_loss_backward");
  if (grad.empty()) grad = Image(patch.height(), patch.width(), patch.channels());
  require_same_shape(patch, grad, "similarity_loss_backward");
  if (patch.empty()) return;
  const auto p = patch.data();
  const auto g = guide.data();
  const double n = static_cast<double>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - g[i]);
  const double scale = upstream * 2.0 * (sum / n) / n;
  auto out = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - g[i];
    out[i] += d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
  }
}

static void require_tv_shape(const Image& patch) {
  if (patch.height() < 2 || patch.width() < 2) {
    throw Error(ErrorCategory::shape, "tv_loss needs at least 2x2 pixels, got " + patch.shape_string());
  }
}

double tv_loss(const Image& patch) {
  require_tv_shape(patch);
  const double floor_term = std::sqrt(kTvEpsilon);
  double total = 0.0;
  for (int c = 0; c < patch.channels(); ++c) {
    for (int i = 0; i + 1 < patch.height(); ++i) {
      for (int j = 0; j + 1 < patch.width(); ++j) {
        const double p = patch.at(i, j, c);
        const double a = patch.at(i + 1, j, c) - p;
        const double b = patch.at(i, j + 1, c) - p;
        total += std::sqrt(a * a + b * b + kTvEpsilon) - floor_term;
      }
    }
  }
  return total;
}

void tv_loss_backward(const Image& patch, double upstream, Image& grad) {
  require_tv_shape(patch);
  if (grad.empty()) grad = Image(patch.height(), patch.width(), patch.channels());
  require_same_shape(patch, grad, "tv_loss_backward");
  for (int c = 0; c < patch.channels(); ++c) {
    for (int i = 0; i + 1 < patch.height(); ++i) {
      for (int j = 0; j + 1 < patch.width(); ++j) {
        const double p = patch.at(i, j, c);
        const double a = patch.at(i + 1, j, c) - p;
        const double b = patch.at(i, j + 1, c) - p;
        const double t = std::sqrt(a * a + b * b + kTvEpsilon);
        grad.at(i + 1, j, c) += upstream * a / t;
        grad.at(i, j + 1, c) += upstream * b / t;
        grad.at(i, j, c) -= upstream * (a + b) / t;
      }
    }
  }
}

double detection_loss(std::span<const std::vector<Detection>> per_image, int person_class) {
  if (per_image.empty()) throw Error(ErrorCategory::data, "detection_loss: empty batch");
  double total = 0.0;
  for (const auto& dets : per_image) {
    if (dets.empty()) continue;
    double sum = 0.0;
    for (const auto& d : dets) sum += d.objectness * d.class_prob(person_class);
    total += sum / static_cast<double>(dets.size());
  }
  return total / static_cast<double>(per_image.size());
}

std::vector<std::vector<DetectionGrad>> detection_loss_backward(
    std::span<const std::vector<Detection>> per_image, int person_class, double upstream) {
  if (per_image.empty()) throw Error(ErrorCategory::data, "detection_loss_backward: empty batch");
  std::vector<std::vector<DetectionGrad>> grads(per_image.size());
  const double n = static_cast<double>(per_image.size());
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const auto& dets = per_image[i];
    grads[i].resize(dets.size());
    if (dets.empty()) continue;
    const double scale = upstream / (n * static_cast<double>(dets.size()));
    for (std::size_t j = 0; j < dets.size(); ++j) {
      grads[i][j].d_objectness = scale * dets[j].class_prob(person_class);
      grads[i][j].d_class_prob = scale * dets[j].objectness;
    }
  }
  return grads;
}

LossBreakdown total_loss(const PatchImage& patch, const GuideImage& guide,
                         std::span<const std::vector<Detection>> per_image, const LossWeights& weights,
                         int person_class) {
  weights.validate();
  LossBreakdown out;
  out.l_det = detection_loss(per_image, person_class);
  out.l_sim = similarity_loss(patch.pixels, guide.pixels);
  out.l_tv = tv_loss(patch.pixels);
  out.l_total = weights.alpha * out.l_det + weights.beta * out.l_sim + weights.gamma * out.l_tv;
  return out;
}

void regularizer_backward(const PatchImage& patch, const GuideImage& guide, const LossWeights& weights,
                          Image& grad) {
  if (weights.beta != 0.0) similarity_loss_backward(patch.pixels, guide.pixels, weights.beta, grad);
  if (weights.gamma != 0.0) tv_loss_backward(patch.pixels, weights.gamma, grad);
}

}  // namespace patchforge
