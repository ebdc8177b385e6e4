#pragma once

#include <cstddef>
#include <vector>

namespace patchforge {

// Normalized centre-format box. Coordinates are fractions of the image size.
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  int class_id = 0;

  double x_min() const noexcept { return cx - w / 2.0; }
  double y_min() const noexcept { return cy - h / 2.0; }
  double x_max() const noexcept { return cx + w / 2.0; }
  double y_max() const noexcept { return cy + h / 2.0; }
};

double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

// One raw detector prediction.
struct Detection {
  BoundingBox box;
  double objectness = 0.0;
  std::vector<double> class_probs;
  // Position in the detector's raw prediction list; routes gradients from
  // objectness/class_probs back through the forward pass.
  std::size_t source = 0;

  double class_prob(int cls) const {
    return cls >= 0 && static_cast<std::size_t>(cls) < class_probs.size() ? class_probs[cls] : 0.0;
  }
  double score(int cls) const { return objectness * class_prob(cls); }
};

}  // namespace patchforge
