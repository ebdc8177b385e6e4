#pragma once

#include <string>
#include <vector>

#include "patchforge/detection.hpp"
#include "patchforge/eot.hpp"
#include "patchforge/image.hpp"
#include "patchforge/patch_core.hpp"

namespace patchforge {

inline constexpr int kDetectorInputSize = 416;

struct Scene {
  Image image;  // kDetectorInputSize square, values in [0, 1]
  std::vector<BoundingBox> boxes;
  std::string source_path;
};

struct RenderConfig {
  double scale = 0.5;            // patch side relative to the box pixel height
  double vertical_offset = 0.0;  // fraction of the box height, positive is down
  int person_class = 0;          // only boxes of this class receive a patch

  void validate() const;
};

// Square region the patch was pasted into (unclipped image coordinates).
struct PasteRect {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
  int box_index = 0;
};

struct RenderResult {
  Scene scene;
  std::vector<PasteRect> rects;
  int skipped = 0;  // boxes whose patch side rounded below 2 px
};

int patch_side_for(const BoundingBox& box, int image_height, double scale, double scale_mult);

// Pastes an already-transformed patch over every person box, in list order.
RenderResult paste_patch(const Scene& scene, const Image& transformed, double scale_mult, const RenderConfig& cfg);

// Gradient of the rendered image w.r.t. the transformed patch. Only pixels
// that survive in the final image (last painter wins) contribute.
void paste_patch_backward(const RenderResult& rendered, const Image& grad_scene, Image& grad_transformed);

// Transform (creases, rotation, appearance) then paste.
RenderResult render(const Scene& scene, const PatchImage& patch, const SampledTransform& t, const RenderConfig& cfg);
void render_backward(const RenderResult& rendered, const PatchImage& patch, const SampledTransform& t,
                     const Image& grad_scene, Image& grad_patch);

// "x0 y0 side box_index" per line.
std::string describe_rects(const RenderResult& rendered);

}  // namespace patchforge
