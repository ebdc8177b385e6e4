#include "patchforge/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "patchforge/error.hpp"
#include "patchforge/sampling.hpp"

namespace patchforge {

void RenderConfig::validate() const {
  if (!(scale > 0.0)) throw Error(ErrorCategory::config, "render.scale must be > 0");
}

int patch_side_for(const BoundingBox& box, int image_height, double scale, double scale_mult) {
  return static_cast<int>(std::lround(scale * scale_mult * box.h * image_height));
}

RenderResult paste_patch(const Scene& scene, const Image& transformed, double scale_mult, const RenderConfig& cfg) {
  cfg.validate();
  RenderResult out{scene, {}, 0};
  Image& img = out.scene.image;
  const int H = img.height();
  const int W = img.width();
  std::map<int, Image> resized_by_side;

  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const BoundingBox& box = scene.boxes[b];
    if (box.class_id != cfg.person_class) continue;
    const int side = patch_side_for(box, H, cfg.scale, scale_mult);
    if (side < 2) {
      ++out.skipped;
      continue;
    }
    const double cx = box.cx * W;
    const double cy = (box.cy + cfg.vertical_offset * box.h) * H;
    PasteRect rect{static_cast<int>(std::lround(cx - side / 2.0)), static_cast<int>(std::lround(cy - side / 2.0)),
                   side, static_cast<int>(b)};
    auto it = resized_by_side.find(side);
    if (it == resized_by_side.end()) {
      it = resized_by_side.emplace(side, resize_bilinear(transformed, side, side)).first;
    }
    const Image& src = it->second;
    for (int v = std::max(0, -rect.y0); v < side && rect.y0 + v < H; ++v) {
      for (int u = std::max(0, -rect.x0); u < side && rect.x0 + u < W; ++u) {
        for (int c = 0; c < img.channels(); ++c) img.at(rect.y0 + v, rect.x0 + u, c) = src.at(v, u, c);
      }
    }
    out.rects.push_back(rect);
  }
  return out;
}

void paste_patch_backward(const RenderResult& rendered, const Image& grad_scene, Image& grad_transformed) {
  require_same_shape(rendered.scene.image, grad_scene, "paste_patch_backward");
  if (grad_transformed.empty()) {
    throw Error(ErrorCategory::shape, "paste_patch_backward: grad_transformed must be pre-sized to the patch");
  }
  const int H = grad_scene.height();
  const int W = grad_scene.width();
  const int C = grad_scene.channels();

  // Owner of each pixel: index into rects of the last paste covering it.
  std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);
  for (std::size_t r = 0; r < rendered.rects.size(); ++r) {
    const auto& rect = rendered.rects[r];
    for (int y = std::max(0, rect.y0); y < std::min(H, rect.y0 + rect.side); ++y) {
      for (int x = std::max(0, rect.x0); x < std::min(W, rect.x0 + rect.side); ++x) {
        owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(r);
      }
    }
  }

  std::map<int, Image> grad_by_side;
  for (std::size_t r = 0; r < rendered.rects.size(); ++r) {
    const auto& rect = rendered.rects[r];
    Image* g = nullptr;
    for (int y = std::max(0, rect.y0); y < std::min(H, rect.y0 + rect.side); ++y) {
      for (int x = std::max(0, rect.x0); x < std::min(W, rect.x0 + rect.side); ++x) {
        if (owner[static_cast<std::size_t>(y) * W + x] != static_cast<int>(r)) continue;
        if (!g) {
          auto it = grad_by_side.find(rect.side);
          if (it == grad_by_side.end()) it = grad_by_side.emplace(rect.side, Image(rect.side, rect.side, C)).first;
          g = &it->second;
        }
        for (int c = 0; c < C; ++c) g->at(y - rect.y0, x - rect.x0, c) += grad_scene.at(y, x, c);
      }
    }
  }

  const int ph = grad_transformed.height();
  const int pw = grad_transformed.width();
  for (const auto& [side, g] : grad_by_side) resize_grid(ph, pw, side, side).backward(g, grad_transformed);
}

RenderResult render(const Scene& scene, const PatchImage& patch, const SampledTransform& t, const RenderConfig& cfg) {
  return paste_patch(scene, apply_transform(patch.pixels, t), t.scale_mult, cfg);
}

void render_backward(const RenderResult& rendered, const PatchImage& patch, const SampledTransform& t,
                     const Image& grad_scene, Image& grad_patch) {
  if (rendered.rects.empty()) return;
  Image g_transformed(patch.height(), patch.width(), patch.pixels.channels());
  paste_patch_backward(rendered, grad_scene, g_transformed);
  if (grad_patch.empty()) grad_patch = Image(patch.height(), patch.width(), patch.pixels.channels());
  apply_transform_backward(patch.pixels, t, g_transformed, grad_patch);
}

std::string describe_rects(const RenderResult& rendered) {
  std::ostringstream os;
  for (const auto& r : rendered.rects) os << r.x0 << " " << r.y0 << " " << r.side << " " << r.box_index << "\n";
  return os.str();
}

}  // namespace patchforge
