#include "patchforge/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace patchforge {

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

Color jitter(Rng& rng, Color c, double amount) {
  for (auto& v : c) v = std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0);
  return c;
}

void fill_rect(Image& img, double x0, double y0, double x1, double y1, const Color& color) {
  const int xa = std::max(0, static_cast<int>(std::lround(x0)));
  const int ya = std::max(0, static_cast<int>(std::lround(y0)));
  const int xb = std::min(img.width(), static_cast<int>(std::lround(x1)));
  const int yb = std::min(img.height(), static_cast<int>(std::lround(y1)));
  for (int y = ya; y < yb; ++y)
    for (int x = xa; x < xb; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, const Color& color) {
  const int xa = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int ya = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int xb = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + rx)));
  const int yb = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = ya; y <= yb; ++y) {
    for (int x = xa; x <= xb; ++x) {
      const double u = (x - cx) / rx;
      const double v = (y - cy) / ry;
      if (u * u + v * v <= 1.0)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
    }
  }
}

void draw_clutter(Image& img, Rng& rng) {
  const int kind = rng.uniform_int(0, 3);
  const Color color = random_color(rng);
  const double cx = rng.uniform(0.0, img.width());
  const double cy = rng.uniform(0.0, img.height());
  switch (kind) {
    case 0: {  // box of any aspect
      const double w = rng.uniform(20.0, 160.0);
      const double h = rng.uniform(20.0, 160.0);
      fill_rect(img, cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, color);
      break;
    }
    case 1:  // blob
      fill_ellipse(img, cx, cy, rng.uniform(10.0, 70.0), rng.uniform(10.0, 70.0), color);
      break;
    case 2: {  // pole: tall and thin, person-like aspect without a head
      const double h = rng.uniform(120.0, 320.0);
      const double w = rng.uniform(8.0, 40.0);
      fill_rect(img, cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, color);
      break;
    }
    default: {  // headless torso-sized block on two stubs
      const double h = rng.uniform(100.0, 260.0);
      fill_rect(img, cx - 0.15 * h, cy - 0.3 * h, cx + 0.15 * h, cy + 0.1 * h, color);
      const Color legs = random_color(rng);
      fill_rect(img, cx - 0.13 * h, cy + 0.1 * h, cx - 0.02 * h, cy + 0.5 * h, legs);
      fill_rect(img, cx + 0.02 * h, cy + 0.1 * h, cx + 0.13 * h, cy + 0.5 * h, legs);
      break;
    }
  }
}

constexpr std::array<Color, 4> kSkinTones{{{0.96, 0.80, 0.69}, {0.87, 0.67, 0.50}, {0.63, 0.45, 0.30}, {0.40, 0.27, 0.18}}};

void draw_person(Image& img, double cx, double top, double h, Rng& rng) {
  const Color skin = jitter(rng, kSkinTones[rng.uniform_int(0, 3)], 0.05);
  const Color shirt = random_color(rng);
  const Color sleeves = jitter(rng, shirt, 0.08);
  const Color pants = random_color(rng);
  // legs
  fill_rect(img, cx - 0.13 * h, top + 0.55 * h, cx - 0.02 * h, top + h, pants);
  fill_rect(img, cx + 0.02 * h, top + 0.55 * h, cx + 0.13 * h, top + h, pants);
  // arms, then torso on top
  fill_rect(img, cx - 0.225 * h, top + 0.20 * h, cx - 0.15 * h, top + 0.52 * h, sleeves);
  fill_rect(img, cx + 0.15 * h, top + 0.20 * h, cx + 0.225 * h, top + 0.52 * h, sleeves);
  fill_rect(img, cx - 0.225 * h, top + 0.52 * h, cx - 0.15 * h, top + 0.58 * h, skin);
  fill_rect(img, cx + 0.15 * h, top + 0.52 * h, cx + 0.225 * h, top + 0.58 * h, skin);
  fill_rect(img, cx - 0.16 * h, top + 0.18 * h, cx + 0.16 * h, top + 0.57 * h, shirt);
  // neck and head
  fill_rect(img, cx - 0.03 * h, top + 0.14 * h, cx + 0.03 * h, top + 0.19 * h, skin);
  fill_ellipse(img, cx, top + 0.085 * h, 0.07 * h, 0.085 * h, skin);
}

void draw_occluder(Image& img, double cx, double cy, double side, Rng& rng) {
  const int x0 = static_cast<int>(std::lround(cx - side / 2));
  const int y0 = static_cast<int>(std::lround(cy - side / 2));
  const int n = static_cast<int>(std::lround(side));
  const int kind = rng.uniform_int(0, 2);
  const Color a = random_color(rng);
  const Color b = random_color(rng);
  const double period = rng.uniform(4.0, 24.0);
  const double angle = rng.uniform(0.0, 3.14159265358979);
  for (int v = 0; v < n; ++v) {
    const int y = y0 + v;
    if (y < 0 || y >= img.height()) continue;
    for (int u = 0; u < n; ++u) {
      const int x = x0 + u;
      if (x < 0 || x >= img.width()) continue;
      for (int c = 0; c < 3; ++c) {
        double value = a[c];
        if (kind == 0) {
          value = rng.uniform();
        } else if (kind == 1) {
          const double phase = (u * std::cos(angle) + v * std::sin(angle)) / period;
          value = (static_cast<long>(std::floor(phase)) % 2 == 0) ? a[c] : b[c];
        }
        img.at(y, x, c) = value;
      }
    }
  }
}

}  // namespace

Scene make_synthetic_scene(Rng& rng, const SyntheticSceneConfig& cfg) {
  const int S = kDetectorInputSize;
  Scene scene;
  scene.image = Image(S, S, 3);
  const Color top = random_color(rng);
  const Color bottom = random_color(rng);
  for (int y = 0; y < S; ++y) {
    const double t = static_cast<double>(y) / (S - 1);
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = (1.0 - t) * top[c] + t * bottom[c];
  }
  const int clutter = rng.uniform_int(cfg.clutter_min, cfg.clutter_max);
  for (int i = 0; i < clutter; ++i) draw_clutter(scene.image, rng);

  const int persons = rng.uniform_int(cfg.persons_min, cfg.persons_max);
  for (int i = 0; i < persons; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double h = rng.uniform(cfg.height_min, cfg.height_max);
      const double w = 0.45 * h;
      const double cx = rng.uniform(w / 2, S - w / 2);
      const double topy = rng.uniform(0.0, S - h);
      BoundingBox box{cx / S, (topy + h / 2) / S, w / S, h / S, 0};
      const bool overlaps = std::any_of(scene.boxes.begin(), scene.boxes.end(),
                                        [&](const BoundingBox& b) { return iou(b, box) > 0.05; });
      if (overlaps) continue;
      draw_person(scene.image, cx, topy, h, rng);
      if (cfg.occluder_prob > 0.0 && rng.uniform() < cfg.occluder_prob) {
        const double side = rng.uniform(0.25, 0.6) * h;
        draw_occluder(scene.image, cx + rng.uniform(-0.1, 0.1) * h, topy + rng.uniform(0.35, 0.6) * h, side, rng);
      }
      scene.boxes.push_back(box);
      break;
    }
  }
  for (auto& v : scene.image.data()) v = std::clamp(v + rng.uniform(-0.03, 0.03), 0.0, 1.0);
  return scene;
}

std::vector<Scene> make_synthetic_dataset(int count, std::uint64_t seed, const SyntheticSceneConfig& cfg) {
  std::vector<Scene> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(i)});
    out.push_back(make_synthetic_scene(rng, cfg));
    out.back().source_path = "synthetic:" + std::to_string(seed) + ":" + std::to_string(i);
  }
  return out;
}

}  // namespace patchforge
