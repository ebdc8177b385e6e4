#pragma once

#include <cstdint>
#include <vector>

#include "patchforge/renderer.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

// Seeded generator of 416x416 scenes with stylized "person" figures
// (head, torso, arms, legs) among clutter shapes. Used to train the
// built-in toy detector and as the desk-scale attack dataset.
struct SyntheticSceneConfig {
  int persons_min = 1;
  int persons_max = 3;
  double height_min = 150.0;  // person height in pixels
  double height_max = 300.0;
  int clutter_min = 4;
  int clutter_max = 10;
  // Probability that a person's torso is covered by a random occluder
  // square. Training-time augmentation only; the box is unchanged.
  double occluder_prob = 0.0;
};

Scene make_synthetic_scene(Rng& rng, const SyntheticSceneConfig& cfg = {});
std::vector<Scene> make_synthetic_dataset(int count, std::uint64_t seed, const SyntheticSceneConfig& cfg = {});

}  // namespace patchforge
