#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/creases.hpp"
#include "patchforge/detector.hpp"
#include "patchforge/eot.hpp"
#include "patchforge/patch_core.hpp"
#include "patchforge/renderer.hpp"

namespace patchforge {

enum class PatchInit { random_uniform, from_guide, gray };

const char* to_string(PatchInit init) noexcept;
PatchInit parse_patch_init(const std::string& name);

struct AttackConfig {
  LossWeights weights;
  double lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int epochs = 5;
  int batch_size = 8;
  RenderConfig render;
  EOTConfig eot;
  CreaseFieldConfig creases;
  PatchInit patch_init = PatchInit::random_uniform;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const AttackConfig&) const;
};

struct TrainLogRecord {
  int epoch = 0;
  int step = 0;  // global step index, starting at 0
  LossBreakdown breakdown;
  double wall_time = 0.0;  // seconds since the run (or resumed run) started
};

// Complete optimizer state; enough to continue a run bit-exactly.
struct TrainState {
  AttackConfig config;
  PatchImage patch;
  Image adam_m;
  Image adam_v;
  long long next_step = 0;  // global steps already taken
};

struct TrainControl {
  // Stop after this many global steps (negative: run to completion).
  long long stop_at_step = -1;
  std::function<void(const TrainLogRecord&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<TrainLogRecord> log;
  bool finished = false;
};

int steps_per_epoch(std::size_t dataset_size, int batch_size);

PatchImage initial_patch(const GuideImage& guide, const AttackConfig& cfg);
TrainState initial_state(const GuideImage& guide, const AttackConfig& cfg);

// Adam on the patch pixels followed by projection onto [0, 1].
void adam_step(TrainState& state, const Image& grad);

// Runs (or continues) the attack until `epochs` are done or the control
// asks to stop. The detector is only read.
TrainResult optimize_patch(std::span<const Scene> dataset, const Detector& detector, const GuideImage& guide,
                           TrainState state, const TrainControl& control = {});
TrainResult optimize_patch(std::span<const Scene> dataset, const Detector& detector, const GuideImage& guide,
                           const AttackConfig& cfg, const TrainControl& control = {});

inline constexpr const char* kCheckpointVersion = "patchforge-ckpt-1";

// Full-precision binary checkpoint with a trailing SHA-256 checksum.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// "epoch,step,l_det,l_sim,l_tv,l_total" with round-trip precision.
std::string loss_log_header();
std::string format_loss_record(const TrainLogRecord& record);
void write_loss_log(std::span<const TrainLogRecord> log, const std::filesystem::path& path);

}  // namespace patchforge
