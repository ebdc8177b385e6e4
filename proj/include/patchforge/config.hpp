#pragma once

#include <filesystem>
#include <string>

#include "patchforge/trainer.hpp"

namespace patchforge {

// JSON encodings of the configuration records. Decoding rejects unknown
// keys with a usage error naming the offending key path.
std::string attack_config_to_json(const AttackConfig& cfg, int indent = -1);
AttackConfig attack_config_from_json(const std::string& text);

struct DetectorSpec {
  std::string name = "toy";
  std::filesystem::path cfg;
  std::filesystem::path weights;
  std::filesystem::path names;
  int person_class_index = 0;
  double conf_threshold = 0.5;
  int input_size = kDetectorInputSize;
  double iou_nms = 0.45;

  DetectorHandle handle() const;
};

struct DatasetSpec {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::string split;  // optional subdirectory of both images and labels
  // When count > 0 and no image directory is given, scenes come from the
  // built-in synthetic generator.
  int synthetic_count = 0;
  std::uint64_t synthetic_seed = 0;

  std::filesystem::path images_dir() const;
  std::filesystem::path labels_dir() const;
};

struct RunConfig {
  AttackConfig attack;
  DetectorSpec detector;
  DatasetSpec dataset;
  std::filesystem::path guide_image;
  std::filesystem::path output_dir = "run";
};

// Relative paths are resolved against the config file's directory. Every
// referenced path must exist.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir);
std::string run_config_to_json(const RunConfig& cfg);
void check_run_paths(const RunConfig& cfg);

// Dotted-key overrides such as "attack.lr=0.01" applied on top of the
// file values.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace patchforge
