#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchforge/detection.hpp"
#include "patchforge/renderer.hpp"

namespace patchforge {

struct DatasetEntry {
  std::filesystem::path image;
  std::filesystem::path label;  // empty when the image has no label file
};

// Images paired with "class cx cy w h" label files by file stem.
struct DatasetIndex {
  std::vector<DatasetEntry> entries;
};

DatasetIndex index_dataset(const std::filesystem::path& images_dir, const std::filesystem::path& labels_dir);

// Throws Error(data) naming file and line on malformed input.
std::vector<BoundingBox> parse_label_file(const std::filesystem::path& path);
std::vector<BoundingBox> parse_labels(const std::string& text, const std::string& origin);
std::string format_labels(std::span<const BoundingBox> boxes);

// Aspect-preserving resize onto a square canvas padded with 0.5 gray.
struct LetterboxGeometry {
  int target = kDetectorInputSize;
  int src_width = 0;
  int src_height = 0;
  int new_width = 0;
  int new_height = 0;
  int pad_x = 0;
  int pad_y = 0;

  BoundingBox map_box(const BoundingBox& b) const;
};

LetterboxGeometry letterbox_geometry(int src_width, int src_height, int target = kDetectorInputSize);
Scene letterbox(const Image& image, std::span<const BoundingBox> boxes, int target = kDetectorInputSize);

struct IngestResult {
  std::vector<Scene> scenes;
  int skipped = 0;  // unreadable images
};

// Loads and letterboxes every entry. More than 10% unreadable images aborts.
IngestResult ingest_dataset(const std::filesystem::path& images_dir, const std::filesystem::path& labels_dir,
                            int target = kDetectorInputSize);

// Writes scenes as PNG + label files, named by index (used for synthetic sets).
void write_dataset(std::span<const Scene> scenes, const std::filesystem::path& images_dir,
                   const std::filesystem::path& labels_dir);

}  // namespace patchforge
