#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/creases.hpp"
#include "patchforge/detector.hpp"
#include "patchforge/eot.hpp"
#include "patchforge/renderer.hpp"

namespace patchforge {

inline constexpr double kMatchIou = 0.5;

// Detector outputs on clean scenes, used as the reference boxes.
struct GroundTruth {
  std::string detector_name;
  std::string detector_fingerprint;
  std::vector<std::vector<BoundingBox>> boxes;  // one list per scene
};

GroundTruth build_ground_truth(const Detector& detector, std::span<const Scene> scenes, double iou_nms = 0.45);

// One scored prediction in one image.
struct ScoredBox {
  std::size_t image = 0;
  double score = 0.0;
  BoundingBox box;
};

struct ApResult {
  double ap = 0.0;                                 // in [0, 1]
  std::size_t true_positives = 0;
  std::size_t num_ground_truth = 0;
  std::vector<std::pair<double, double>> curve;  // (recall, precision) after each prediction
};

// All-point interpolated average precision at `iou_threshold`. Predictions
// are visited by descending score (stable on input order); each is compared
// with the ground truth box of highest IoU in its image and is a true
// positive only if that IoU reaches the threshold and the box is unclaimed.
// With no ground truth the AP is 1 when there are no predictions, else 0.
ApResult average_precision(std::span<const ScoredBox> predictions,
                           std::span<const std::vector<BoundingBox>> ground_truth,
                           double iou_threshold = kMatchIou);

enum class DefenseKind { jpeg, gaussian_noise, median_blur };

const char* to_string(DefenseKind kind) noexcept;
DefenseKind parse_defense_kind(const std::string& name);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::jpeg;
  double param = 90.0;  // JPEG quality, noise std on [0, 1], or odd median kernel
  std::uint64_t seed = 0;

  // Basic validity: quality in [1, 100], std >= 0, odd kernel >= 1.
  void validate() const;
  // Membership in the evaluation grids.
  void validate_grid() const;
  std::string describe() const;
};

// The evaluation grids. Median kernels 10 and 20 of the reference table are
// even and map to 11 and 21.
std::vector<DefenseConfig> defense_grid(DefenseKind kind);
int median_kernel_for_table_value(int value);

Image apply_defense(const Image& image, const DefenseConfig& defense);

// How the patch is transformed per evaluation image. Each image draws its
// own transform from `seed` and its index.
struct TransformStack {
  RenderConfig render;
  EOTConfig eot = EOTConfig::identity();
  CreaseFieldConfig creases = CreaseFieldConfig::none();
  std::uint64_t seed = 0;

  std::string describe() const;
};

struct EvalReport {
  std::string detector_name;
  double map_50 = 0.0;  // percent
  double asr = 0.0;     // 100 - map_50
  double recall = 0.0;  // percent of ground-truth boxes matched
  int n_images = 0;
  double scale = 0.5;
  bool creases = false;
  std::string transform_stack;
  std::optional<std::pair<std::string, double>> defense;
  std::string notes;
  double conf_threshold = 0.5;
  std::vector<std::pair<double, double>> pr_curve;
  std::vector<std::vector<Detection>> detections;  // filled when requested
};

struct EvalOptions {
  double iou_nms = 0.45;
  bool keep_detections = false;
};

// Renders the patch (if any), applies the defense (if any) to the whole
// image, runs post-processed inference and scores it against `truth`.
EvalReport evaluate_map(const Detector& detector, std::span<const Scene> scenes, const GroundTruth& truth,
                        const PatchImage* patch, const TransformStack& stack,
                        const std::optional<DefenseConfig>& defense, const EvalOptions& options = {});

struct SweepAxes {
  std::vector<double> scales;                       // empty: the stack's scale
  std::vector<bool> creases;                        // empty: the stack's creases setting
  std::vector<std::optional<DefenseConfig>> defenses;  // empty: no defense
};

// Cartesian grid over detectors x scales x creases x defenses.
std::vector<EvalReport> sweep(std::span<const Detector* const> detectors, std::span<const Scene> scenes,
                              const PatchImage* patch, const TransformStack& base, const SweepAxes& axes,
                              const CreaseFieldConfig& creases_on = {}, const EvalOptions& options = {});

std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);
void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
// Fixed-width text table of the same rows.
std::string summary_table(std::span<const EvalReport> reports);

// Minimal SVG line chart, e.g. a precision-recall curve or a sweep curve.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const std::pair<double, double>> points, double x_max, double y_max);

}  // namespace patchforge
