#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchforge/detection.hpp"
#include "patchforge/image.hpp"
#include "patchforge/nn.hpp"
#include "patchforge/patch_core.hpp"

namespace patchforge {

struct DetectorHandle {
  std::string name;
  int person_class_index = 0;
  double conf_threshold = 0.5;
  int input_size = 416;
};

// A frozen one-stage detector loaded from a darknet cfg + weights pair.
// Immutable after load; forward passes are pure and may run concurrently.
class Detector {
 public:
  struct Forward {
    std::vector<Detection> detections;  // every raw prediction, no NMS
    nn::Network::Trace trace;
  };

  Detector(DetectorHandle handle, nn::Network network, std::vector<std::string> class_names = {},
           std::string fingerprint = {});

  static Detector load(DetectorHandle handle, const std::filesystem::path& cfg_path,
                       const std::filesystem::path& weights_path, const std::filesystem::path& names_path = {});

  const DetectorHandle& handle() const noexcept { return handle_; }
  const nn::Network& network() const noexcept { return network_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  // Identifies the weights the detector was loaded from (SHA-256 hex when
  // loaded from disk).
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  int num_classes() const noexcept { return num_classes_; }

  // Fixed grid x anchor count summed over all heads.
  std::size_t num_predictions() const noexcept { return num_predictions_; }

  Forward forward(const Image& image) const;
  std::vector<Detection> predict(const Image& image) const;

  // Gradient w.r.t. input pixels (H x W x 3) of sum_k grads[k] . (objectness_k, P_k(person)).
  Image backward(const Forward& fwd, std::span<const Detection> selected, std::span<const DetectionGrad> grads) const;

 private:
  struct Head {
    std::size_t layer = 0;
    std::size_t first = 0;  // index of the head's first prediction
    int grid_h = 0;
    int grid_w = 0;
    int anchors = 0;
    int classes = 0;
  };

  void locate(std::size_t source, const Head*& head, int& anchor, int& cell) const;

  DetectorHandle handle_;
  nn::Network network_;
  std::vector<std::string> class_names_;
  std::string fingerprint_;
  std::vector<Head> heads_;
  std::size_t num_predictions_ = 0;
  int num_classes_ = 0;
};

nn::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const nn::Tensor& tensor);

// Objectness above the threshold; otherwise the single most confident
// prediction so the detection term never saturates at zero mid-attack.
std::vector<Detection> select_attack_targets(std::span<const Detection> detections, const DetectorHandle& handle);

// Greedy NMS over the person class, scores = objectness * P(person).
std::vector<Detection> non_max_suppression(std::span<const Detection> detections, int cls, double conf_threshold,
                                           double iou_threshold);

// Post-processed inference used for evaluation (never inside the attack loss).
std::vector<Detection> detect(const Detector& detector, const Image& image, double iou_nms = 0.45);

// One line per detection: image_id class score x_min y_min x_max y_max,
// coordinates in input pixels.
std::string format_detections(const std::string& image_id, std::span<const Detection> detections, int cls,
                              int input_size);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

}  // namespace patchforge
