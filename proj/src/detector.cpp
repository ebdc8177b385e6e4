#include "patchforge/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <openssl/evp.h>

#include "patchforge/error.hpp"

namespace patchforge {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::string> read_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open class names file: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double ix = std::max(0.0, std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min()));
  const double iy = std::max(0.0, std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min()));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot read file for hashing: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

nn::Tensor image_to_tensor(const Image& image) {
  nn::Tensor t(image.channels(), image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) t.at(c, y, x) = image.at(y, x, c);
  return t;
}

Image tensor_to_image(const nn::Tensor& tensor) {
  Image img(tensor.h, tensor.w, tensor.c);
  for (int y = 0; y < tensor.h; ++y)
    for (int x = 0; x < tensor.w; ++x)
      for (int c = 0; c < tensor.c; ++c) img.at(y, x, c) = tensor.at(c, y, x);
  return img;
}

Detector::Detector(DetectorHandle handle, nn::Network network, std::vector<std::string> class_names,
                   std::string fingerprint)
    : handle_(std::move(handle)), network_(std::move(network)), class_names_(std::move(class_names)),
      fingerprint_(std::move(fingerprint)) {
  const auto& in = network_.input_shape();
  if (in.c != 3 || in.h != handle_.input_size || in.w != handle_.input_size) {
    throw Error(ErrorCategory::model, "detector '" + handle_.name + "' expects 3x" + std::to_string(handle_.input_size) +
                                          "x" + std::to_string(handle_.input_size) + " input");
  }
  for (std::size_t layer : network_.yolo_layers()) {
    const auto& yolo = std::get<nn::YoloLayer>(network_.layers()[layer]);
    const auto& shape = network_.output_shape(layer);
    Head h{layer, num_predictions_, shape.h, shape.w, static_cast<int>(yolo.mask.size()), yolo.classes};
    if (num_classes_ != 0 && num_classes_ != yolo.classes) {
      throw Error(ErrorCategory::model, "detector heads disagree on class count");
    }
    num_classes_ = yolo.classes;
    num_predictions_ += static_cast<std::size_t>(h.anchors) * h.grid_h * h.grid_w;
    heads_.push_back(h);
  }
  if (heads_.empty()) throw Error(ErrorCategory::model, "detector '" + handle_.name + "' has no yolo head");
  if (!class_names_.empty() && static_cast<int>(class_names_.size()) != num_classes_) {
    throw Error(ErrorCategory::model, "class names file lists " + std::to_string(class_names_.size()) +
                                          " classes, model has " + std::to_string(num_classes_));
  }
  if (handle_.person_class_index < 0 || handle_.person_class_index >= num_classes_) {
    throw Error(ErrorCategory::config, "person_class_index " + std::to_string(handle_.person_class_index) +
                                           " outside the detector's " + std::to_string(num_classes_) + " classes");
  }
}

Detector Detector::load(DetectorHandle handle, const std::filesystem::path& cfg_path,
                        const std::filesystem::path& weights_path, const std::filesystem::path& names_path) {
  nn::Network net = nn::load_darknet(cfg_path, weights_path);
  std::vector<std::string> names;
  if (!names_path.empty()) names = read_names(names_path);
  return Detector(std::move(handle), std::move(net), std::move(names), sha256_file(weights_path));
}

void Detector::locate(std::size_t source, const Head*& head, int& anchor, int& cell) const {
  for (const auto& h : heads_) {
    const std::size_t count = static_cast<std::size_t>(h.anchors) * h.grid_h * h.grid_w;
    if (source >= h.first && source < h.first + count) {
      head = &h;
      const std::size_t local = source - h.first;
      const std::size_t plane = static_cast<std::size_t>(h.grid_h) * h.grid_w;
      anchor = static_cast<int>(local / plane);
      cell = static_cast<int>(local % plane);
      return;
    }
  }
  throw Error(ErrorCategory::internal, "detection source index out of range");
}

Detector::Forward Detector::forward(const Image& image) const {
  Forward f;
  f.trace = network_.forward(image_to_tensor(image));
  f.detections.reserve(num_predictions_);
  const double net_w = network_.input_shape().w;
  const double net_h = network_.input_shape().h;
  for (const auto& h : heads_) {
    const auto& yolo = std::get<nn::YoloLayer>(network_.layers()[h.layer]);
    const nn::Tensor& out = f.trace.outputs[h.layer];
    const int stride = 5 + h.classes;
    const double sxy = yolo.scale_xy;
    for (int a = 0; a < h.anchors; ++a) {
      const auto [anchor_w, anchor_h] = yolo.anchors[yolo.mask[a]];
      for (int gy = 0; gy < h.grid_h; ++gy) {
        for (int gx = 0; gx < h.grid_w; ++gx) {
          auto ch = [&](int k) { return out.at(a * stride + k, gy, gx); };
          Detection d;
          d.box.cx = (gx + sigmoid(ch(0)) * sxy - (sxy - 1.0) / 2.0) / h.grid_w;
          d.box.cy = (gy + sigmoid(ch(1)) * sxy - (sxy - 1.0) / 2.0) / h.grid_h;
          d.box.w = std::exp(std::min(ch(2), 20.0)) * anchor_w / net_w;
          d.box.h = std::exp(std::min(ch(3), 20.0)) * anchor_h / net_h;
          d.objectness = sigmoid(ch(4));
          d.class_probs.resize(h.classes);
          for (int k = 0; k < h.classes; ++k) d.class_probs[k] = sigmoid(ch(5 + k));
          const auto best = std::max_element(d.class_probs.begin(), d.class_probs.end());
          d.box.class_id = static_cast<int>(best - d.class_probs.begin());
          d.source = h.first + (static_cast<std::size_t>(a) * h.grid_h + gy) * h.grid_w + gx;
          f.detections.push_back(std::move(d));
        }
      }
    }
  }
  return f;
}

std::vector<Detection> Detector::predict(const Image& image) const { return forward(image).detections; }

Image Detector::backward(const Forward& fwd, std::span<const Detection> selected,
                         std::span<const DetectionGrad> grads) const {
  if (selected.size() != grads.size()) {
    throw Error(ErrorCategory::internal, "Detector::backward: selection/gradient size mismatch");
  }
  std::vector<nn::Tensor> out_grads(network_.layers().size());
  const int person = handle_.person_class_index;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const Detection& d = selected[k];
    const Head* h = nullptr;
    int anchor = 0, cell = 0;
    locate(d.source, h, anchor, cell);
    nn::Tensor& g = out_grads[h->layer];
    if (g.empty()) {
      const auto& s = network_.output_shape(h->layer);
      g = nn::Tensor(s.c, s.h, s.w);
    }
    const int stride = 5 + h->classes;
    const int gy = cell / h->grid_w;
    const int gx = cell % h->grid_w;
    const double obj = d.objectness;
    const double cls = d.class_prob(person);
    g.at(anchor * stride + 4, gy, gx) += grads[k].d_objectness * obj * (1.0 - obj);
    g.at(anchor * stride + 5 + person, gy, gx) += grads[k].d_class_prob * cls * (1.0 - cls);
  }
  return tensor_to_image(network_.backward(fwd.trace, std::move(out_grads)));
}

std::vector<Detection> select_attack_targets(std::span<const Detection> detections, const DetectorHandle& handle) {
  std::vector<Detection> out;
  if (detections.empty()) return out;
  for (const auto& d : detections) {
    if (d.objectness > handle.conf_threshold) out.push_back(d);
  }
  if (out.empty()) {
    const auto best = std::max_element(detections.begin(), detections.end(),
                                       [](const Detection& a, const Detection& b) { return a.objectness < b.objectness; });
    out.push_back(*best);
  }
  return out;
}

std::vector<Detection> non_max_suppression(std::span<const Detection> detections, int cls, double conf_threshold,
                                           double iou_threshold) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].score(cls) > conf_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score(cls) > detections[b].score(cls);
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = detections[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) {
      kept.push_back(d);
      kept.back().box.class_id = cls;
    }
  }
  return kept;
}

std::vector<Detection> detect(const Detector& detector, const Image& image, double iou_nms) {
  if (!(iou_nms > 0.0 && iou_nms < 1.0)) throw Error(ErrorCategory::config, "iou_nms must lie in (0, 1)");
  const auto& h = detector.handle();
  return non_max_suppression(detector.predict(image), h.person_class_index, h.conf_threshold, iou_nms);
}

std::string format_detections(const std::string& image_id, std::span<const Detection> detections, int cls,
                              int input_size) {
  std::ostringstream os;
  char buf[256];
  for (const auto& d : detections) {
    std::snprintf(buf, sizeof(buf), "%s %d %.6f %.2f %.2f %.2f %.2f\n", image_id.c_str(), cls, d.score(cls),
                  d.box.x_min() * input_size, d.box.y_min() * input_size, d.box.x_max() * input_size,
                  d.box.y_max() * input_size);
    os << buf;
  }
  return os.str();
}

}  // namespace patchforge
