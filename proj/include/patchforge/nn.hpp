#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace patchforge::nn {

// Channel-major (C x H x W) activation tensor.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  bool empty() const noexcept { return v.empty(); }
  std::size_t index(int ch, int y, int x) const noexcept {
    return (static_cast<std::size_t>(ch) * h + y) * w + x;
  }
  double& at(int ch, int y, int x) noexcept { return v[index(ch, y, x)]; }
  double at(int ch, int y, int x) const noexcept { return v[index(ch, y, x)]; }
};

enum class Activation { linear, leaky, relu, logistic, swish, mish };

Activation parse_activation(const std::string& name);
const char* to_string(Activation a) noexcept;

struct ConvLayer {
  int in_channels = 0;
  int filters = 0;
  int size = 1;
  int stride = 1;
  int pad = 0;
  Activation activation = Activation::linear;
  bool batch_normalize = false;  // as stored on disk; folded into weights/bias
  std::vector<double> weights;  // filters x in_channels x size x size
  std::vector<double> bias;     // filters (batch norm folded in at load)
};

struct PoolLayer {
  bool average = false;
  int size = 2;
  int stride = 2;
  int padding = 1;  // total padding, darknet convention (offset -padding/2)
};

struct UpsampleLayer {
  int stride = 2;
};

struct RouteLayer {
  std::vector<int> sources;  // absolute layer indices
  int groups = 1;
  int group_id = 0;
};

struct ShortcutLayer {
  int from = 0;  // absolute layer index added to the previous layer
  Activation activation = Activation::linear;
};

// Raw prediction head. The layer is an identity in the graph; decoding
// into boxes and probabilities happens in the detector.
struct YoloLayer {
  std::vector<int> mask;
  std::vector<std::pair<double, double>> anchors;  // pixels at network input size
  int classes = 1;
  double scale_xy = 1.0;
};

using Layer = std::variant<ConvLayer, PoolLayer, UpsampleLayer, RouteLayer, ShortcutLayer, YoloLayer>;

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
};

struct ConvGrads {
  std::vector<double> weights;
  std::vector<double> bias;
};

class Network {
 public:
  Network() = default;
  Network(Shape input, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& mutable_layers() noexcept { return layers_; }
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  std::vector<std::size_t> yolo_layers() const;

  struct Trace {
    Tensor input;
    std::vector<Tensor> outputs;
    std::vector<Tensor> pre_activations;  // conv and shortcut layers only
    std::vector<std::vector<int>> argmax;  // max-pool layers only
  };

  Trace forward(const Tensor& input) const;

  // Propagates gradients given w.r.t. layer outputs (typically the yolo
  // layers; empty tensors mean zero) back to the network input. When
  // `param_grads` is non-null, conv weight/bias gradients are accumulated
  // into it (one entry per layer, only conv entries are used).
  Tensor backward(const Trace& trace, std::vector<Tensor> output_grads,
                  std::vector<ConvGrads>* param_grads = nullptr) const;

  std::vector<ConvGrads> zero_grads() const;

 private:
  Shape input_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

// Darknet model description (.cfg) and float32 weights (.weights).
Network load_darknet(const std::filesystem::path& cfg_path, const std::filesystem::path& weights_path);
Network parse_darknet_cfg(const std::string& cfg_text, const std::string& origin);
void load_darknet_weights(Network& net, const std::filesystem::path& weights_path);
void save_darknet_weights(const Network& net, const std::filesystem::path& weights_path);

}  // namespace patchforge::nn
