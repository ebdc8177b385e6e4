// Trains the built-in toy person detector on freshly generated synthetic
// scenes and writes darknet-format weights.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "patchforge/detector.hpp"
#include "patchforge/error.hpp"
#include "patchforge/nn.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/synthetic.hpp"

using namespace patchforge;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void init_weights(nn::Network& net, Rng& rng) {
  for (auto& layer : net.mutable_layers()) {
    if (auto* conv = std::get_if<nn::ConvLayer>(&layer)) {
      const double fan_in = static_cast<double>(conv->in_channels) * conv->size * conv->size;
      const double stdev = std::sqrt(2.0 / fan_in);
      for (auto& w : conv->weights) w = rng.normal() * stdev;
      std::fill(conv->bias.begin(), conv->bias.end(), 0.0);
    }
  }
  // The last conv before the head predicts rarely-positive objectness.
  auto& layers = net.mutable_layers();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (auto* conv = std::get_if<nn::ConvLayer>(&*it)) {
      const int stride = conv->filters / 3;
      for (int a = 0; a < 3; ++a) conv->bias[a * stride + 4] = -4.0;
      for (auto& w : conv->weights) w *= 0.1;
      break;
    }
  }
}

struct Head {
  std::size_t layer = 0;
  int grid = 0;
  std::vector<std::pair<double, double>> anchors;
};

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

struct ImageLoss {
  double obj = 0.0;
  double noobj = 0.0;
  double coord = 0.0;
  double cls = 0.0;
};

// YOLO-style target assignment; writes d(loss)/d(head logits) into grad.
ImageLoss head_loss(const nn::Tensor& out, const Head& head, const std::vector<BoundingBox>& boxes, double scale,
                    nn::Tensor& grad) {
  ImageLoss loss;
  const int S = head.grid;
  const int stride = 6;
  std::vector<char> positive(3 * S * S, 0);
  for (int a = 0; a < 3; ++a) {
    for (int gy = 0; gy < S; ++gy) {
      for (int gx = 0; gx < S; ++gx) {
        auto ch = [&](int k) { return out.at(a * stride + k, gy, gx); };
        BoundingBox pred{(gx + sigmoid(ch(0))) / S, (gy + sigmoid(ch(1))) / S,
                         std::exp(std::min(ch(2), 10.0)) * head.anchors[a].first / kDetectorInputSize,
                         std::exp(std::min(ch(3), 10.0)) * head.anchors[a].second / kDetectorInputSize, 0};
        double best = 0.0;
        for (const auto& b : boxes) best = std::max(best, iou(pred, b));
        const double o = sigmoid(ch(4));
        if (best < 0.6) {
          grad.at(a * stride + 4, gy, gx) = scale * o;
          loss.noobj -= std::log(std::max(1.0 - o, 1e-12));
        }
      }
    }
  }
  for (const auto& b : boxes) {
    const int gx = std::clamp(static_cast<int>(b.cx * S), 0, S - 1);
    const int gy = std::clamp(static_cast<int>(b.cy * S), 0, S - 1);
    int best_a = 0;
    double best = -1.0;
    for (int a = 0; a < 3; ++a) {
      const double v = shape_iou(b.w * kDetectorInputSize, b.h * kDetectorInputSize, head.anchors[a].first,
                                 head.anchors[a].second);
      if (v > best) best = v, best_a = a;
    }
    const int a = best_a;
    if (positive[(a * S + gy) * S + gx]) continue;
    positive[(a * S + gy) * S + gx] = 1;
    auto ch = [&](int k) { return out.at(a * stride + k, gy, gx); };
    auto g = [&](int k) -> double& { return grad.at(a * stride + k, gy, gx); };
    const double coord_w = 2.0 - b.w * b.h;
    const double tx = b.cx * S - gx;
    const double ty = b.cy * S - gy;
    const double tw = std::log(b.w * kDetectorInputSize / head.anchors[a].first);
    const double th = std::log(b.h * kDetectorInputSize / head.anchors[a].second);
    g(0) = scale * coord_w * (sigmoid(ch(0)) - tx);
    g(1) = scale * coord_w * (sigmoid(ch(1)) - ty);
    g(2) = scale * coord_w * (ch(2) - tw);
    g(3) = scale * coord_w * (ch(3) - th);
    loss.coord += 0.5 * coord_w *
                  (std::pow(sigmoid(ch(0)) - tx, 2) + std::pow(sigmoid(ch(1)) - ty, 2) + std::pow(ch(2) - tw, 2) +
                   std::pow(ch(3) - th, 2));
    const double o = sigmoid(ch(4));
    g(4) = scale * (o - 1.0);
    loss.obj -= std::log(std::max(o, 1e-12));
    const double c = sigmoid(ch(5));
    g(5) = scale * (c - 1.0);
    loss.cls -= std::log(std::max(c, 1e-12));
  }
  return loss;
}

struct Adam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<nn::ConvGrads> m, v;

  void step(nn::Network& net, const std::vector<nn::ConvGrads>& g) {
    if (m.empty()) m = v = net.zero_grads();
    ++t;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    auto& layers = net.mutable_layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto* conv = std::get_if<nn::ConvLayer>(&layers[i]);
      if (!conv) continue;
      auto update = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& mm,
                        std::vector<double>& vv) {
        for (std::size_t k = 0; k < p.size(); ++k) {
          mm[k] = b1 * mm[k] + (1 - b1) * gr[k];
          vv[k] = b2 * vv[k] + (1 - b2) * gr[k] * gr[k];
          p[k] -= lr * (mm[k] / c1) / (std::sqrt(vv[k] / c2) + eps);
        }
      };
      update(conv->weights, g[i].weights, m[i].weights, v[i].weights);
      update(conv->bias, g[i].bias, m[i].bias, v[i].bias);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train the toy person detector"};
  std::string cfg_path = PATCHFORGE_DATA_DIR "/toy_detector.cfg";
  std::string out_path = PATCHFORGE_DATA_DIR "/toy_detector.weights";
  std::string init_path;
  std::uint64_t seed = 2024;
  int steps = 3000;
  int batch = 8;
  double lr = 2e-3;
  double occluder_prob = 0.5;
  int eval_every = 250;
  app.add_option("--cfg", cfg_path, "model description");
  app.add_option("--out", out_path, "output weights");
  app.add_option("--init", init_path, "continue from these weights");
  app.add_option("--seed", seed, "data and init seed");
  app.add_option("--steps", steps, "optimizer steps");
  app.add_option("--batch", batch, "scenes per step");
  app.add_option("--lr", lr, "Adam learning rate");
  app.add_option("--occluder-prob", occluder_prob, "chance a person's torso is covered by a random square");
  app.add_option("--eval-every", eval_every, "steps between held-out reports");
  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream cfg_in(cfg_path);
    if (!cfg_in) throw Error(ErrorCategory::io, "cannot open " + cfg_path);
    std::stringstream ss;
    ss << cfg_in.rdbuf();
    nn::Network net = nn::parse_darknet_cfg(ss.str(), cfg_path);
    Rng init_rng = Rng::derive(seed, {0xC0FFEE});
    if (init_path.empty()) {
      init_weights(net, init_rng);
    } else {
      nn::load_darknet_weights(net, init_path);
    }
    const auto yolo_idx = net.yolo_layers().at(0);
    Head head{yolo_idx, net.output_shape(yolo_idx).h, std::get<nn::YoloLayer>(net.layers()[yolo_idx]).anchors};

    SyntheticSceneConfig train_cfg;
    train_cfg.occluder_prob = occluder_prob;
    const auto held_out = make_synthetic_dataset(64, seed + 1, SyntheticSceneConfig{});

    Adam adam{lr};
    ImageLoss running;
    for (int step = 1; step <= steps; ++step) {
      auto grads = net.zero_grads();
      const double scale = 1.0 / batch;
      ImageLoss acc;
      for (int b = 0; b < batch; ++b) {
        Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)});
        Scene scene = make_synthetic_scene(rng, train_cfg);
        const auto trace = net.forward(image_to_tensor(scene.image));
        const auto& out = trace.outputs[head.layer];
        std::vector<nn::Tensor> out_grads(net.layers().size());
        out_grads[head.layer] = nn::Tensor(out.c, out.h, out.w);
        const ImageLoss l = head_loss(out, head, scene.boxes, scale, out_grads[head.layer]);
        acc.obj += l.obj, acc.noobj += l.noobj, acc.coord += l.coord, acc.cls += l.cls;
        net.backward(trace, std::move(out_grads), &grads);
      }
      adam.step(net, grads);
      running.obj += acc.obj / batch, running.noobj += acc.noobj / batch;
      running.coord += acc.coord / batch, running.cls += acc.cls / batch;
      if (step % eval_every == 0 || step == steps) {
        const double n = eval_every;
        Detector det({"toy"}, net);
        int gt = 0, hit = 0, fp = 0;
        for (const auto& s : held_out) {
          const auto dets = detect(det, s.image);
          gt += static_cast<int>(s.boxes.size());
          std::vector<char> used(s.boxes.size(), 0);
          for (const auto& d : dets) {
            bool matched = false;
            for (std::size_t k = 0; k < s.boxes.size(); ++k) {
              if (!used[k] && iou(d.box, s.boxes[k]) >= 0.5) {
                used[k] = 1;
                matched = true;
                break;
              }
            }
            matched ? ++hit : ++fp;
          }
        }
        std::printf("step %d  obj %.4f noobj %.4f coord %.4f cls %.4f  held-out recall %d/%d fp %d\n", step,
                    running.obj / n, running.noobj / n, running.coord / n, running.cls / n, hit, gt, fp);
        std::fflush(stdout);
        running = {};
        nn::save_darknet_weights(net, out_path);
      }
    }
    nn::save_darknet_weights(net, out_path);
    std::printf("wrote %s\n", out_path.c_str());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  }
  return 0;
}
