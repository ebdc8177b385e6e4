#include "patchforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "patchforge/error.hpp"

namespace patchforge::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }

double activate(Activation a, double x) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::leaky: return x > 0.0 ? x : 0.1 * x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::logistic: return sigmoid(x);
    case Activation::swish: return x * sigmoid(x);
    case Activation::mish: return x * std::tanh(softplus(x));
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::linear: return 1.0;
    case Activation::leaky: return x > 0.0 ? 1.0 : 0.1;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::logistic: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::swish: {
      const double s = sigmoid(x);
      return s + x * s * (1.0 - s);
    }
    case Activation::mish: {
      const double t = std::tanh(softplus(x));
      return t + x * (1.0 - t * t) * sigmoid(x);
    }
  }
  return 1.0;
}

int conv_out(int in, int size, int stride, int pad) { return (in + 2 * pad - size) / stride + 1; }
int pool_out(int in, int size, int stride, int padding) { return (in + padding - size) / stride + 1; }

void im2col(const Tensor& in, const ConvLayer& L, int out_h, int out_w, std::vector<double>& col) {
  const int k = L.size;
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  col.assign(static_cast<std::size_t>(in.c) * k * k * n, 0.0);
  for (int c = 0; c < in.c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * L.stride - L.pad + ky;
          if (iy < 0 || iy >= in.h) continue;
          const double* src = in.v.data() + (static_cast<std::size_t>(c) * in.h + iy) * in.w;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * L.stride - L.pad + kx;
            if (ix >= 0 && ix < in.w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, const ConvLayer& L, int out_h, int out_w, Tensor& grad_in) {
  const int k = L.size;
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < grad_in.c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * L.stride - L.pad + ky;
          if (iy < 0 || iy >= grad_in.h) continue;
          double* dst = grad_in.v.data() + (static_cast<std::size_t>(c) * grad_in.h + iy) * grad_in.w;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * L.stride - L.pad + kx;
            if (ix >= 0 && ix < grad_in.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvLayer& L) { return L.size == 1 && L.stride == 1 && L.pad == 0; }

void conv_forward(const ConvLayer& L, const Tensor& in, Tensor& pre, Tensor& out) {
  const int oh = conv_out(in.h, L.size, L.stride, L.pad);
  const int ow = conv_out(in.w, L.size, L.stride, L.pad);
  const int K = in.c * L.size * L.size;
  const int N = oh * ow;
  pre = Tensor(L.filters, oh, ow);
  std::vector<double> col;
  const double* col_ptr = in.v.data();
  if (!is_pointwise(L)) {
    im2col(in, L, oh, ow, col);
    col_ptr = col.data();
  }
  Eigen::Map<const RowMat> W(L.weights.data(), L.filters, K);
  Eigen::Map<const RowMat> X(col_ptr, K, N);
  Eigen::Map<RowMat> Y(pre.v.data(), L.filters, N);
  Y.noalias() = W * X;
  for (int f = 0; f < L.filters; ++f) Y.row(f).array() += L.bias[f];
  out = Tensor(L.filters, oh, ow);
  for (std::size_t i = 0; i < pre.v.size(); ++i) out.v[i] = activate(L.activation, pre.v[i]);
}

void conv_backward(const ConvLayer& L, const Tensor& in, const Tensor& pre, const Tensor& grad_out,
                   Tensor* grad_in, ConvGrads* pg) {
  const int oh = pre.h;
  const int ow = pre.w;
  const int K = in.c * L.size * L.size;
  const int N = oh * ow;
  std::vector<double> dpre(pre.v.size());
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] = grad_out.v[i] * activate_grad(L.activation, pre.v[i]);
  Eigen::Map<const RowMat> W(L.weights.data(), L.filters, K);
  Eigen::Map<const RowMat> dY(dpre.data(), L.filters, N);

  if (pg) {
    std::vector<double> col;
    const double* col_ptr = in.v.data();
    if (!is_pointwise(L)) {
      im2col(in, L, oh, ow, col);
      col_ptr = col.data();
    }
    Eigen::Map<const RowMat> X(col_ptr, K, N);
    Eigen::Map<RowMat> dW(pg->weights.data(), L.filters, K);
    dW.noalias() += dY * X.transpose();
    for (int f = 0; f < L.filters; ++f) pg->bias[f] += dY.row(f).sum();
  }
  if (grad_in) {
    if (is_pointwise(L)) {
      Eigen::Map<RowMat> dX(grad_in->v.data(), K, N);
      dX.noalias() += W.transpose() * dY;
    } else {
      std::vector<double> dcol(static_cast<std::size_t>(K) * N);
      Eigen::Map<RowMat> dC(dcol.data(), K, N);
      dC.noalias() = W.transpose() * dY;
      col2im_add(dcol, L, oh, ow, *grad_in);
    }
  }
}

void pool_forward(const PoolLayer& L, const Tensor& in, Tensor& out, std::vector<int>& argmax) {
  const int oh = pool_out(in.h, L.size, L.stride, L.padding);
  const int ow = pool_out(in.w, L.size, L.stride, L.padding);
  const int offset = -L.padding / 2;
  out = Tensor(in.c, oh, ow);
  if (!L.average) argmax.assign(out.v.size(), -1);
  for (int c = 0; c < in.c; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        double sum = 0.0;
        int count = 0;
        for (int ky = 0; ky < L.size; ++ky) {
          const int iy = oy * L.stride + offset + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < L.size; ++kx) {
            const int ix = ox * L.stride + offset + kx;
            if (ix < 0 || ix >= in.w) continue;
            const auto idx = static_cast<int>(in.index(c, iy, ix));
            const double v = in.v[idx];
            sum += v;
            ++count;
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        const std::size_t o = out.index(c, oy, ox);
        if (L.average) {
          out.v[o] = count > 0 ? sum / count : 0.0;
        } else {
          out.v[o] = best_idx >= 0 ? best : 0.0;
          argmax[o] = best_idx;
        }
      }
    }
  }
}

void pool_backward(const PoolLayer& L, const Tensor& in, const Tensor& grad_out, const std::vector<int>& argmax,
                   Tensor& grad_in) {
  if (!L.average) {
    for (std::size_t o = 0; o < grad_out.v.size(); ++o) {
      if (argmax[o] >= 0) grad_in.v[argmax[o]] += grad_out.v[o];
    }
    return;
  }
  const int offset = -L.padding / 2;
  for (int c = 0; c < grad_out.c; ++c) {
    for (int oy = 0; oy < grad_out.h; ++oy) {
      for (int ox = 0; ox < grad_out.w; ++ox) {
        int count = 0;
        for (int ky = 0; ky < L.size; ++ky) {
          const int iy = oy * L.stride + offset + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < L.size; ++kx) {
            const int ix = ox * L.stride + offset + kx;
            if (ix >= 0 && ix < in.w) ++count;
          }
        }
        if (count == 0) continue;
        const double g = grad_out.at(c, oy, ox) / count;
        for (int ky = 0; ky < L.size; ++ky) {
          const int iy = oy * L.stride + offset + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < L.size; ++kx) {
            const int ix = ox * L.stride + offset + kx;
            if (ix >= 0 && ix < in.w) grad_in.at(c, iy, ix) += g;
          }
        }
      }
    }
  }
}

int route_channels(const Shape& s, const RouteLayer& L) { return s.c / L.groups; }

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "leaky") return Activation::leaky;
  if (name == "relu") return Activation::relu;
  if (name == "logistic") return Activation::logistic;
  if (name == "swish") return Activation::swish;
  if (name == "mish") return Activation::mish;
  throw Error(ErrorCategory::model, "unsupported activation '" + name + "'");
}

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::leaky: return "leaky";
    case Activation::relu: return "relu";
    case Activation::logistic: return "logistic";
    case Activation::swish: return "swish";
    case Activation::mish: return "mish";
  }
  return "linear";
}

Network::Network(Shape input, std::vector<Layer> layers) : input_(input), layers_(std::move(layers)) {
  shapes_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Shape prev = i == 0 ? input_ : shapes_[i - 1];
    auto fail = [&](const std::string& msg) {
      throw Error(ErrorCategory::model, "layer " + std::to_string(i) + ": " + msg);
    };
    Shape s{};
    if (auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      if (conv->in_channels == 0) conv->in_channels = prev.c;
      if (conv->in_channels != prev.c) fail("conv input channels mismatch");
      const std::size_t nw = static_cast<std::size_t>(conv->filters) * conv->in_channels * conv->size * conv->size;
      if (conv->weights.empty()) conv->weights.assign(nw, 0.0);
      if (conv->bias.empty()) conv->bias.assign(conv->filters, 0.0);
      if (conv->weights.size() != nw || conv->bias.size() != static_cast<std::size_t>(conv->filters)) {
        fail("conv parameter size mismatch");
      }
      s = {conv->filters, conv_out(prev.h, conv->size, conv->stride, conv->pad),
           conv_out(prev.w, conv->size, conv->stride, conv->pad)};
    } else if (auto* pool = std::get_if<PoolLayer>(&layers_[i])) {
      s = {prev.c, pool_out(prev.h, pool->size, pool->stride, pool->padding),
           pool_out(prev.w, pool->size, pool->stride, pool->padding)};
    } else if (auto* up = std::get_if<UpsampleLayer>(&layers_[i])) {
      s = {prev.c, prev.h * up->stride, prev.w * up->stride};
    } else if (auto* route = std::get_if<RouteLayer>(&layers_[i])) {
      if (route->sources.empty()) fail("route without sources");
      if (route->groups < 1 || route->group_id < 0 || route->group_id >= route->groups) fail("bad route groups");
      s = {0, 0, 0};
      for (int src : route->sources) {
        if (src < 0 || static_cast<std::size_t>(src) >= i) fail("route source out of range");
        const Shape& ss = shapes_[src];
        if (s.c == 0) {
          s.h = ss.h;
          s.w = ss.w;
        } else if (ss.h != s.h || ss.w != s.w) {
          fail("route sources differ in spatial size");
        }
        if (ss.c % route->groups != 0) fail("route channels not divisible by groups");
        s.c += route_channels(ss, *route);
      }
    } else if (auto* sc = std::get_if<ShortcutLayer>(&layers_[i])) {
      if (sc->from < 0 || static_cast<std::size_t>(sc->from) >= i) fail("shortcut source out of range");
      const Shape& other = shapes_[sc->from];
      if (other.c != prev.c || other.h != prev.h || other.w != prev.w) fail("shortcut shape mismatch");
      s = prev;
    } else if (auto* yolo = std::get_if<YoloLayer>(&layers_[i])) {
      if (prev.c != static_cast<int>(yolo->mask.size()) * (5 + yolo->classes)) fail("yolo channel count mismatch");
      for (int m : yolo->mask) {
        if (m < 0 || static_cast<std::size_t>(m) >= yolo->anchors.size()) fail("yolo mask index out of range");
      }
      s = prev;
    }
    if (s.c <= 0 || s.h <= 0 || s.w <= 0) fail("non-positive output shape");
    shapes_.push_back(s);
  }
}

std::vector<std::size_t> Network::yolo_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<YoloLayer>(layers_[i])) out.push_back(i);
  }
  return out;
}

Network::Trace Network::forward(const Tensor& input) const {
  if (input.c != input_.c || input.h != input_.h || input.w != input_.w) {
    throw Error(ErrorCategory::shape, "network input must be " + std::to_string(input_.c) + "x" +
                                          std::to_string(input_.h) + "x" + std::to_string(input_.w));
  }
  Trace t;
  t.input = input;
  t.outputs.resize(layers_.size());
  t.pre_activations.resize(layers_.size());
  t.argmax.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& prev = i == 0 ? t.input : t.outputs[i - 1];
    Tensor& out = t.outputs[i];
    if (const auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      conv_forward(*conv, prev, t.pre_activations[i], out);
    } else if (const auto* pool = std::get_if<PoolLayer>(&layers_[i])) {
      pool_forward(*pool, prev, out, t.argmax[i]);
    } else if (const auto* up = std::get_if<UpsampleLayer>(&layers_[i])) {
      out = Tensor(prev.c, prev.h * up->stride, prev.w * up->stride);
      for (int c = 0; c < out.c; ++c)
        for (int y = 0; y < out.h; ++y)
          for (int x = 0; x < out.w; ++x) out.at(c, y, x) = prev.at(c, y / up->stride, x / up->stride);
    } else if (const auto* route = std::get_if<RouteLayer>(&layers_[i])) {
      const Shape& s = shapes_[i];
      out = Tensor(s.c, s.h, s.w);
      std::size_t offset = 0;
      for (int src : route->sources) {
        const Tensor& st = t.outputs[src];
        const int part = st.c / route->groups;
        const std::size_t plane = static_cast<std::size_t>(st.h) * st.w;
        const auto begin = st.v.begin() + static_cast<std::ptrdiff_t>(route->group_id * part * plane);
        std::copy(begin, begin + static_cast<std::ptrdiff_t>(part * plane), out.v.begin() + offset);
        offset += part * plane;
      }
    } else if (const auto* sc = std::get_if<ShortcutLayer>(&layers_[i])) {
      const Tensor& other = t.outputs[sc->from];
      Tensor& pre = t.pre_activations[i];
      pre = prev;
      add_into(pre, other);
      out = pre;
      for (auto& v : out.v) v = activate(sc->activation, v);
    } else {
      out = prev;
    }
  }
  return t;
}

std::vector<ConvGrads> Network::zero_grads() const {
  std::vector<ConvGrads> g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      g[i].weights.assign(conv->weights.size(), 0.0);
      g[i].bias.assign(conv->bias.size(), 0.0);
    }
  }
  return g;
}

Tensor Network::backward(const Trace& trace, std::vector<Tensor> grads, std::vector<ConvGrads>* param_grads) const {
  grads.resize(layers_.size());
  Tensor grad_input(input_.c, input_.h, input_.w);
  auto grad_slot = [&](int layer) -> Tensor& {
    if (layer < 0) return grad_input;
    Tensor& g = grads[layer];
    if (g.empty()) {
      const Shape& s = shapes_[layer];
      g = Tensor(s.c, s.h, s.w);
    }
    return g;
  };

  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    if (grads[i].empty()) continue;
    const Tensor& g = grads[i];
    const Tensor& prev = i == 0 ? trace.input : trace.outputs[i - 1];
    if (const auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      Tensor* gin = &grad_slot(i - 1);
      ConvGrads* pg = param_grads ? &(*param_grads)[i] : nullptr;
      conv_backward(*conv, prev, trace.pre_activations[i], g, gin, pg);
    } else if (const auto* pool = std::get_if<PoolLayer>(&layers_[i])) {
      pool_backward(*pool, prev, g, trace.argmax[i], grad_slot(i - 1));
    } else if (const auto* up = std::get_if<UpsampleLayer>(&layers_[i])) {
      Tensor& gin = grad_slot(i - 1);
      for (int c = 0; c < g.c; ++c)
        for (int y = 0; y < g.h; ++y)
          for (int x = 0; x < g.w; ++x) gin.at(c, y / up->stride, x / up->stride) += g.at(c, y, x);
    } else if (const auto* route = std::get_if<RouteLayer>(&layers_[i])) {
      std::size_t offset = 0;
      for (int src : route->sources) {
        Tensor& gs = grad_slot(src);
        const int part = gs.c / route->groups;
        const std::size_t plane = static_cast<std::size_t>(gs.h) * gs.w;
        const std::size_t base = static_cast<std::size_t>(route->group_id) * part * plane;
        for (std::size_t k = 0; k < part * plane; ++k) gs.v[base + k] += g.v[offset + k];
        offset += part * plane;
      }
    } else if (const auto* sc = std::get_if<ShortcutLayer>(&layers_[i])) {
      const Tensor& pre = trace.pre_activations[i];
      Tensor d(g.c, g.h, g.w);
      for (std::size_t k = 0; k < d.v.size(); ++k) d.v[k] = g.v[k] * activate_grad(sc->activation, pre.v[k]);
      add_into(grad_slot(i - 1), d);
      add_into(grad_slot(sc->from), d);
    } else {
      add_into(grad_slot(i - 1), g);
    }
  }
  return grad_input;
}

}  // namespace patchforge::nn
