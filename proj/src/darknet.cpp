#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "patchforge/error.hpp"
#include "patchforge/nn.hpp"

namespace patchforge::nn {

namespace {

struct Section {
  std::string name;
  int line = 0;
  std::map<std::string, std::string> options;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<Section> split_sections(const std::string& text, const std::string& origin) {
  std::vector<Section> out;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCategory::model, origin + ":" + std::to_string(line_no) + ": bad section");
      out.push_back({line.substr(1, line.size() - 2), line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || out.empty()) {
      throw Error(ErrorCategory::model, origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out.back().options[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

class Options {
 public:
  Options(const Section& s, const std::string& origin) : s_(s), origin_(origin) {}

  int get_int(const std::string& key, int fallback) const {
    auto it = s_.options.find(key);
    if (it == s_.options.end()) return fallback;
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      fail("option '" + key + "' is not an integer");
    }
    return fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = s_.options.find(key);
    if (it == s_.options.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      fail("option '" + key + "' is not a number");
    }
    return fallback;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = s_.options.find(key);
    return it == s_.options.end() ? fallback : it->second;
  }
  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    auto it = s_.options.find(key);
    if (it == s_.options.end()) return out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        fail("option '" + key + "' has a non-numeric entry");
      }
    }
    return out;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCategory::model, origin_ + ":" + std::to_string(s_.line) + " [" + s_.name + "]: " + msg);
  }

 private:
  const Section& s_;
  const std::string& origin_;
};

int resolve_index(int value, int current) { return value < 0 ? current + value : value; }

}  // namespace

Network parse_darknet_cfg(const std::string& cfg_text, const std::string& origin) {
  const auto sections = split_sections(cfg_text, origin);
  if (sections.empty() || (sections[0].name != "net" && sections[0].name != "network")) {
    throw Error(ErrorCategory::model, origin + ": first section must be [net]");
  }
  const Options net(sections[0], origin);
  const Shape input{net.get_int("channels", 3), net.get_int("height", 416), net.get_int("width", 416)};

  std::vector<Layer> layers;
  for (std::size_t si = 1; si < sections.size(); ++si) {
    const Section& s = sections[si];
    const Options o(s, origin);
    const int index = static_cast<int>(layers.size());
    if (s.name == "convolutional" || s.name == "conv") {
      ConvLayer L;
      L.filters = o.get_int("filters", 1);
      L.size = o.get_int("size", 1);
      L.stride = o.get_int("stride", 1);
      const int pad_flag = o.get_int("pad", 0);
      L.pad = o.get_int("padding", pad_flag ? L.size / 2 : 0);
      L.batch_normalize = o.get_int("batch_normalize", 0) != 0;
      L.activation = parse_activation(o.get_string("activation", "logistic"));
      if (o.get_int("groups", 1) != 1) o.fail("grouped convolutions are not supported");
      if (o.get_int("dilation", 1) != 1) o.fail("dilated convolutions are not supported");
      layers.emplace_back(std::move(L));
    } else if (s.name == "maxpool" || s.name == "local_avgpool") {
      PoolLayer L;
      L.average = s.name == "local_avgpool";
      L.size = o.get_int("size", 2);
      L.stride = o.get_int("stride", L.size);
      L.padding = o.get_int("padding", L.size - 1);
      layers.emplace_back(L);
    } else if (s.name == "upsample") {
      layers.emplace_back(UpsampleLayer{o.get_int("stride", 2)});
    } else if (s.name == "route") {
      RouteLayer L;
      for (double v : o.get_list("layers")) L.sources.push_back(resolve_index(static_cast<int>(v), index));
      L.groups = o.get_int("groups", 1);
      L.group_id = o.get_int("group_id", 0);
      layers.emplace_back(std::move(L));
    } else if (s.name == "shortcut") {
      ShortcutLayer L;
      L.from = resolve_index(o.get_int("from", -1), index);
      L.activation = parse_activation(o.get_string("activation", "linear"));
      layers.emplace_back(L);
    } else if (s.name == "yolo") {
      YoloLayer L;
      for (double v : o.get_list("mask")) L.mask.push_back(static_cast<int>(v));
      const auto a = o.get_list("anchors");
      if (a.size() % 2 != 0) o.fail("anchors must come in pairs");
      for (std::size_t k = 0; k + 1 < a.size(); k += 2) L.anchors.emplace_back(a[k], a[k + 1]);
      L.classes = o.get_int("classes", 80);
      L.scale_xy = o.get_double("scale_x_y", 1.0);
      if (L.mask.empty()) {
        for (int k = 0; k < static_cast<int>(L.anchors.size()); ++k) L.mask.push_back(k);
      }
      layers.emplace_back(std::move(L));
    } else {
      o.fail("unsupported layer type");
    }
  }
  return Network(input, std::move(layers));
}

namespace {

class WeightReader {
 public:
  explicit WeightReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCategory::io, "cannot open weights file: " + path.string());
  }

  template <typename T>
  T read_scalar() {
    T value{};
    if (!in_.read(reinterpret_cast<char*>(&value), sizeof(T))) corrupt("truncated header");
    return value;
  }

  void read_floats(std::vector<double>& out, std::size_t n) {
    std::vector<float> buf(n);
    if (n && !in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      corrupt("truncated weights");
    }
    out.assign(buf.begin(), buf.end());
  }

  void expect_eof() {
    in_.peek();
    if (!in_.eof()) corrupt("trailing bytes after last layer (cfg/weights mismatch)");
  }

  [[noreturn]] void corrupt(const std::string& why) {
    throw Error(ErrorCategory::model, "corrupt weights file " + path_.string() + ": " + why);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void load_darknet_weights(Network& net, const std::filesystem::path& weights_path) {
  if (!std::filesystem::exists(weights_path)) {
    throw Error(ErrorCategory::io, "weights file not found: " + weights_path.string());
  }
  WeightReader r(weights_path);
  const auto major = r.read_scalar<std::int32_t>();
  const auto minor = r.read_scalar<std::int32_t>();
  r.read_scalar<std::int32_t>();  // revision
  if (major * 10 + minor >= 2) {
    r.read_scalar<std::int64_t>();
  } else {
    r.read_scalar<std::int32_t>();
  }
  for (auto& layer : net.mutable_layers()) {
    auto* conv = std::get_if<ConvLayer>(&layer);
    if (!conv) continue;
    const std::size_t nf = conv->filters;
    const std::size_t nw = nf * conv->in_channels * conv->size * conv->size;
    std::vector<double> bias, scales, mean, var, weights;
    r.read_floats(bias, nf);
    if (conv->batch_normalize) {
      r.read_floats(scales, nf);
      r.read_floats(mean, nf);
      r.read_floats(var, nf);
    }
    r.read_floats(weights, nw);
    if (conv->batch_normalize) {
      // darknet normalizes with (x - mean) / (sqrt(var) + 1e-6)
      const std::size_t per_filter = nw / nf;
      for (std::size_t f = 0; f < nf; ++f) {
        const double k = scales[f] / (std::sqrt(var[f]) + 1e-6);
        for (std::size_t j = 0; j < per_filter; ++j) weights[f * per_filter + j] *= k;
        bias[f] = bias[f] - mean[f] * k;
      }
    }
    conv->weights = std::move(weights);
    conv->bias = std::move(bias);
  }
  r.expect_eof();
}

void save_darknet_weights(const Network& net, const std::filesystem::path& weights_path) {
  std::ofstream out(weights_path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot write weights file: " + weights_path.string());
  const std::int32_t header[3] = {0, 2, 0};
  const std::int64_t seen = 0;
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(&seen), sizeof(seen));
  auto put = [&](const std::vector<double>& v) {
    std::vector<float> f(v.begin(), v.end());
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  };
  for (const auto& layer : net.layers()) {
    const auto* conv = std::get_if<ConvLayer>(&layer);
    if (!conv) continue;
    if (conv->batch_normalize) {
      throw Error(ErrorCategory::model, "save_darknet_weights: batch-normalized layers are stored folded");
    }
    put(conv->bias);
    put(conv->weights);
  }
  if (!out) throw Error(ErrorCategory::io, "failed writing weights file: " + weights_path.string());
}

Network load_darknet(const std::filesystem::path& cfg_path, const std::filesystem::path& weights_path) {
  std::ifstream in(cfg_path);
  if (!in) throw Error(ErrorCategory::io, "cannot open model cfg: " + cfg_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Network net = parse_darknet_cfg(ss.str(), cfg_path.string());
  load_darknet_weights(net, weights_path);
  return net;
}

}  // namespace patchforge::nn
