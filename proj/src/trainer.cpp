#include "patchforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "patchforge/config.hpp"
#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kSampleTag = 0x5354;

void require_finite(double value, const char* term, int epoch, long long step) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCategory::numeric, std::string("non-finite ") + term + " (" + std::to_string(value) +
                                            ") at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

class Writer {
 public:
  template <typename T>
  void put(const T& value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.append(p, sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_ += s;
  }
  void put_image(const Image& img) {
    for (double v : img.data()) put(v);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string origin)
      : bytes_(bytes), end_(end), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Image get_image(int h, int w, int c) {
    Image img(h, w, c);
    for (auto& v : img.data()) v = get<double>();
    return img;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCategory::checkpoint, "corrupt checkpoint " + origin_ + ": truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_;
  std::string origin_;
};

}  // namespace

const char* to_string(PatchInit init) noexcept {
  switch (init) {
    case PatchInit::random_uniform: return "random_uniform";
    case PatchInit::from_guide: return "from_guide";
    case PatchInit::gray: return "gray";
  }
  return "random_uniform";
}

PatchInit parse_patch_init(const std::string& name) {
  if (name == "random_uniform") return PatchInit::random_uniform;
  if (name == "from_guide") return PatchInit::from_guide;
  if (name == "gray") return PatchInit::gray;
  throw Error(ErrorCategory::config, "unknown patch_init '" + name + "' (random_uniform, from_guide, gray)");
}

void AttackConfig::validate() const {
  weights.validate();
  if (!(lr > 0.0)) throw Error(ErrorCategory::config, "attack.lr must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw Error(ErrorCategory::config, "attack.adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw Error(ErrorCategory::config, "attack.adam_beta2 must lie in [0, 1)");
  if (epochs < 0) throw Error(ErrorCategory::config, "attack.epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCategory::config, "attack.batch_size must be >= 1");
  render.validate();
  eot.validate();
  creases.validate();
}

int steps_per_epoch(std::size_t dataset_size, int batch_size) {
  return static_cast<int>((dataset_size + batch_size - 1) / batch_size);
}

PatchImage initial_patch(const GuideImage& guide, const AttackConfig& cfg) {
  const int h = guide.pixels.height();
  const int w = guide.pixels.width();
  if (h < 2 || w < 2 || guide.pixels.channels() != 3) {
    throw Error(ErrorCategory::shape, "guide image must be at least 2x2x3, got " + guide.pixels.shape_string());
  }
  switch (cfg.patch_init) {
    case PatchInit::from_guide: return PatchImage{guide.pixels};
    case PatchInit::gray: return PatchImage::constant(h, w, 0.5);
    case PatchInit::random_uniform: break;
  }
  return PatchImage::random_uniform(h, w, Rng::derive(cfg.seed, {0x494E4954}).next_u64());
}

TrainState initial_state(const GuideImage& guide, const AttackConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.patch = initial_patch(guide, cfg);
  s.adam_m = Image(s.patch.height(), s.patch.width(), 3);
  s.adam_v = Image(s.patch.height(), s.patch.width(), 3);
  return s;
}

void adam_step(TrainState& state, const Image& grad) {
  require_same_shape(state.patch.pixels, grad, "adam_step");
  const auto& c = state.config;
  const double t = static_cast<double>(state.next_step + 1);
  const double c1 = 1.0 - std::pow(c.adam_beta1, t);
  const double c2 = 1.0 - std::pow(c.adam_beta2, t);
  auto p = state.patch.pixels.data();
  auto m = state.adam_m.data();
  auto v = state.adam_v.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * g[i];
    v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * g[i] * g[i];
    p[i] -= c.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
  }
  state.patch.project();
  ++state.next_step;
}

TrainResult optimize_patch(std::span<const Scene> dataset, const Detector& detector, const GuideImage& guide,
                           const AttackConfig& cfg, const TrainControl& control) {
  return optimize_patch(dataset, detector, guide, initial_state(guide, cfg), control);
}

TrainResult optimize_patch(std::span<const Scene> dataset, const Detector& detector, const GuideImage& guide,
                           TrainState state, const TrainControl& control) {
  const AttackConfig& cfg = state.config;
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorCategory::data, "optimize_patch: empty dataset");
  require_same_shape(state.patch.pixels, guide.pixels, "optimize_patch (patch vs guide)");
  const int person = detector.handle().person_class_index;
  if (cfg.render.person_class != person) {
    throw Error(ErrorCategory::config, "render.person_class differs from the detector's person_class_index");
  }
  const PatchDims dims{state.patch.width(), state.patch.height()};
  const int per_epoch = steps_per_epoch(dataset.size(), cfg.batch_size);
  const long long total_steps = static_cast<long long>(per_epoch) * cfg.epochs;
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  while (state.next_step < total_steps) {
    if (control.stop_at_step >= 0 && state.next_step >= control.stop_at_step) break;
    const long long step = state.next_step;
    const int epoch = static_cast<int>(step / per_epoch);
    const int batch = static_cast<int>(step % per_epoch);
    const auto order = epoch_order(dataset.size(), cfg.seed, epoch);
    const std::size_t first = static_cast<std::size_t>(batch) * cfg.batch_size;
    const std::size_t last = std::min(first + static_cast<std::size_t>(cfg.batch_size), dataset.size());
    const std::size_t n = last - first;

    Image grad(dims.height, dims.width, 3);
    std::vector<std::vector<Detection>> selected(n);
    for (std::size_t b = 0; b < n; ++b) {
      const Scene& scene = dataset[order[first + b]];
      Rng rng = Rng::derive(cfg.seed, {kSampleTag, static_cast<std::uint64_t>(step), b});
      const SampledTransform t = sample_transform(cfg.eot, cfg.creases, dims, rng);
      const RenderResult rendered = render(scene, state.patch, t, cfg.render);
      const auto fwd = detector.forward(rendered.scene.image);
      selected[b] = select_attack_targets(fwd.detections, detector.handle());
      if (cfg.weights.alpha == 0.0 || rendered.rects.empty()) continue;
      // The detection term is a mean over images, so each image's share
      // is independent of the others.
      const std::vector<Detection> one[1] = {selected[b]};
      const auto dgrads = detection_loss_backward(one, person, cfg.weights.alpha / static_cast<double>(n));
      const Image grad_scene = detector.backward(fwd, selected[b], dgrads[0]);
      render_backward(rendered, state.patch, t, grad_scene, grad);
    }
    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.step = static_cast<int>(step);
    rec.breakdown = total_loss(state.patch, guide, selected, cfg.weights, person);
    require_finite(rec.breakdown.l_det, "l_det", epoch, step);
    require_finite(rec.breakdown.l_sim, "l_sim", epoch, step);
    require_finite(rec.breakdown.l_tv, "l_tv", epoch, step);
    require_finite(rec.breakdown.l_total, "l_total", epoch, step);
    regularizer_backward(state.patch, guide, cfg.weights, grad);
    for (double g : grad.data()) {
      if (!std::isfinite(g)) {
        throw Error(ErrorCategory::numeric,
                    "non-finite patch gradient at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
    }
    adam_step(state, grad);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (control.on_step) control.on_step(rec);
    result.log.push_back(rec);
  }
  result.finished = state.next_step >= total_steps;
  result.state = std::move(state);
  return result;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.put_string(kCheckpointVersion);
  w.put_string(attack_config_to_json(state.config));
  const Image& p = state.patch.pixels;
  w.put(static_cast<std::int32_t>(p.height()));
  w.put(static_cast<std::int32_t>(p.width()));
  w.put(static_cast<std::int32_t>(p.channels()));
  w.put_image(p);
  w.put_image(state.adam_m);
  w.put_image(state.adam_v);
  w.put(static_cast<std::int64_t>(state.next_step));
  const std::string digest = sha256_hex(w.bytes());
  w.bytes() += digest;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCategory::io, "cannot write checkpoint: " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw Error(ErrorCategory::io, "failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot read checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const std::string origin = path.string();
  constexpr std::size_t kDigest = 64;
  if (bytes.size() < sizeof(kMagic) + kDigest || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCategory::checkpoint, "not a patchforge checkpoint: " + origin);
  }
  Reader header(bytes, bytes.size(), origin);
  header.get<std::array<char, 4>>();
  const std::string version = header.get_string();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCategory::checkpoint, "checkpoint " + origin + " has version '" + version +
                                               "', this build reads '" + kCheckpointVersion + "'");
  }
  const std::size_t body = bytes.size() - kDigest;
  if (sha256_hex(bytes.substr(0, body)) != bytes.substr(body)) {
    throw Error(ErrorCategory::checkpoint, "corrupt checkpoint " + origin + ": checksum mismatch");
  }
  Reader r(bytes, body, origin);
  r.get<std::array<char, 4>>();
  r.get_string();
  TrainState s;
  try {
    s.config = attack_config_from_json(r.get_string());
  } catch (const Error& e) {
    throw Error(ErrorCategory::checkpoint, "corrupt checkpoint " + origin + ": " + e.what());
  }
  const int h = r.get<std::int32_t>();
  const int w = r.get<std::int32_t>();
  const int c = r.get<std::int32_t>();
  if (h < 1 || w < 1 || c != 3 || static_cast<std::size_t>(h) * w * c * 3 * sizeof(double) > body) {
    throw Error(ErrorCategory::checkpoint, "corrupt checkpoint " + origin + ": bad patch shape");
  }
  s.patch.pixels = r.get_image(h, w, c);
  s.adam_m = r.get_image(h, w, c);
  s.adam_v = r.get_image(h, w, c);
  s.next_step = r.get<std::int64_t>();
  if (!r.done() || s.next_step < 0) throw Error(ErrorCategory::checkpoint, "corrupt checkpoint " + origin);
  return s;
}

std::string loss_log_header() { return "epoch,step,l_det,l_sim,l_tv,l_total"; }

std::string format_loss_record(const TrainLogRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.breakdown.l_det,
                r.breakdown.l_sim, r.breakdown.l_tv, r.breakdown.l_total);
  return buf;
}

void write_loss_log(std::span<const TrainLogRecord> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCategory::io, "cannot write loss log: " + path.string());
  out << loss_log_header() << "\n";
  for (const auto& r : log) out << format_loss_record(r) << "\n";
}

}  // namespace patchforge
