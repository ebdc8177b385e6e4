#include "patchforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

namespace {

constexpr double kJpegGrid[] = {90, 70, 50, 30};
constexpr double kNoiseGrid[] = {0.01, 0.02, 0.05, 0.1};
constexpr double kMedianGrid[] = {5, 11, 15, 21};

cv::Mat to_bgr8(const Image& image) {
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(y, x, c), 0.0, 1.0) * 255.0));
  }
  return m;
}

Image from_bgr8(const cv::Mat& m) {
  Image image(m.rows, m.cols, 3);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = row[x][2 - c] / 255.0;
  }
  return image;
}

bool is_8bit_exact(const Image& image) {
  return std::all_of(image.data().begin(), image.data().end(), [](double v) {
    const double s = v * 255.0;
    return v >= 0.0 && v <= 1.0 && std::abs(s - std::round(s)) < 1e-9 && std::round(s) / 255.0 == v;
  });
}

Image median_exact(const Image& image, int k) {
  const int r = k / 2;
  Image out(image.height(), image.width(), image.channels());
  std::vector<double> window(static_cast<std::size_t>(k) * k);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        std::size_t n = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const int yy = std::clamp(y + dy, 0, image.height() - 1);
          for (int dx = -r; dx <= r; ++dx) window[n++] = image.at(yy, std::clamp(x + dx, 0, image.width() - 1), c);
        }
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(window.begin(), mid, window.end());
        out.at(y, x, c) = *mid;
      }
    }
  }
  return out;
}

bool in_grid(double v, std::span<const double> grid) {
  return std::any_of(grid.begin(), grid.end(), [v](double g) { return v == g; });
}

std::string fmt(double v, const char* spec = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

GroundTruth build_ground_truth(const Detector& detector, std::span<const Scene> scenes, double iou_nms) {
  GroundTruth gt;
  gt.detector_name = detector.handle().name;
  gt.detector_fingerprint = detector.fingerprint();
  gt.boxes.reserve(scenes.size());
  for (const auto& scene : scenes) {
    std::vector<BoundingBox> boxes;
    for (const auto& d : detect(detector, scene.image, iou_nms)) boxes.push_back(d.box);
    gt.boxes.push_back(std::move(boxes));
  }
  return gt;
}

ApResult average_precision(std::span<const ScoredBox> predictions,
                           std::span<const std::vector<BoundingBox>> ground_truth, double iou_threshold) {
  ApResult result;
  for (const auto& g : ground_truth) result.num_ground_truth += g.size();
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predictions[a].score > predictions[b].score; });
  std::vector<std::vector<char>> claimed(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) claimed[i].assign(ground_truth[i].size(), 0);

  std::size_t tp = 0;
  std::size_t fp = 0;
  std::vector<double> recall;
  std::vector<double> precision;
  for (std::size_t idx : order) {
    const ScoredBox& p = predictions[idx];
    if (p.image >= ground_truth.size()) throw Error(ErrorCategory::data, "prediction refers to an unknown image");
    const auto& gts = ground_truth[p.image];
    double best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < gts.size(); ++k) {
      const double v = iou(p.box, gts[k]);
      if (v > best) best = v, best_k = k;
    }
    if (best >= iou_threshold && !claimed[p.image][best_k]) {
      claimed[p.image][best_k] = 1;
      ++tp;
    } else {
      ++fp;
    }
    const double r = result.num_ground_truth ? static_cast<double>(tp) / result.num_ground_truth : 0.0;
    const double pr = static_cast<double>(tp) / static_cast<double>(tp + fp);
    recall.push_back(r);
    precision.push_back(pr);
    result.curve.emplace_back(r, pr);
  }
  result.true_positives = tp;
  if (result.num_ground_truth == 0) {
    result.ap = predictions.empty() ? 1.0 : 0.0;
    return result;
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  result.ap = ap;
  return result;
}

const char* to_string(DefenseKind kind) noexcept {
  switch (kind) {
    case DefenseKind::jpeg: return "jpeg";
    case DefenseKind::gaussian_noise: return "gaussian_noise";
    case DefenseKind::median_blur: return "median_blur";
  }
  return "jpeg";
}

DefenseKind parse_defense_kind(const std::string& name) {
  if (name == "jpeg") return DefenseKind::jpeg;
  if (name == "gaussian_noise" || name == "noise") return DefenseKind::gaussian_noise;
  if (name == "median_blur" || name == "median") return DefenseKind::median_blur;
  throw Error(ErrorCategory::config, "unknown defense '" + name + "' (jpeg, gaussian_noise, median_blur)");
}

void DefenseConfig::validate() const {
  switch (kind) {
    case DefenseKind::jpeg:
      if (!(param >= 1.0 && param <= 100.0 && param == std::floor(param))) {
        throw Error(ErrorCategory::config, "jpeg quality must be an integer in [1, 100], got " + fmt(param, "%g"));
      }
      break;
    case DefenseKind::gaussian_noise:
      if (!(param >= 0.0 && std::isfinite(param))) {
        throw Error(ErrorCategory::config, "gaussian noise std must be >= 0, got " + fmt(param, "%g"));
      }
      break;
    case DefenseKind::median_blur:
      if (!(param >= 1.0 && param == std::floor(param) && static_cast<long>(param) % 2 == 1)) {
        throw Error(ErrorCategory::config, "median blur kernel must be a positive odd integer, got " + fmt(param, "%g"));
      }
      break;
  }
}

void DefenseConfig::validate_grid() const {
  validate();
  const bool ok = kind == DefenseKind::jpeg             ? in_grid(param, kJpegGrid)
                  : kind == DefenseKind::gaussian_noise ? in_grid(param, kNoiseGrid)
                                                        : in_grid(param, kMedianGrid);
  if (!ok) throw Error(ErrorCategory::config, describe() + " is outside the evaluation grid");
}

std::string DefenseConfig::describe() const { return std::string(to_string(kind)) + " " + fmt(param, "%g"); }

int median_kernel_for_table_value(int value) {
  if (value < 1) throw Error(ErrorCategory::config, "median blur size must be >= 1");
  return value % 2 == 0 ? value + 1 : value;
}

std::vector<DefenseConfig> defense_grid(DefenseKind kind) {
  std::span<const double> grid = kind == DefenseKind::jpeg             ? std::span<const double>(kJpegGrid)
                                 : kind == DefenseKind::gaussian_noise ? std::span<const double>(kNoiseGrid)
                                                                       : std::span<const double>(kMedianGrid);
  std::vector<DefenseConfig> out;
  for (double p : grid) out.push_back(DefenseConfig{kind, p, 0});
  return out;
}

Image apply_defense(const Image& image, const DefenseConfig& d) {
  d.validate();
  if (image.channels() != 3) throw Error(ErrorCategory::shape, "apply_defense expects 3 channels");
  switch (d.kind) {
    case DefenseKind::jpeg: {
      std::vector<unsigned char> buf;
      const std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, static_cast<int>(d.param)};
      if (!cv::imencode(".jpg", to_bgr8(image), buf, params)) throw Error(ErrorCategory::internal, "jpeg encode failed");
      return from_bgr8(cv::imdecode(buf, cv::IMREAD_COLOR));
    }
    case DefenseKind::gaussian_noise: {
      Image out = image;
      if (d.param == 0.0) return out;
      Rng rng(d.seed);
      for (auto& v : out.data()) v = std::clamp(v + d.param * rng.normal(), 0.0, 1.0);
      return out;
    }
    case DefenseKind::median_blur: {
      const int k = static_cast<int>(d.param);
      if (k == 1) return image;
      if (is_8bit_exact(image)) {
        cv::Mat out;
        cv::medianBlur(to_bgr8(image), out, k);
        return from_bgr8(out);
      }
      return median_exact(image, k);
    }
  }
  return image;
}

std::string TransformStack::describe() const {
  std::ostringstream os;
  os << "scale=" << render.scale << " offset=" << render.vertical_offset;
  if (eot.rotation_deg == 0.0 && eot.noise_amp == 0.0 && eot.contrast_lo == 1.0 && eot.contrast_hi == 1.0 &&
      eot.brightness_amp == 0.0 && eot.scale_lo == 1.0 && eot.scale_hi == 1.0) {
    os << " eot=none";
  } else {
    os << " eot=rot" << eot.rotation_deg << "/noise" << eot.noise_amp << "/contrast" << eot.contrast_lo << "-"
       << eot.contrast_hi << "/bright" << eot.brightness_amp << "/scale" << eot.scale_lo << "-" << eot.scale_hi;
  }
  if (creases.creases_max == 0) {
    os << " creases=none";
  } else {
    os << " creases=" << creases.creases_min << "-" << creases.creases_max;
  }
  os << " seed=" << seed;
  return os.str();
}

EvalReport evaluate_map(const Detector& detector, std::span<const Scene> scenes, const GroundTruth& truth,
                        const PatchImage* patch, const TransformStack& stack,
                        const std::optional<DefenseConfig>& defense, const EvalOptions& options) {
  if (truth.detector_name != detector.handle().name || truth.detector_fingerprint != detector.fingerprint()) {
    throw Error(ErrorCategory::config, "ground truth was built with detector '" + truth.detector_name +
                                           "', not '" + detector.handle().name + "'");
  }
  if (truth.boxes.size() != scenes.size()) {
    throw Error(ErrorCategory::data, "ground truth covers " + std::to_string(truth.boxes.size()) + " scenes, got " +
                                         std::to_string(scenes.size()));
  }
  if (defense) defense->validate();
  stack.render.validate();
  const int person = detector.handle().person_class_index;

  EvalReport report;
  report.detector_name = detector.handle().name;
  report.n_images = static_cast<int>(scenes.size());
  report.scale = stack.render.scale;
  report.creases = stack.creases.creases_max > 0;
  report.transform_stack = patch ? stack.describe() : "clean";
  report.conf_threshold = detector.handle().conf_threshold;
  if (defense) {
    report.defense = std::make_pair(std::string(to_string(defense->kind)), defense->param);
    if (defense->kind == DefenseKind::median_blur && (defense->param == 11.0 || defense->param == 21.0)) {
      report.notes = "median kernel " + fmt(defense->param, "%g") + " stands for table size " +
                     fmt(defense->param - 1.0, "%g");
    }
  }

  std::vector<ScoredBox> predictions;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    Image image = scenes[i].image;
    if (patch) {
      Rng rng = Rng::derive(stack.seed, {static_cast<std::uint64_t>(i)});
      const PatchDims dims{patch->width(), patch->height()};
      const SampledTransform t = sample_transform(stack.eot, stack.creases, dims, rng);
      image = render(scenes[i], *patch, t, stack.render).scene.image;
    }
    if (defense) {
      DefenseConfig d = *defense;
      d.seed = Rng::derive(defense->seed, {static_cast<std::uint64_t>(i)}).next_u64();
      image = apply_defense(image, d);
    }
    auto dets = detect(detector, image, options.iou_nms);
    for (const auto& d : dets) predictions.push_back(ScoredBox{i, d.score(person), d.box});
    if (options.keep_detections) report.detections.push_back(std::move(dets));
  }
  const ApResult ap = average_precision(predictions, truth.boxes, kMatchIou);
  report.map_50 = 100.0 * ap.ap;
  report.asr = 100.0 - report.map_50;
  report.recall = ap.num_ground_truth
                      ? 100.0 * static_cast<double>(ap.true_positives) / static_cast<double>(ap.num_ground_truth)
                      : 100.0;
  report.pr_curve = ap.curve;
  return report;
}

std::vector<EvalReport> sweep(std::span<const Detector* const> detectors, std::span<const Scene> scenes,
                              const PatchImage* patch, const TransformStack& base, const SweepAxes& axes,
                              const CreaseFieldConfig& creases_on, const EvalOptions& options) {
  const std::vector<double> scales = axes.scales.empty() ? std::vector<double>{base.render.scale} : axes.scales;
  const std::vector<bool> creases =
      axes.creases.empty() ? std::vector<bool>{base.creases.creases_max > 0} : axes.creases;
  const std::vector<std::optional<DefenseConfig>> defenses =
      axes.defenses.empty() ? std::vector<std::optional<DefenseConfig>>{std::nullopt} : axes.defenses;
  for (const auto& d : defenses)
    if (d) d->validate_grid();
  creases_on.validate();

  std::vector<EvalReport> reports;
  for (const Detector* det : detectors) {
    const GroundTruth truth = build_ground_truth(*det, scenes, options.iou_nms);
    for (double s : scales) {
      for (bool with_creases : creases) {
        for (const auto& d : defenses) {
          TransformStack stack = base;
          stack.render.scale = s;
          if (axes.creases.empty()) {
            stack.creases = base.creases;
          } else {
            stack.creases = with_creases ? creases_on : CreaseFieldConfig::none();
          }
          reports.push_back(evaluate_map(*det, scenes, truth, patch, stack, d, options));
        }
      }
    }
  }
  return reports;
}

std::string report_csv_header() {
  return "detector,scale,creases,defense,defense_param,map_50,asr,recall,n_images,conf_threshold,transform_stack,"
         "notes";
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.detector_name << "," << fmt(r.scale, "%g") << "," << (r.creases ? "on" : "off") << ","
     << (r.defense ? r.defense->first : "none") << "," << (r.defense ? fmt(r.defense->second, "%g") : "") << ","
     << fmt(r.map_50) << "," << fmt(r.asr) << "," << fmt(r.recall) << "," << r.n_images << ","
     << fmt(r.conf_threshold, "%g") << "," << r.transform_stack << "," << r.notes;
  return os.str();
}

void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCategory::io, "cannot write report: " + path.string());
  out << report_csv_header() << "\n";
  for (const auto& r : reports) out << report_csv_row(r) << "\n";
}

std::string summary_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %6s %7s %-16s %9s %9s %9s %6s\n", "detector", "scale", "creases", "defense",
                "mAP50(%)", "ASR(%)", "recall(%)", "images");
  os << buf;
  for (const auto& r : reports) {
    const std::string def = r.defense ? r.defense->first + " " + fmt(r.defense->second, "%g") : "none";
    std::snprintf(buf, sizeof(buf), "%-12s %6.2f %7s %-16s %9.2f %9.2f %9.2f %6d\n", r.detector_name.c_str(), r.scale,
                  r.creases ? "on" : "off", def.c_str(), r.map_50, r.asr, r.recall, r.n_images);
    os << buf;
  }
  return os.str();
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const std::pair<double, double>> points, double x_max, double y_max) {
  constexpr double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  const double xm = x_max > 0 ? x_max : 1.0;
  const double ym = y_max > 0 ? y_max : 1.0;
  auto px = [&](double x) { return L + (W - L - R) * x / xm; };
  auto py = [&](double y) { return H - B - (H - T - B) * y / ym; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    os << "<text x=\"" << px(xm * i / 4) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << fmt(xm * i / 4, "%g") << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(ym * i / 4) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt(ym * i / 4, "%g") << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
     << H / 2 << ")\">" << y_label << "</text>\n";
  if (!points.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : points) os << fmt(px(x), "%.2f") << "," << fmt(py(y), "%.2f") << " ";
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace patchforge
