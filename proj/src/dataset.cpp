#include "patchforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "patchforge/error.hpp"
#include "patchforge/sampling.hpp"

namespace fs = std::filesystem;

namespace patchforge {

namespace {

const std::set<std::string> kImageExtensions{".png", ".jpg", ".jpeg", ".bmp", ".PNG", ".JPG", ".JPEG", ".BMP"};

}  // namespace

DatasetIndex index_dataset(const fs::path& images_dir, const fs::path& labels_dir) {
  DatasetIndex index;
  if (!fs::is_directory(images_dir)) {
    throw Error(ErrorCategory::io, "images directory not readable: " + images_dir.string());
  }
  if (!labels_dir.empty() && !fs::is_directory(labels_dir)) {
    throw Error(ErrorCategory::io, "labels directory not readable: " + labels_dir.string());
  }
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (!entry.is_regular_file() || !kImageExtensions.count(entry.path().extension().string())) continue;
    DatasetEntry e{entry.path(), {}};
    if (!labels_dir.empty()) {
      const fs::path label = labels_dir / (entry.path().stem().string() + ".txt");
      if (fs::exists(label)) e.label = label;
    }
    index.entries.push_back(std::move(e));
  }
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.image.filename() < b.image.filename(); });
  return index;
}

std::vector<BoundingBox> parse_labels(const std::string& text, const std::string& origin) {
  std::vector<BoundingBox> boxes;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    BoundingBox b;
    std::string extra;
    const auto where = origin + ":" + std::to_string(line_no);
    if (!(ls >> b.class_id >> b.cx >> b.cy >> b.w >> b.h)) {
      throw Error(ErrorCategory::data, where + ": expected 'class cx cy w h'");
    }
    if (ls >> extra) throw Error(ErrorCategory::data, where + ": trailing fields");
    for (double v : {b.cx, b.cy, b.w, b.h}) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCategory::data, where + ": values must be normalized to [0, 1]");
    }
    if (!(b.w > 0.0 && b.h > 0.0)) throw Error(ErrorCategory::data, where + ": box width and height must be > 0");
    if (b.class_id < 0) throw Error(ErrorCategory::data, where + ": negative class id");
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<BoundingBox> parse_label_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot read label file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_labels(ss.str(), path.string());
}

std::string format_labels(std::span<const BoundingBox> boxes) {
  std::ostringstream os;
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g\n", b.class_id, b.cx, b.cy, b.w, b.h);
    os << buf;
  }
  return os.str();
}

BoundingBox LetterboxGeometry::map_box(const BoundingBox& b) const {
  const double sx = static_cast<double>(new_width) / src_width;
  const double sy = static_cast<double>(new_height) / src_height;
  BoundingBox out = b;
  out.cx = (b.cx * src_width * sx + pad_x) / target;
  out.cy = (b.cy * src_height * sy + pad_y) / target;
  out.w = b.w * src_width * sx / target;
  out.h = b.h * src_height * sy / target;
  return out;
}

LetterboxGeometry letterbox_geometry(int src_width, int src_height, int target) {
  if (src_width <= 0 || src_height <= 0) throw Error(ErrorCategory::data, "letterbox: empty image");
  LetterboxGeometry g;
  g.target = target;
  g.src_width = src_width;
  g.src_height = src_height;
  const double r = std::min(static_cast<double>(target) / src_width, static_cast<double>(target) / src_height);
  g.new_width = std::clamp(static_cast<int>(std::lround(src_width * r)), 1, target);
  g.new_height = std::clamp(static_cast<int>(std::lround(src_height * r)), 1, target);
  g.pad_x = (target - g.new_width) / 2;
  g.pad_y = (target - g.new_height) / 2;
  return g;
}

Scene letterbox(const Image& image, std::span<const BoundingBox> boxes, int target) {
  const LetterboxGeometry g = letterbox_geometry(image.width(), image.height(), target);
  Scene scene;
  scene.image = Image(target, target, 3, 0.5);
  const Image resized = (g.new_width == image.width() && g.new_height == image.height())
                            ? image
                            : resize_bilinear(image, g.new_height, g.new_width);
  for (int y = 0; y < g.new_height; ++y)
    for (int x = 0; x < g.new_width; ++x)
      for (int c = 0; c < 3; ++c) scene.image.at(y + g.pad_y, x + g.pad_x, c) = resized.at(y, x, c);
  for (const auto& b : boxes) scene.boxes.push_back(g.map_box(b));
  return scene;
}

IngestResult ingest_dataset(const fs::path& images_dir, const fs::path& labels_dir, int target) {
  const DatasetIndex index = index_dataset(images_dir, labels_dir);
  IngestResult result;
  for (const auto& e : index.entries) {
    std::vector<BoundingBox> boxes;
    if (!e.label.empty()) boxes = parse_label_file(e.label);
    Image img;
    try {
      img = load_image(e.image);
    } catch (const Error&) {
      ++result.skipped;
      std::cerr << "warning: skipping unreadable image " << e.image << "\n";
      continue;
    }
    Scene scene = letterbox(img, boxes, target);
    scene.source_path = e.image.string();
    result.scenes.push_back(std::move(scene));
  }
  if (!index.entries.empty() && result.skipped * 10 > static_cast<int>(index.entries.size())) {
    throw Error(ErrorCategory::data, std::to_string(result.skipped) + " of " + std::to_string(index.entries.size()) +
                                         " images unreadable (more than 10%) in " + images_dir.string());
  }
  return result;
}

void write_dataset(std::span<const Scene> scenes, const fs::path& images_dir, const fs::path& labels_dir) {
  fs::create_directories(images_dir);
  fs::create_directories(labels_dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene_%05zu", i);
    save_png(scenes[i].image, images_dir / (std::string(stem) + ".png"));
    std::ofstream out(labels_dir / (std::string(stem) + ".txt"));
    if (!out) throw Error(ErrorCategory::io, "cannot write label file in " + labels_dir.string());
    out << format_labels(scenes[i].boxes);
  }
}

}  // namespace patchforge
