#include "patchforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "patchforge/error.hpp"

namespace patchforge {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw Error(ErrorCategory::shape, "negative image dimension");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

std::string Image::shape_string() const {
  return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
}

void Image::fill(double value) { std::fill(pixels_.begin(), pixels_.end(), value); }

void Image::clamp(double lo, double hi) {
  for (auto& v : pixels_) v = std::clamp(v, lo, hi);
}

double Image::min_value() const {
  return pixels_.empty() ? 0.0 : *std::min_element(pixels_.begin(), pixels_.end());
}

double Image::max_value() const {
  return pixels_.empty() ? 0.0 : *std::max_element(pixels_.begin(), pixels_.end());
}

double Image::mean() const {
  if (pixels_.empty()) return 0.0;
  return std::accumulate(pixels_.begin(), pixels_.end(), 0.0) / static_cast<double>(pixels_.size());
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCategory::shape, std::string(what) + ": shape mismatch " + a.shape_string() +
                                          " vs " + b.shape_string());
  }
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorCategory::io, "cannot read image: " + path.string());
  }
  Image out(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(y, x, 0) = row[x][2] / 255.0;
      out.at(y, x, 1) = row[x][1] / 255.0;
      out.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return out;
}

static unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void save_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 3 && image.channels() != 1) {
    throw Error(ErrorCategory::shape, "save_png expects 1 or 3 channels, got " + image.shape_string());
  }
  cv::Mat mat(image.height(), image.width(), image.channels() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < image.width(); ++x) {
      if (image.channels() == 3) {
        row[3 * x + 0] = to_byte(image.at(y, x, 2));
        row[3 * x + 1] = to_byte(image.at(y, x, 1));
        row[3 * x + 2] = to_byte(image.at(y, x, 0));
      } else {
        row[x] = to_byte(image.at(y, x, 0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) {
    throw Error(ErrorCategory::io, "cannot write image: " + path.string());
  }
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (auto& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace patchforge
