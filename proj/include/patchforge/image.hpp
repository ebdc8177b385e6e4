#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace patchforge {

// Dense H x W x C buffer of doubles, row-major with interleaved channels.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double& at(int y, int x, int c) noexcept { return pixels_[index(y, x, c)]; }
  double at(int y, int x, int c) const noexcept { return pixels_[index(y, x, c)]; }

  std::span<double> data() noexcept { return pixels_; }
  std::span<const double> data() const noexcept { return pixels_; }
  double& operator[](std::size_t i) noexcept { return pixels_[i]; }
  double operator[](std::size_t i) const noexcept { return pixels_[i]; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  std::string shape_string() const;

  void fill(double value);
  void clamp(double lo = 0.0, double hi = 1.0);
  double min_value() const;
  double max_value() const;
  double mean() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> pixels_;
};

// Throws Error(shape) naming `what` when shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

// 8-bit codecs. Values are mapped linearly between [0, 1] and [0, 255].
Image load_image(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

// Round-trip through 8-bit quantization (what save/load does to pixel values).
Image quantize_8bit(const Image& image);

}  // namespace patchforge
