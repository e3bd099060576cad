#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vseam {

/// Axis-aligned pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool intersects(const Box& other) const {
    return x0 < other.x1 && other.x0 < x1 && y0 < other.y1 && other.y0 < y1;
  }
  bool operator==(const Box&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {0, 0, 0});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }
  Box bounds() const { return {0, 0, width_, height_}; }

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb color);
  void fill(const Box& box, Rgb color);

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Binary mask; nonzero means selected.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height);
  static Mask from_box(int width, int height, const Box& box);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  int count() const;
  bool empty() const { return count() == 0; }

  /// Chebyshev dilation by `radius` pixels.
  Mask dilated(int radius) const;

  bool operator==(const Mask&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);

Mask mask_from_png(const Image& image);
Image mask_to_image(const Mask& mask);

/// Reads only the PNG header; returns {width, height}.
std::array<int, 2> png_dimensions(const std::filesystem::path& path);

/// Number of pixels whose RGB value differs between two same-sized images.
int count_changed_pixels(const Image& a, const Image& b);

}  // namespace vseam
