#include "vseam/image.hpp"

#include <png.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "vseam/error.hpp"

namespace vseam {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidDimensionError("negative image size");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill[0];
    data_[i + 1] = fill[1];
    data_[i + 2] = fill[2];
  }
}

Rgb Image::at(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Image::set(int x, int y, Rgb color) {
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  data_[i] = color[0];
  data_[i + 1] = color[1];
  data_[i + 2] = color[2];
}

void Image::fill(const Box& box, Rgb color) {
  const int bx0 = std::max(box.x0, 0), by0 = std::max(box.y0, 0);
  const int bx1 = std::min(box.x1, width_), by1 = std::min(box.y1, height_);
  for (int y = by0; y < by1; ++y)
    for (int x = bx0; x < bx1; ++x) set(x, y, color);
}

Mask::Mask(int width, int height)
    : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, 0) {}

Mask Mask::from_box(int width, int height, const Box& box) {
  Mask m(width, height);
  for (int y = std::max(box.y0, 0); y < std::min(box.y1, height); ++y)
    for (int x = std::max(box.x0, 0); x < std::min(box.x1, width); ++x) m.set(x, y, true);
  return m;
}

int Mask::count() const {
  return static_cast<int>(std::count_if(bits_.begin(), bits_.end(),
                                        [](std::uint8_t b) { return b != 0; }));
}

Mask Mask::dilated(int radius) const {
  if (radius <= 0) return *this;
  // Separable max filter: rows, then columns.
  Mask rows(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      bool v = false;
      for (int dx = -radius; dx <= radius && !v; ++dx) {
        const int xx = x + dx;
        v = xx >= 0 && xx < width_ && at(xx, y);
      }
      rows.set(x, y, v);
    }
  Mask out(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      bool v = false;
      for (int dy = -radius; dy <= radius && !v; ++dy) {
        const int yy = y + dy;
        v = yy >= 0 && yy < height_ && rows.at(x, yy);
      }
      out.set(x, y, v);
    }
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.data().data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.data().data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.data().data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(std::string("png decode: ") + img.message);
  }
  return out;
}

static std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image read_png(const std::filesystem::path& path) {
  try {
    return decode_png(slurp(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::array<int, 2> png_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 24> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (in.gcount() != 24 || !std::equal(std::begin(kSig), std::end(kSig), header.begin()))
    throw IoError(path.string() + ": not a PNG file");
  auto be32 = [&](int off) {
    return static_cast<int>((header[off] << 24) | (header[off + 1] << 16) |
                            (header[off + 2] << 8) | header[off + 3]);
  };
  return {be32(16), be32(20)};
}

Mask mask_from_png(const Image& image) {
  Mask m(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const auto p = image.at(x, y);
      m.set(x, y, p[0] != 0 || p[1] != 0 || p[2] != 0);
    }
  return m;
}

Image mask_to_image(const Mask& mask) {
  Image img(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) img.set(x, y, {255, 255, 255});
  return img;
}

int count_changed_pixels(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw ShapeMismatchError("image sizes differ");
  int n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) n += a.at(x, y) != b.at(x, y) ? 1 : 0;
  return n;
}

}  // namespace vseam
