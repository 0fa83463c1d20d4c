#include "maa/image.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <regex>
#include <stdexcept>
#include <string>

namespace maa {

float Image::min_value() const {
  return data.empty() ? 0.0f : *std::min_element(data.begin(), data.end());
}

float Image::max_value() const {
  return data.empty() ? 0.0f : *std::max_element(data.begin(), data.end());
}

void Image::validate() const {
  if (channels != 3) throw std::invalid_argument("image: expected 3 channels, got " + std::to_string(channels));
  if (height != width) {
    throw std::invalid_argument("image: expected square extent, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (data.size() != 3 * static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("image: payload size does not match extent");
  }
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("image: value " + std::to_string(v) + " outside [0,1]");
    }
  }
}

float linf_distance(const Image& a, const Image& b) {
  if (a.data.size() != b.data.size()) throw std::invalid_argument("linf_distance: size mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Image resize_image(const Image& img, int out_h, int out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  ad::Tape<float> tape;
  auto x = tape.constant(img.to_matrix<float>());
  auto y = ad::resize_bilinear(x, img.extent(), out_h, out_w);
  return Image::from_matrix(y.value(), out_h, out_w);
}

// --- PNG ---------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_png(const Image& img, const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_png: cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng init failed");
  }
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        rows[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = quantize(img.at(c, y, x));
      }
    }
  }
  std::vector<png_bytep> row_ptrs(img.height);
  for (int y = 0; y < img.height; ++y) row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  std::vector<std::uint8_t> rows;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 8 || png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: expected 8-bit RGB in " + path.string());
  }
  rows.resize(static_cast<std::size_t>(h) * w * 3);
  row_ptrs.resize(h);
  for (int y = 0; y < h; ++y) row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(rows[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return img;
}

// --- NPY ---------------------------------------------------------------------

void write_npy(const Image& img, const std::filesystem::path& path) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (3, " +
                       std::to_string(img.height) + ", " + std::to_string(img.width) + "), }";
  const std::size_t preamble = 10;
  std::size_t total = preamble + header.size() + 1;
  const std::size_t padded = (total + 63) / 64 * 64;
  header.append(padded - total, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_npy: cannot open " + path.string());
  const char magic[] = "\x93NUMPY";
  out.write(magic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_npy: write failed for " + path.string());
}

Image read_npy(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) {
    throw std::runtime_error("read_npy: not an npy file: " + path.string());
  }
  const std::size_t len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (bytes.size() < 10 + len) throw std::runtime_error("read_npy: truncated header in " + path.string());
  const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(len));
  std::smatch m;
  static const std::regex shape_re(R"('shape': \(3, (\d+), (\d+)\))");
  if (header.find("'<f4'") == std::string::npos || !std::regex_search(header, m, shape_re)) {
    throw std::runtime_error("read_npy: unsupported layout in " + path.string());
  }
  const int h = std::stoi(m[1].str()), w = std::stoi(m[2].str());
  Image img(h, w);
  const std::size_t payload = img.data.size() * sizeof(float);
  if (bytes.size() != 10 + len + payload) throw std::runtime_error("read_npy: payload size mismatch in " + path.string());
  std::memcpy(img.data.data(), bytes.data() + 10 + len, payload);
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace maa
