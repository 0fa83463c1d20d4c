#pragma once

#include "maa/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace maa {

/// Dense 3-channel image, planar CHW layout, values in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), data(3 * static_cast<std::size_t>(h) * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  ad::Extent extent() const { return {channels, height, width}; }

  template <typename T>
  ad::Matrix<T> to_matrix() const {
    ad::Matrix<T> m(channels, static_cast<Eigen::Index>(height) * width);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(data[i]);
    return m;
  }

  template <typename T>
  static Image from_matrix(const ad::Matrix<T>& m, int h, int w) {
    Image img(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) img.data[i] = static_cast<float>(m.data()[i]);
    return img;
  }

  float min_value() const;
  float max_value() const;

  /// Throws unless square with every value in [0, 1].
  void validate() const;

  bool operator==(const Image&) const = default;
};

float linf_distance(const Image& a, const Image& b);

/// Bilinear resize of a plain image (no tape).
Image resize_image(const Image& img, int out_h, int out_w);

/// 8-bit RGB PNG. Values are rounded to the nearest v/255 on write.
void write_png(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

/// Lossless float32 storage (NumPy .npy, shape (3, H, W)).
void write_npy(const Image& img, const std::filesystem::path& path);
Image read_npy(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);

}  // namespace maa
