#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bem {

// Dense H x W x C raster with values in [0, 1], channel-interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  bool operator==(const Image&) const = default;
};

// Batch tensor indexed [batch, channel, height, width].
struct Tensor4 {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(int n, int c, int h, int w, float fill = 0.0f)
      : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int batch() const { return shape[0]; }
  int channels() const { return shape[1]; }
  int height() const { return shape[2]; }
  int width() const { return shape[3]; }
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }
  float& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }
  bool all_finite() const;
  bool operator==(const Tensor4&) const = default;
};

Tensor4 stack_images(std::span<const Image> images);
Image image_from_batch(const Tensor4& batch, int index);

// Binary PPM (P6, 8-bit). Grayscale images are replicated to three channels.
void write_ppm(const Image& image, const std::string& path);

}  // namespace bem
