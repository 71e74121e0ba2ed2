#include "bem/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bem/errors.hpp"

namespace bem {

bool Tensor4::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

Tensor4 stack_images(std::span<const Image> images) {
  require(!images.empty(), "stack_images: empty batch");
  const Image& first = images.front();
  Tensor4 out(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (int n = 0; n < out.batch(); ++n) {
    const Image& img = images[n];
    if (!img.same_shape(first)) throw ConfigError("stack_images: image " + std::to_string(n) + " has a different shape");
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < img.channels; ++c) out.at(n, c, y, x) = img.at(y, x, c);
  }
  return out;
}

Image image_from_batch(const Tensor4& batch, int index) {
  require(index >= 0 && index < batch.batch(), "image_from_batch: index out of range");
  Image img(batch.height(), batch.width(), batch.channels());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = batch.at(index, c, y, x);
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = image.at(y, x, image.channels == 3 ? c : 0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace bem
