#include "bem/synthdata.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "bem/errors.hpp"

namespace bem::data {

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("classes must be >= 2", "classes");
  if (n1 < 1) throw ConfigError("n1 must be >= 1", "n1");
  if (m1 < 0) throw ConfigError("m1 must be >= 0", "m1");
  if (!(gamma_l >= 1.0)) throw ConfigError("gamma_l must be >= 1", "gamma_l");
  if (!(gamma_u > 0.0)) throw ConfigError("gamma_u must be > 0", "gamma_u");
  if (image_size < 8 || image_size % 4 != 0) throw ConfigError("image_size must be a multiple of 4 and >= 8", "image_size");
  if (test_per_class < 1) throw ConfigError("test_per_class must be >= 1", "test_per_class");
}

std::vector<int> longtail_counts(int n1, double gamma, int num_classes) {
  require(num_classes >= 2, "longtail_counts: need at least two classes");
  require(n1 >= 1, "longtail_counts: n1 must be >= 1");
  require(gamma > 0.0, "longtail_counts: gamma must be positive");
  std::vector<int> counts(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double exponent = -static_cast<double>(c) / (num_classes - 1);
    counts[c] = std::max(1, static_cast<int>(std::lround(n1 * std::pow(gamma, exponent))));
  }
  return counts;
}

std::vector<int> unlabeled_counts(int m1, double gamma_u, int num_classes) {
  if (m1 == 0) return std::vector<int>(num_classes, 0);
  if (gamma_u >= 1.0) return longtail_counts(m1, gamma_u, num_classes);
  std::vector<int> counts = longtail_counts(m1, 1.0 / gamma_u, num_classes);
  std::reverse(counts.begin(), counts.end());
  return counts;
}

std::vector<std::pair<int, int>> hard_class_pairs() { return {{0, 7}, {2, 9}, {3, 8}}; }

namespace {

struct Vec2 {
  double x, y;
};

double box_sdf(Vec2 p, double hx, double hy) {
  const double dx = std::abs(p.x) - hx;
  const double dy = std::abs(p.y) - hy;
  const double outside = std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
  return outside + std::min(std::max(dx, dy), 0.0);
}

double disk_sdf(Vec2 p, double r) { return std::hypot(p.x, p.y) - r; }

Vec2 rotate(Vec2 p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

double bars_sdf(Vec2 p, int count, double half_thickness) {
  double d = 1e9;
  for (int i = 0; i < count; ++i) {
    const double cy = -0.66 + 1.32 * i / (count - 1);
    d = std::min(d, box_sdf({p.x, p.y - cy}, 1.0, half_thickness));
  }
  return d;
}

constexpr double kPinhole = 0.17;

// Signed distance in shape-local units (object radius = 1). Negative inside.
// `hole` offsets the pinhole of the detail classes.
double shape_sdf(int family, Vec2 p, Vec2 hole) {
  switch (family) {
    case 0:  // disk
      return disk_sdf(p, 1.0);
    case 1:  // plus
      return std::min(box_sdf(p, 1.0, 0.28), box_sdf(p, 0.28, 1.0));
    case 2:  // three bars
      return bars_sdf(p, 3, 0.17);
    case 3:  // filled square
      return box_sdf(p, 0.85, 0.85);
    case 4:  // ring
      return std::abs(std::hypot(p.x, p.y) - 0.75) - 0.22;
    case 5:  // corner wedge: lower-left half of the box
      return std::max(box_sdf(p, 0.9, 0.9), (p.x - p.y) / std::numbers::sqrt2);
    case 6: {  // 4x4 checker patch
      const double inside = box_sdf(p, 1.0, 1.0);
      if (inside > 0) return inside;
      const int cx = static_cast<int>(std::floor((p.x + 1.0) * 2.0));
      const int cy = static_cast<int>(std::floor((p.y + 1.0) * 2.0));
      const double fx = (p.x + 1.0) * 2.0 - std::floor((p.x + 1.0) * 2.0);
      const double fy = (p.y + 1.0) * 2.0 - std::floor((p.y + 1.0) * 2.0);
      const double edge = std::min({fx, 1.0 - fx, fy, 1.0 - fy}) / 2.0;
      return ((cx + cy) % 2 == 0) ? -std::min(edge, -inside) : edge;
    }
    case 7:  // disk with a pinhole
      return std::max(disk_sdf(p, 1.0), -disk_sdf({p.x - hole.x, p.y - hole.y}, kPinhole));
    case 8:  // square with a pinhole
      return std::max(box_sdf(p, 0.85, 0.85), -disk_sdf({p.x - hole.x, p.y - hole.y}, kPinhole));
    case 9:  // four bars
      return bars_sdf(p, 4, 0.13);
    default:
      return 1e9;
  }
}

double max_rotation(int family) {
  switch (family) {
    case 0:
    case 4:
    case 7:
      return std::numbers::pi;
    case 2:
    case 9:
      return std::numbers::pi / 6.0;
    default:
      return std::numbers::pi / 12.0;
  }
}

}  // namespace

Image render_class(int class_idx, int num_classes, int image_size, Rng& rng, const RenderOptions& options) {
  require(class_idx >= 0 && class_idx < num_classes, "render_class: class index out of range");
  const int family = class_idx % 10;
  const double half = image_size / 2.0;
  const double unit = image_size / 32.0;
  const double cx = half + uniform_real(rng, -4.0, 4.0) * unit;
  const double cy = half + uniform_real(rng, -4.0, 4.0) * unit;
  const double radius = uniform_real(rng, 6.5, 11.0) * unit;
  const double limit = max_rotation(family);
  const double angle = uniform_real(rng, -limit, limit);
  const Vec2 hole{uniform_real(rng, -0.3, 0.3), uniform_real(rng, -0.3, 0.3)};

  // Low contrast with random polarity: the shape is lighter or darker than the background.
  const double polarity = bernoulli(rng, 0.5) ? 1.0 : -1.0;
  std::array<double, 3> fg{}, bg{};
  for (int c = 0; c < 3; ++c) {
    bg[c] = uniform_real(rng, 0.3, 0.7);
    fg[c] = std::clamp(bg[c] + polarity * uniform_real(rng, 0.12, 0.35), 0.0, 1.0);
  }

  // Small distractor blob somewhere in the frame.
  const double blob_x = uniform_real(rng, 0.0, image_size);
  const double blob_y = uniform_real(rng, 0.0, image_size);
  const double blob_r = uniform_real(rng, 1.0, 2.5) * unit;
  const double blob_shade = uniform_real(rng, -0.25, 0.25);

  Image img(image_size, image_size, kImageChannels);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const Vec2 local = rotate({(x + 0.5 - cx) / radius, (y + 0.5 - cy) / radius}, -angle);
      const double coverage = std::clamp(0.5 - shape_sdf(family, local, hole) * radius, 0.0, 1.0);
      const double blob = std::clamp(0.5 - disk_sdf({x + 0.5 - blob_x, y + 0.5 - blob_y}, blob_r), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        double v = bg[c] + (fg[c] - bg[c]) * coverage + blob_shade * blob;
        if (options.noise_sigma > 0.0) v += normal(rng, 0.0, options.noise_sigma);
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

Generated generate(const DatasetSpec& spec) {
  spec.validate();
  Generated out;
  const int C = spec.num_classes;
  const auto render_split = [&](std::uint64_t split, const std::vector<int>& counts, auto&& emit) {
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < counts[c]; ++i) {
        Rng rng(derive_seed(spec.seed, {split, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
        emit(render_class(c, C, spec.image_size, rng), c);
      }
  };

  render_split(1, longtail_counts(spec.n1, spec.gamma_l, C),
               [&](Image img, int c) { out.dataset.labeled.push_back({std::move(img), c}); });

  out.audit.class_counts = unlabeled_counts(spec.m1, spec.gamma_u, C);
  std::vector<LabeledSample> pool;
  render_split(2, out.audit.class_counts, [&](Image img, int c) { pool.push_back({std::move(img), c}); });
  // Shuffle so that storage order carries no class information.
  Rng shuffle_rng(derive_seed(spec.seed, "unlabeled-order"));
  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[uniform_int(shuffle_rng, 0, static_cast<int>(i) - 1)]);
  for (auto& s : pool) {
    out.audit.hidden_labels.push_back(s.label);
    out.dataset.unlabeled.push_back({std::move(s.image)});
  }

  render_split(3, std::vector<int>(C, spec.test_per_class),
               [&](Image img, int c) { out.dataset.test.push_back({std::move(img), c}); });
  return out;
}

WeakParams sample_weak_params(Rng& rng) {
  WeakParams p;
  p.dx = uniform_int(rng, -kCropPad, kCropPad);
  p.dy = uniform_int(rng, -kCropPad, kCropPad);
  p.flip = bernoulli(rng, 0.5);
  return p;
}

StrongParams sample_strong_params(int image_size, Rng& rng) {
  StrongParams p;
  p.weak = sample_weak_params(rng);
  p.op = static_cast<Photometric>(uniform_int(rng, 0, 2));
  switch (p.op) {
    case Photometric::kBrightness:
    case Photometric::kContrast:
      p.magnitude = uniform_real(rng, 0.5, 1.5);
      break;
    case Photometric::kPosterize:
      p.magnitude = uniform_int(rng, 2, 4);
      break;
  }
  p.cutout_cx = uniform_int(rng, 0, image_size - 1);
  p.cutout_cy = uniform_int(rng, 0, image_size - 1);
  return p;
}

namespace {

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Image apply_weak(const Image& image, const WeakParams& params) {
  require(std::abs(params.dx) <= kCropPad && std::abs(params.dy) <= kCropPad, "apply_weak: crop offset exceeds padding");
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    const int sy = reflect(y + params.dy, image.height);
    for (int x = 0; x < image.width; ++x) {
      const int xc = params.flip ? image.width - 1 - x : x;
      const int sx = reflect(xc + params.dx, image.width);
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

Image apply_strong(const Image& image, const StrongParams& params) {
  Image out = apply_weak(image, params.weak);
  switch (params.op) {
    case Photometric::kBrightness:
      for (float& v : out.pixels) v = std::clamp(v * static_cast<float>(params.magnitude), 0.0f, 1.0f);
      break;
    case Photometric::kContrast: {
      double mean = 0.0;
      for (float v : out.pixels) mean += v;
      mean /= static_cast<double>(out.pixels.size());
      const auto m = static_cast<float>(mean);
      for (float& v : out.pixels) v = std::clamp(m + (v - m) * static_cast<float>(params.magnitude), 0.0f, 1.0f);
      break;
    }
    case Photometric::kPosterize: {
      const float levels = static_cast<float>((1 << static_cast<int>(params.magnitude)) - 1);
      for (float& v : out.pixels) v = std::round(v * levels) / levels;
      break;
    }
  }
  const int side = image.width / 4;
  const int x0 = params.cutout_cx - side / 2;
  const int y0 = params.cutout_cy - side / 2;
  for (int y = std::max(0, y0); y < std::min(out.height, y0 + side); ++y)
    for (int x = std::max(0, x0); x < std::min(out.width, x0 + side); ++x)
      for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = kCutoutFill;
  return out;
}

Image weak_aug(const Image& image, Rng& rng) { return apply_weak(image, sample_weak_params(rng)); }

Image strong_aug(const Image& image, Rng& rng) {
  return apply_strong(image, sample_strong_params(image.width, rng));
}

namespace {

constexpr std::uint32_t kSplitVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated dataset file: " + path);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_split(const std::string& path, const std::vector<LabeledSample>& samples, int num_classes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int h = samples.empty() ? 0 : samples.front().image.height;
  const int w = samples.empty() ? 0 : samples.front().image.width;
  const int ch = samples.empty() ? kImageChannels : samples.front().image.channels;
  std::vector<std::uint32_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    require(s.label >= 0 && s.label < num_classes, "save_split: label out of range");
    require(s.image.height == h && s.image.width == w && s.image.channels == ch, "save_split: mixed image shapes");
    ++counts[s.label];
  }
  out.write("BEMD", 4);
  put_u32(out, kSplitVersion);
  put_u32(out, static_cast<std::uint32_t>(num_classes));
  put_u32(out, static_cast<std::uint32_t>(h));
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(ch));
  for (auto c : counts) put_u32(out, c);
  for (const auto& s : samples)
    for (float v : s.image.pixels) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (const auto& s : samples) put_u32(out, static_cast<std::uint32_t>(s.label));
  if (!out) throw IoError("write failed: " + path);
}

std::vector<LabeledSample> load_split(const std::string& path, int* num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "BEMD", 4) != 0) throw IoError("not a BEMD file: " + path);
  if (get_u32(in, path) != kSplitVersion) throw IoError("unsupported BEMD version: " + path);
  const auto classes = static_cast<int>(get_u32(in, path));
  const auto h = static_cast<int>(get_u32(in, path));
  const auto w = static_cast<int>(get_u32(in, path));
  const auto ch = static_cast<int>(get_u32(in, path));
  std::size_t total = 0;
  for (int c = 0; c < classes; ++c) total += get_u32(in, path);
  std::vector<LabeledSample> samples(total);
  for (auto& s : samples) {
    s.image = Image(h, w, ch);
    for (float& v : s.image.pixels) v = std::bit_cast<float>(get_u32(in, path));
  }
  for (auto& s : samples) {
    s.label = static_cast<int>(get_u32(in, path));
    if (s.label < 0 || s.label >= classes) throw IoError("label out of range in " + path);
  }
  if (num_classes) *num_classes = classes;
  return samples;
}

}  // namespace bem::data
