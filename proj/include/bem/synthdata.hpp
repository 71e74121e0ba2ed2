#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bem/image.hpp"
#include "bem/rng.hpp"

// Procedural long-tailed image classification data with weak/strong views.
namespace bem::data {

struct DatasetSpec {
  int num_classes = 10;
  int n1 = 100;         // labeled count of the head class
  int m1 = 500;         // largest unlabeled class count
  double gamma_l = 10;  // labeled imbalance ratio, >= 1
  double gamma_u = 10;  // unlabeled imbalance ratio; < 1 reverses the ordering
  int image_size = 32;
  int test_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

inline constexpr int kImageChannels = 3;

struct LabeledSample {
  Image image;
  int label = 0;
};

// Learner-facing unlabeled record: carries no class information.
struct UnlabeledSample {
  Image image;
};

struct Dataset {
  std::vector<LabeledSample> labeled;
  std::vector<UnlabeledSample> unlabeled;
  std::vector<LabeledSample> test;
};

// Ground truth of the unlabeled split, index-aligned with Dataset::unlabeled.
// Held by evaluation code only.
struct UnlabeledAudit {
  std::vector<int> hidden_labels;
  std::vector<int> class_counts;
};

// counts[c] = max(1, round(n1 * gamma^(-(c-1)/(C-1)))) for 1-indexed c.
std::vector<int> longtail_counts(int n1, double gamma, int num_classes);

// Unlabeled per-class counts. For gamma_u >= 1 this is longtail_counts(m1, gamma_u, C);
// for gamma_u < 1 it is the reverse of longtail_counts(m1, 1/gamma_u, C), so m1 stays the largest count.
std::vector<int> unlabeled_counts(int m1, double gamma_u, int num_classes);

struct Generated {
  Dataset dataset;
  UnlabeledAudit audit;
};

Generated generate(const DatasetSpec& spec);

// Classes sharing geometry and differing only in a small detail.
std::vector<std::pair<int, int>> hard_class_pairs();

struct RenderOptions {
  double noise_sigma = 0.05;
};

Image render_class(int class_idx, int num_classes, int image_size, Rng& rng, const RenderOptions& options = {});

struct WeakParams {
  int dx = 0;  // crop offset in [-4, 4]
  int dy = 0;
  bool flip = false;
};

enum class Photometric { kBrightness, kContrast, kPosterize };

struct StrongParams {
  WeakParams weak;
  Photometric op = Photometric::kBrightness;
  double magnitude = 1.0;  // brightness/contrast factor, or posterize bit depth
  int cutout_cx = 0;       // cutout centre; the square may be clipped at the border
  int cutout_cy = 0;
};

inline constexpr int kCropPad = 4;
inline constexpr float kCutoutFill = 0.5f;

WeakParams sample_weak_params(Rng& rng);
StrongParams sample_strong_params(int image_size, Rng& rng);

// Reflect-pad by 4, crop back to size at offset (dx, dy), optional horizontal flip.
Image apply_weak(const Image& image, const WeakParams& params);
Image apply_strong(const Image& image, const StrongParams& params);

Image weak_aug(const Image& image, Rng& rng);
Image strong_aug(const Image& image, Rng& rng);

// "BEMD" flat binary container for one split. Little-endian:
//   char[4] magic, u32 version, u32 classes, u32 height, u32 width, u32 channels,
//   u32 counts[classes], f32 pixels[n][height][width][channels], u32 labels[n]
// with samples ordered as stored; unlabeled splits are written with their audit labels.
void save_split(const std::string& path, const std::vector<LabeledSample>& samples, int num_classes);
std::vector<LabeledSample> load_split(const std::string& path, int* num_classes = nullptr);

}  // namespace bem::data
