#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bem/balance.hpp"
#include "bem/image.hpp"
#include "bem/mixbank.hpp"
#include "bem/rng.hpp"
#include "bem/tinynn.hpp"

// CAM-guided mixing: threshold the class activation map of a bank sample,
// take the bounding box of its largest connected region and paste that patch
// onto a strongly augmented unlabeled image.
namespace bem::cammix {

using balance::Origin;

// Half-open [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid_in(int image_w, int image_h) const { return 0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h; }
  bool operator==(const BBox&) const = default;
};

struct BinaryMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;  // row-major, 0 or 1

  bool at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x] != 0; }
  bool operator==(const BinaryMap&) const = default;
};

struct Component {
  std::vector<int> pixels;  // row-major cell indices, ascending
  long area = 0;
  BBox bounds;  // in map cells; meaningless when area == 0
};

// Min-max normalize (constant maps become all zero), then cell = [value > tau_c].
BinaryMap normalize_and_threshold(std::span<const float> cam, int height, int width, double tau_c);

// Largest 8-connected component; ties go to the component whose first cell comes earliest in row-major order.
Component largest_component(const BinaryMap& map);

struct BoxChoice {
  BBox box;
  bool used_fallback = false;
};

// Component bounds scaled by the integer stride image/map. When the component covers less than tau_a of the
// map, a random box with area ratio in [tau_a, 0.5] and aspect ratio in [0.5, 2] is returned instead.
BoxChoice region_to_box(const Component& component, int map_h, int map_w, int image_h, int image_w, double tau_a,
                        Rng& rng);

BBox random_box(int image_h, int image_w, double min_ratio, double max_ratio, Rng& rng);

// CutMix box: lambda ~ U(0, 1), side ratio sqrt(1 - lambda), centre uniform, clipped to the image.
// Returns std::nullopt when the clipped box is empty.
std::optional<BBox> cutmix_box(int image_h, int image_w, Rng& rng);

struct PasteResult {
  Image mixed;
  double area_ratio = 0.0;
};

// dst with dst[box] replaced by src[box]; area_ratio = |box| / (H W).
PasteResult paste(const Image& dst, const Image& src, const BBox& box);

enum class BoxMode {
  kCam,     // largest high-activation CAM region
  kCutMix,  // random CutMix box, no localization
};

struct MixConfig {
  double tau_c = 0.8;
  double tau_a = 0.1;
  BoxMode box_mode = BoxMode::kCam;
};

struct MixOutcome {
  bool mixed = false;  // false for passthrough (no source available)
  int source_class = -1;
  Origin source_origin = Origin::kLabeled;
  float source_confidence = 0.0f;
  double area_ratio = 0.0;  // 1 - lambda_m
  bool used_fallback = false;
  BBox box;
  BinaryMap cam_mask;  // thresholded CAM of the source (empty in CutMix mode)
};

struct MixBatch {
  std::vector<Image> mixed;
  double lambda = 1.0;
  std::vector<MixOutcome> outcomes;
};

// For each sample, the labeled draw is used when the high-entropy mask is set and the unlabeled draw
// otherwise. The source CAM is taken at the draw's class with the current backbone. Samples without an
// available draw pass through with lambda_m = 1; lambda is the batch mean of lambda_m.
MixBatch cammix_batch(std::span<const Image> strong_unlabeled, std::span<const balance::EntropyMask> masks,
                      std::span<const std::optional<mixbank::Draw>> labeled_draws,
                      std::span<const std::optional<mixbank::Draw>> unlabeled_draws, const nn::BackboneParams& backbone,
                      const MixConfig& cfg, Rng& rng);

}  // namespace bem::cammix
