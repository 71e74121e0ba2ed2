#include "bem/cammix.hpp"

#include <algorithm>
#include <cmath>

#include "bem/errors.hpp"

namespace bem::cammix {

BinaryMap normalize_and_threshold(std::span<const float> cam, int height, int width, double tau_c) {
  require(height > 0 && width > 0 && cam.size() == static_cast<std::size_t>(height) * width,
          "normalize_and_threshold: map size mismatch");
  BinaryMap out{height, width, std::vector<std::uint8_t>(cam.size(), 0)};
  const auto [lo_it, hi_it] = std::minmax_element(cam.begin(), cam.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < cam.size(); ++i) out.cells[i] = ((cam[i] - lo) / (hi - lo)) > tau_c ? 1 : 0;
  return out;
}

Component largest_component(const BinaryMap& map) {
  const int h = map.height, w = map.width;
  std::vector<std::uint8_t> seen(map.cells.size(), 0);
  Component best;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (!map.cells[start] || seen[start]) continue;
    Component comp;
    comp.bounds = {w, h, -1, -1};
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      comp.pixels.push_back(idx);
      const int y = idx / w, x = idx % w;
      comp.bounds.x0 = std::min(comp.bounds.x0, x);
      comp.bounds.y0 = std::min(comp.bounds.y0, y);
      comp.bounds.x1 = std::max(comp.bounds.x1, x + 1);
      comp.bounds.y1 = std::max(comp.bounds.y1, y + 1);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int n = ny * w + nx;
          if (map.cells[n] && !seen[n]) {
            seen[n] = 1;
            stack.push_back(n);
          }
        }
    }
    comp.area = static_cast<long>(comp.pixels.size());
    if (comp.area > best.area) {
      std::sort(comp.pixels.begin(), comp.pixels.end());
      best = std::move(comp);
    }
  }
  return best;
}

BBox random_box(int image_h, int image_w, double min_ratio, double max_ratio, Rng& rng) {
  const double ratio = uniform_real(rng, min_ratio, max_ratio);
  const double aspect = uniform_real(rng, 0.5, 2.0);
  const double area = ratio * image_h * image_w;
  const int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, image_w);
  const int bh = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, image_h);
  const int x0 = uniform_int(rng, 0, image_w - bw);
  const int y0 = uniform_int(rng, 0, image_h - bh);
  return {x0, y0, x0 + bw, y0 + bh};
}

BoxChoice region_to_box(const Component& component, int map_h, int map_w, int image_h, int image_w, double tau_a,
                        Rng& rng) {
  require(map_h > 0 && map_w > 0 && image_h % map_h == 0 && image_w % map_w == 0,
          "region_to_box: image size must be an integer multiple of the map size");
  const double ratio = static_cast<double>(component.area) / (static_cast<double>(map_h) * map_w);
  if (component.area == 0 || ratio < tau_a) return {random_box(image_h, image_w, tau_a, 0.5, rng), true};
  const int sy = image_h / map_h, sx = image_w / map_w;
  const BBox& b = component.bounds;
  BBox box{std::clamp(b.x0 * sx, 0, image_w), std::clamp(b.y0 * sy, 0, image_h), std::clamp(b.x1 * sx, 0, image_w),
           std::clamp(b.y1 * sy, 0, image_h)};
  return {box, false};
}

std::optional<BBox> cutmix_box(int image_h, int image_w, Rng& rng) {
  const double lambda = uniform01(rng);
  const double cut = std::sqrt(1.0 - lambda);
  const int cw = static_cast<int>(std::lround(image_w * cut));
  const int ch = static_cast<int>(std::lround(image_h * cut));
  const int cx = uniform_int(rng, 0, image_w - 1);
  const int cy = uniform_int(rng, 0, image_h - 1);
  BBox box{std::clamp(cx - cw / 2, 0, image_w), std::clamp(cy - ch / 2, 0, image_h),
           std::clamp(cx - cw / 2 + cw, 0, image_w), std::clamp(cy - ch / 2 + ch, 0, image_h)};
  if (box.x1 <= box.x0 || box.y1 <= box.y0) return std::nullopt;
  return box;
}

PasteResult paste(const Image& dst, const Image& src, const BBox& box) {
  require(dst.same_shape(src), "paste: source and destination shapes differ");
  require(box.valid_in(dst.width, dst.height), "paste: box outside the image");
  PasteResult out{dst, static_cast<double>(box.area()) / (static_cast<double>(dst.height) * dst.width)};
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      for (int c = 0; c < dst.channels; ++c) out.mixed.at(y, x, c) = src.at(y, x, c);
  return out;
}

MixBatch cammix_batch(std::span<const Image> strong_unlabeled, std::span<const balance::EntropyMask> masks,
                      std::span<const std::optional<mixbank::Draw>> labeled_draws,
                      std::span<const std::optional<mixbank::Draw>> unlabeled_draws, const nn::BackboneParams& backbone,
                      const MixConfig& cfg, Rng& rng) {
  const std::size_t batch = strong_unlabeled.size();
  require(masks.size() == batch && labeled_draws.size() == batch && unlabeled_draws.size() == batch,
          "cammix_batch: inputs must all have the batch length");
  MixBatch out;
  out.mixed.assign(strong_unlabeled.begin(), strong_unlabeled.end());
  out.outcomes.resize(batch);

  std::vector<const mixbank::Draw*> chosen(batch, nullptr);
  std::vector<Image> sources;
  std::vector<std::size_t> source_of;
  for (std::size_t m = 0; m < batch; ++m) {
    const auto& draw = masks[m].high ? labeled_draws[m] : unlabeled_draws[m];
    if (!draw) continue;
    chosen[m] = &*draw;
    source_of.push_back(m);
    sources.push_back(draw->entry.image);
  }

  std::optional<nn::BackboneOutput> source_out;
  if (cfg.box_mode == BoxMode::kCam && !sources.empty())
    source_out = nn::forward(backbone, stack_images(sources), nn::Retain::kNone);

  for (std::size_t i = 0; i < source_of.size(); ++i) {
    const std::size_t m = source_of[i];
    const mixbank::Draw& draw = *chosen[m];
    MixOutcome& oc = out.outcomes[m];
    const Image& dst = strong_unlabeled[m];
    oc.mixed = true;
    oc.source_class = draw.class_idx;
    oc.source_origin = masks[m].high ? Origin::kLabeled : Origin::kUnlabeled;
    oc.source_confidence = draw.entry.confidence;
    if (cfg.box_mode == BoxMode::kCam) {
      const Tensor4& fm = source_out->feature_maps;
      const std::vector<float> map = nn::cam(*source_out, backbone, static_cast<int>(i), draw.class_idx);
      oc.cam_mask = normalize_and_threshold(map, fm.height(), fm.width(), cfg.tau_c);
      const BoxChoice choice =
          region_to_box(largest_component(oc.cam_mask), fm.height(), fm.width(), dst.height, dst.width, cfg.tau_a, rng);
      oc.box = choice.box;
      oc.used_fallback = choice.used_fallback;
    } else {
      const auto box = cutmix_box(dst.height, dst.width, rng);
      if (!box) {
        oc = MixOutcome{};
        continue;
      }
      oc.box = *box;
    }
    PasteResult pasted = paste(dst, draw.entry.image, oc.box);
    out.mixed[m] = std::move(pasted.mixed);
    oc.area_ratio = pasted.area_ratio;
  }

  double lambda_sum = 0.0;
  for (const auto& oc : out.outcomes) lambda_sum += 1.0 - oc.area_ratio;
  out.lambda = batch == 0 ? 1.0 : lambda_sum / static_cast<double>(batch);
  return out;
}

}  // namespace bem::cammix
