#include <doctest.h>

#include <algorithm>

#include "bem/cammix.hpp"
#include "bem/errors.hpp"
#include "bem/oracles.hpp"
#include "bem/synthdata.hpp"

using namespace bem;
using namespace bem::cammix;

namespace {

BinaryMap from_rows(const std::vector<std::string>& rows) {
  BinaryMap m{static_cast<int>(rows.size()), static_cast<int>(rows[0].size()), {}};
  for (const auto& r : rows)
    for (char ch : r) m.cells.push_back(ch == '#');
  return m;
}

BinaryMap random_map(Rng& rng, int size, double density) {
  BinaryMap m{size, size, std::vector<std::uint8_t>(size * size)};
  for (auto& c : m.cells) c = bernoulli(rng, density);
  return m;
}

// Backbone whose channel-0 feature map is channel 0 of the input sampled every 4 pixels and whose
// class-0 CAM is that feature map.
nn::BackboneParams sampling_backbone() {
  nn::BackboneParams p = nn::make_backbone({});
  for (auto& layer : p.conv_layers) layer.kernels[4] = 1.0f;  // centre tap, output 0 <- input 0
  p.classifier.weights[0] = 1.0f;
  return p;
}

Image frame_image() {
  Image img(32, 32, 3, 0.0f);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (y == 0 || x == 0 || y >= 28 || x >= 28) img.at(y, x, 0) = 1.0f;
  return img;
}

Image filled(float v) { return Image(32, 32, 3, v); }

}  // namespace

TEST_CASE("normalize and threshold") {
  CHECK(normalize_and_threshold(std::vector<float>(16, 3.0f), 4, 4, 0.8).cells == std::vector<std::uint8_t>(16, 0));

  std::vector<float> one(16, 0.1f);
  one[5] = 2.0f;
  one[6] = 0.5f;
  const BinaryMap m = normalize_and_threshold(one, 4, 4, 0.8);
  for (int i = 0; i < 16; ++i) CHECK(m.cells[i] == (i == 5));

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> cam(64);
    for (float& v : cam) v = static_cast<float>(normal(rng, 0.0, 3.0));
    const double tau = uniform01(rng);
    const BinaryMap got = normalize_and_threshold(cam, 8, 8, tau);
    float lo = cam[0], hi = cam[0];
    for (float v : cam) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int i = 0; i < 64; ++i) REQUIRE(got.cells[i] == (((cam[i] - lo) / (hi - lo)) > tau));
    // Raising the threshold never adds cells.
    const BinaryMap higher = normalize_and_threshold(cam, 8, 8, std::min(1.0, tau + 0.1));
    for (int i = 0; i < 64; ++i) REQUIRE(higher.cells[i] <= got.cells[i]);
  }
}

TEST_CASE("largest component") {
  const BinaryMap two = from_rows({"##.....#",
                                   "##.....#",
                                   "#......#",
                                   ".......#",
                                   ".......#",
                                   "......##",
                                   "........",
                                   "........"});
  const Component c = largest_component(two);
  CHECK(c.area == 7);
  CHECK(c.bounds == BBox{6, 0, 8, 6});

  const BinaryMap diag = from_rows({"#...", ".#..", "..#.", "...#"});
  CHECK(largest_component(diag).area == 4);

  const BinaryMap tie = from_rows({"...#", "#...", "....", "..#."});
  CHECK(largest_component(tie).pixels == std::vector<int>{3});

  CHECK(largest_component(from_rows({"....", "...."})).area == 0);

  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const BinaryMap m = random_map(rng, 16, uniform_real(rng, 0.2, 0.6));
    const Component got = largest_component(m);
    const oracles::OracleComponent ref = oracles::largest_component(m);
    REQUIRE(got.area == ref.area);
    REQUIRE(got.pixels == ref.pixels);
    if (ref.area > 0) REQUIRE(got.bounds == ref.bounds);
  }
}

TEST_CASE("region to box") {
  Rng rng(3);
  const Component empty;
  for (int i = 0; i < 50; ++i) {
    const BoxChoice b = region_to_box(empty, 8, 8, 32, 32, 0.1, rng);
    REQUIRE(b.used_fallback);
    REQUIRE(b.box.valid_in(32, 32));
    const double ratio = b.box.area() / 1024.0;
    // Rounding the sides to whole pixels moves the ratio a little off the sampled value.
    REQUIRE(ratio > 0.07);
    REQUIRE(ratio < 0.6);
  }

  BinaryMap full{8, 8, std::vector<std::uint8_t>(64, 1)};
  const BoxChoice whole = region_to_box(largest_component(full), 8, 8, 32, 32, 0.1, rng);
  CHECK_FALSE(whole.used_fallback);
  CHECK(whole.box == BBox{0, 0, 32, 32});

  BinaryMap block{32, 32, std::vector<std::uint8_t>(1024, 0)};
  for (int y = 4; y < 16; ++y)
    for (int x = 10; x < 22; ++x) block.cells[y * 32 + x] = 1;
  const BoxChoice b = region_to_box(largest_component(block), 32, 32, 64, 64, 0.1, rng);
  CHECK_FALSE(b.used_fallback);
  CHECK(b.box == BBox{20, 8, 44, 32});

  BinaryMap small{8, 8, std::vector<std::uint8_t>(64, 0)};
  small.cells[9] = 1;
  CHECK(region_to_box(largest_component(small), 8, 8, 32, 32, 0.1, rng).used_fallback);
}

TEST_CASE("paste") {
  Rng rng(4);
  const Image dst = data::render_class(1, 10, 32, rng), src = data::render_class(6, 10, 32, rng);

  const PasteResult whole = paste(dst, src, {0, 0, 32, 32});
  CHECK(whole.mixed == src);
  CHECK(whole.area_ratio == 1.0);

  const PasteResult dot = paste(filled(0), filled(1), {3, 4, 4, 5});
  int changed = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) changed += dot.mixed.at(y, x, 0) != 0.0f;
  CHECK(changed == 1);
  CHECK(dot.area_ratio == doctest::Approx(1.0 / 1024));

  CHECK(paste(dst, dst, {5, 5, 20, 9}).mixed == dst);
  CHECK_THROWS_AS(paste(dst, src, {0, 0, 33, 4}), ContractViolation);

  for (int i = 0; i < 100; ++i) {
    const BBox box = random_box(32, 32, 0.1, 0.5, rng);
    const Image mixed = paste(dst, src, box).mixed;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c) {
          const bool inside = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
          REQUIRE(mixed.at(y, x, c) == (inside ? src : dst).at(y, x, c));
        }
  }
}

TEST_CASE("cutmix boxes stay inside the image") {
  Rng rng(5);
  double total = 0.0;
  int n = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto box = cutmix_box(32, 32, rng);
    if (!box) continue;
    REQUIRE(box->valid_in(32, 32));
    total += box->area() / 1024.0;
    ++n;
  }
  CHECK(n > 1900);
  CHECK(total / n < 0.5);
}

TEST_CASE("batch mixing") {
  Rng rng(6);
  const nn::BackboneParams net = sampling_backbone();
  const std::vector<Image> dst{filled(0.25f), filled(0.75f)};
  MixConfig cfg;

  SUBCASE("no draws passes the batch through") {
    const std::vector<balance::EntropyMask> masks{{true, false}, {false, true}};
    const std::vector<std::optional<mixbank::Draw>> none(2);
    const MixBatch out = cammix_batch(dst, masks, none, none, net, cfg, rng);
    CHECK(out.mixed == dst);
    CHECK(out.lambda == 1.0);
    CHECK_FALSE(out.outcomes[0].mixed);
  }

  SUBCASE("a frame-shaped activation spans the whole image") {
    const mixbank::Draw frame{{frame_image(), 0, 1.0f}, 0};
    const std::vector<balance::EntropyMask> masks{{false, true}};
    const std::vector<std::optional<mixbank::Draw>> lab(1), unl{frame};
    const MixBatch out = cammix_batch(std::span(dst).first(1), masks, lab, unl, net, cfg, rng);
    CHECK(out.outcomes[0].mixed);
    CHECK_FALSE(out.outcomes[0].used_fallback);
    CHECK(out.outcomes[0].box == BBox{0, 0, 32, 32});
    CHECK(out.mixed[0] == frame_image());
    CHECK(out.lambda == 0.0);
  }

  SUBCASE("masks choose the source origin and lambda averages the kept areas") {
    const mixbank::Draw lab_draw{{frame_image(), 0, 1.0f}, 0};
    Image corner(32, 32, 3, 0.0f);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) corner.at(y, x, 0) = 1.0f;
    const mixbank::Draw unl_draw{{corner, 0, 0.97f}, 0};
    const std::vector<balance::EntropyMask> masks{{true, false}, {false, true}};
    const std::vector<std::optional<mixbank::Draw>> lab{lab_draw, lab_draw}, unl{unl_draw, unl_draw};
    const MixBatch out = cammix_batch(dst, masks, lab, unl, net, cfg, rng);
    CHECK(out.outcomes[0].source_origin == Origin::kLabeled);
    CHECK(out.outcomes[1].source_origin == Origin::kUnlabeled);
    CHECK(out.outcomes[1].source_confidence == 0.97f);
    CHECK(out.outcomes[1].box == BBox{0, 0, 16, 16});
    CHECK(out.outcomes[1].area_ratio == 0.25);
    CHECK(out.lambda == doctest::Approx((0.0 + 0.75) / 2));
  }

  SUBCASE("pixel conservation with real activations") {
    Rng init(7);
    const nn::BackboneParams live = nn::init_backbone({}, init);
    std::vector<Image> batch;
    std::vector<std::optional<mixbank::Draw>> lab, unl;
    std::vector<balance::EntropyMask> masks;
    for (int i = 0; i < 6; ++i) {
      batch.push_back(data::render_class(i, 10, 32, rng));
      lab.push_back(mixbank::Draw{{data::render_class(9 - i, 10, 32, rng), 9 - i, 1.0f}, 9 - i});
      unl.push_back(i % 3 == 0 ? std::nullopt
                               : std::optional(mixbank::Draw{{data::render_class(i, 10, 32, rng), i, 0.96f}, i}));
      masks.push_back(i % 2 ? balance::EntropyMask{true, false} : balance::EntropyMask{false, true});
    }
    const MixBatch out = cammix_batch(batch, masks, lab, unl, live, cfg, rng);
    double kept = 0.0;
    for (int i = 0; i < 6; ++i) {
      const auto& oc = out.outcomes[i];
      const auto& draw = masks[i].high ? lab[i] : unl[i];
      CHECK(oc.mixed == draw.has_value());
      if (!oc.mixed) {
        CHECK(out.mixed[i] == batch[i]);
        kept += 1.0;
        continue;
      }
      CHECK(oc.area_ratio > 0.0);
      kept += 1.0 - oc.area_ratio;
      for (std::size_t k = 0; k < batch[i].pixels.size(); ++k) {
        const float v = out.mixed[i].pixels[k];
        REQUIRE((v == batch[i].pixels[k] || v == draw->entry.image.pixels[k]));
      }
    }
    CHECK(out.lambda == doctest::Approx(kept / 6));
  }
}
