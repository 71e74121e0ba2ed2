#include <doctest.h>

#include <cmath>
#include <limits>

#include "bem/errors.hpp"
#include "bem/oracles.hpp"
#include "bem/synthdata.hpp"
#include "bem/tinynn.hpp"

using namespace bem;
using namespace bem::nn;

namespace {

Tensor4 random_batch(int n, Rng& rng, int size = 32) {
  Tensor4 t(n, 3, size, size);
  for (float& v : t.data) v = static_cast<float>(uniform01(rng));
  return t;
}

}  // namespace

TEST_CASE("reference backbone shape") {
  const BackboneParams p = make_backbone({});
  CHECK(p.parameter_count() <= 50000);
  CHECK(p.parameter_count() == 8 * 27 + 8 + 16 * 72 + 16 + 32 * 144 + 32 + 10 * 32 + 10);
  CHECK(p.classifier.in_features == p.conv_layers.back().out_channels);
  CHECK(p.feature_size() == 8);
  CHECK(p.feature_stride() == 4);
}

TEST_CASE("zero network gives zero logits and uniform probabilities") {
  Rng rng(1);
  const BackboneOutput out = forward(make_backbone({}), random_batch(3, rng));
  for (float z : out.logits) CHECK(z == 0.0f);
  for (float p : out.probs) CHECK(p == doctest::Approx(0.1f));
}

TEST_CASE("forward is deterministic and row-independent") {
  Rng rng(2);
  const BackboneParams p = init_backbone({}, rng);
  Tensor4 x = random_batch(2, rng);
  std::copy_n(x.data.begin(), x.data.size() / 2, x.data.begin() + x.data.size() / 2);
  const BackboneOutput a = forward(p, x), b = forward(p, x);
  CHECK(a.logits == b.logits);
  CHECK(a.feature_maps == b.feature_maps);
  for (int c = 0; c < 10; ++c) CHECK(a.logits[c] == a.logits[10 + c]);
  for (int n = 0; n < 2; ++n) {
    float sum = 0;
    for (float v : a.probs_row(n)) {
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0f) <= 1e-6f);
  }
  CHECK(a.feature_maps.height() >= 4);
  CHECK(a.feature_maps.all_finite());
}

TEST_CASE("forward matches the recorded golden vector") {
  // Recorded from the straight-line double-precision reference for this seed and pixel stream.
  const double golden[10] = {-0.111360846, -0.108372683, 0.05088113111, 0.07139044729, -0.05246086469,
                             0.07999266904, -0.03415564544, 0.110544711, 0.1934173783, 0.05064577248};
  Rng rng(20240611);
  const BackboneParams p = init_backbone({}, rng);
  Rng pixel_rng(5);
  Image img(32, 32, 3);
  for (float& v : img.pixels) v = static_cast<float>(uniform01(pixel_rng));
  const std::vector<Image> images{img};
  const BackboneOutput out = forward(p, stack_images(images));
  const oracles::DoubleForward ref = oracles::reference_forward(oracles::to_double(p), images);
  for (int c = 0; c < 10; ++c) {
    CHECK(std::abs(out.logits[c] - golden[c]) < 1e-6);
    CHECK(std::abs(ref.logits[c] - golden[c]) < 1e-9);
  }
}

TEST_CASE("shape mismatches name the offending dimension") {
  const BackboneParams p = make_backbone({});
  auto key_of = [&](const Tensor4& t) {
    try {
      forward(p, t);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("none");
  };
  CHECK(key_of(Tensor4(1, 1, 32, 32)) == "channels");
  CHECK(key_of(Tensor4(1, 3, 16, 32)) == "height");
  CHECK(key_of(Tensor4(1, 3, 32, 16)) == "width");
  CHECK(key_of(Tensor4(0, 3, 32, 32)) == "batch");
}

TEST_CASE("backward basics") {
  Rng rng(3);
  const BackboneParams p = init_backbone({}, rng);
  const Tensor4 x = random_batch(4, rng);
  const BackboneOutput out = forward(p, x);

  SUBCASE("zero output gradient gives zero gradients") {
    const BackboneParams g = backward(p, out, std::vector<float>(40, 0.0f));
    for_each_tensor(g, [](const std::string&, std::span<const float> t) {
      for (float v : t) CHECK(v == 0.0f);
    });
  }
  SUBCASE("doubling the output gradient doubles every entry exactly") {
    std::vector<float> lg(40), lg2(40);
    for (int i = 0; i < 40; ++i) {
      lg[i] = static_cast<float>(normal(rng, 0.0, 1.0));
      lg2[i] = 2.0f * lg[i];
    }
    const BackboneParams g1 = backward(p, out, lg), g2 = backward(p, out, lg2);
    std::vector<float> a, b;
    for_each_tensor(g1, [&](const std::string&, std::span<const float> t) { a.insert(a.end(), t.begin(), t.end()); });
    for_each_tensor(g2, [&](const std::string&, std::span<const float> t) { b.insert(b.end(), t.begin(), t.end()); });
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(b[i] == 2.0f * a[i]);
  }
  SUBCASE("missing cache is a usage error") {
    const BackboneOutput bare = forward(p, x, Retain::kNone);
    CHECK_THROWS_AS(backward(p, bare, std::vector<float>(40, 0.0f)), ContractViolation);
  }
}

TEST_CASE("weighted_softmax_ce values") {
  SUBCASE("one-hot row contributes zero") {
    const std::vector<float> logits{100.0f, 0.0f, 0.0f};
    CHECK(weighted_softmax_ce(logits, 3, std::vector<int>{0}, std::vector<float>{1.0f}).loss == doctest::Approx(0.0));
  }
  SUBCASE("uniform row over ten classes contributes ln 10") {
    const auto r = weighted_softmax_ce(std::vector<float>(10, 0.0f), 10, std::vector<int>{4}, std::vector<float>{1.0f});
    CHECK(r.loss == doctest::Approx(2.302585).epsilon(1e-6));
  }
  SUBCASE("[0.9, 0.1] row with weight 0.5") {
    const std::vector<float> logits{std::log(0.9f), std::log(0.1f)};
    const auto r = weighted_softmax_ce(logits, 2, std::vector<int>{0}, std::vector<float>{0.5f});
    CHECK(r.loss == doctest::Approx(0.052680).epsilon(1e-5));
    CHECK(r.logit_grads[0] == doctest::Approx(0.5 * (0.9 - 1.0)).epsilon(1e-5));
    CHECK(r.logit_grads[1] == doctest::Approx(0.5 * 0.1).epsilon(1e-5));
  }
  SUBCASE("zero weight rows contribute nothing") {
    const std::vector<float> logits{1.0f, 2.0f, 3.0f, 0.5f, 0.1f, -1.0f};
    const auto r = weighted_softmax_ce(logits, 3, std::vector<int>{0, 2}, std::vector<float>{0.0f, 1.0f});
    for (int c = 0; c < 3; ++c) CHECK(r.logit_grads[c] == 0.0f);
    const auto only = weighted_softmax_ce(std::span(logits).subspan(3), 3, std::vector<int>{2}, std::vector<float>{1.0f});
    CHECK(r.loss == only.loss);
  }
  SUBCASE("unit weights equal the plain sum of per-row cross entropies") {
    Rng rng(4);
    std::vector<float> logits(50);
    for (float& v : logits) v = static_cast<float>(normal(rng, 0.0, 2.0));
    const std::vector<int> t{1, 3, 0, 9, 5};
    const auto r = weighted_softmax_ce(logits, 10, t, std::vector<float>(5, 1.0f));
    const auto rows = softmax_ce_rows(logits, 10, t);
    float sum = 0.0f;
    for (float v : rows) sum += 1.0f * v;
    CHECK(r.loss == sum);
  }
  SUBCASE("negative weight is a contract violation") {
    CHECK_THROWS_AS(weighted_softmax_ce(std::vector<float>(2, 0.0f), 2, std::vector<int>{0}, std::vector<float>{-1.0f}),
                    ContractViolation);
  }
}

TEST_CASE("cosine learning rate") {
  CHECK(cosine_lr(0, 100, 0.03) == 0.03);
  CHECK(cosine_lr(100, 100, 1.0) == doctest::Approx(0.195090).epsilon(1e-6));
  CHECK(cosine_lr(50, 100, 1.0) == doctest::Approx(0.773010).epsilon(1e-6));
  CHECK(cosine_lr(25, 100, 0.5) / 0.5 == doctest::Approx(cosine_lr(250, 1000, 2.0) / 2.0));
  double prev = cosine_lr(0, 64, 1.0);
  for (long t = 1; t <= 64; ++t) {
    const double lr = cosine_lr(t, 64, 1.0);
    CHECK(lr < prev);
    CHECK(lr > 0.0);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(101, 100, 1.0), ContractViolation);
}

TEST_CASE("sgd with momentum") {
  Rng rng(5);
  BackboneParams p = init_backbone({}, rng);

  SUBCASE("zero gradients leave parameters unchanged") {
    const BackboneParams before = p;
    OptimizerState opt = make_optimizer(p, 0.1, 0.9, 10);
    sgd_step(p, zeros_like(p), opt);
    CHECK(p == before);
    CHECK(opt.iteration == 1);
  }
  SUBCASE("zero momentum is plain gradient descent") {
    const BackboneParams before = p;
    BackboneParams g = zeros_like(p);
    for_each_tensor(g, [&](const std::string&, std::span<float> t) {
      for (float& v : t) v = static_cast<float>(normal(rng, 0.0, 1.0));
    });
    OptimizerState opt = make_optimizer(p, 0.1, 0.0, 10);
    const float lr = static_cast<float>(opt.current_lr());
    sgd_step(p, g, opt);
    std::vector<float> pa, pb, ga;
    for_each_tensor(p, [&](const std::string&, std::span<const float> t) { pa.insert(pa.end(), t.begin(), t.end()); });
    for_each_tensor(before, [&](const std::string&, std::span<const float> t) { pb.insert(pb.end(), t.begin(), t.end()); });
    for_each_tensor(g, [&](const std::string&, std::span<const float> t) { ga.insert(ga.end(), t.begin(), t.end()); });
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i] == doctest::Approx(pb[i] - lr * ga[i]).epsilon(1e-6));
  }
  SUBCASE("two steps with constant gradient move lr * g * 2.9") {
    BackboneParams q = make_backbone({});
    BackboneParams g = zeros_like(q);
    g.classifier.bias[0] = 1.0f;
    // Huge horizon keeps the cosine factor at 1 to double precision for two steps.
    OptimizerState opt = make_optimizer(q, 0.01, 0.9, 1L << 40);
    sgd_step(q, g, opt);
    sgd_step(q, g, opt);
    CHECK(q.classifier.bias[0] == doctest::Approx(-0.01 * 2.9).epsilon(1e-6));
  }
  SUBCASE("non-finite gradient names the tensor and leaves parameters untouched") {
    const BackboneParams before = p;
    BackboneParams g = zeros_like(p);
    g.conv_layers[1].kernels[7] = std::numeric_limits<float>::quiet_NaN();
    OptimizerState opt = make_optimizer(p, 0.1, 0.9, 10);
    try {
      sgd_step(p, g, opt);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("conv2.kernels") != std::string::npos);
    }
    CHECK(p == before);
  }
}

TEST_CASE("class activation maps") {
  Rng rng(6);
  BackboneParams p = init_backbone({}, rng);
  const Tensor4 x = random_batch(2, rng);

  SUBCASE("zero classifier weights give an all-zero map") {
    BackboneParams z = p;
    std::fill(z.classifier.weights.begin(), z.classifier.weights.end(), 0.0f);
    const BackboneOutput out = forward(z, x);
    for (float v : cam(out, z, 1, 3)) CHECK(v == 0.0f);
  }
  SUBCASE("single weight on a delta feature map") {
    BackboneOutput out = forward(p, x);
    std::fill(out.feature_maps.data.begin(), out.feature_maps.data.end(), 0.0f);
    out.feature_maps.at(0, 5, 2, 3) = 1.0f;
    BackboneParams q = p;
    std::fill(q.classifier.weights.begin(), q.classifier.weights.end(), 0.0f);
    q.classifier.weights[4 * 32 + 5] = 0.75f;
    const auto map = cam(out, q, 0, 4);
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) CHECK(map[y * 8 + xx] == ((y == 2 && xx == 3) ? 0.75f : 0.0f));
  }
  SUBCASE("matches a brute-force per-pixel dot product") {
    const BackboneOutput out = forward(p, x);
    for (int c = 0; c < 10; ++c) {
      const auto map = cam(out, p, 1, c);
      for (int i = 0; i < 64; ++i) {
        double ref = 0.0;
        for (int k = 0; k < 32; ++k)
          ref += static_cast<double>(p.classifier.weights[c * 32 + k]) * out.feature_maps.at(1, k, i / 8, i % 8);
        CHECK(map[i] == doctest::Approx(ref).epsilon(1e-5));
      }
    }
  }
  SUBCASE("class out of range") {
    const BackboneOutput out = forward(p, x);
    CHECK_THROWS_AS(cam(out, p, 0, 10), ContractViolation);
  }
}
