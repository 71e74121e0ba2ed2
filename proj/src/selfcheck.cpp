#include "bem/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>

#include "bem/balance.hpp"
#include "bem/cammix.hpp"
#include "bem/mixbank.hpp"
#include "bem/oracles.hpp"
#include "bem/rng.hpp"
#include "bem/synthdata.hpp"
#include "bem/tinynn.hpp"

namespace bem::selfcheck {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Denominator floor of the gradient relative error, so that two near-zero values compare by absolute error.
constexpr double kGradFloor = 1e-6;

std::vector<Image> random_images(int count, int size, Rng& rng) {
  std::vector<Image> out;
  for (int n = 0; n < count; ++n) {
    Image img(size, size, 3);
    for (float& v : img.pixels) v = static_cast<float>(uniform01(rng));
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

Hooks default_hooks() { return {balance::effective_number}; }

bool Report::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> Report::families() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (std::find(out.begin(), out.end(), c.family) == out.end()) out.push_back(c.family);
  return out;
}

std::vector<CheckResult> check_effective_number(const Hooks& hooks) {
  std::vector<CheckResult> out;
  for (double beta : {0.9, 0.999})
    for (long n : {1L, 10L, 1000L}) {
      const double got = hooks.effective_number(static_cast<double>(n), beta);
      const double want = static_cast<double>(oracles::effective_number_series(n, beta));
      const double err = std::abs(got - want);
      out.push_back({"effective_number", fmt("n=%ld beta=%g", n, beta), err <= 1e-9,
                     fmt("got %.12f, series %.12f, |diff| %.2e", got, want, err)});
    }
  const double anchor = hooks.effective_number(1000.0, 0.999);
  out.push_back({"effective_number", "anchor n=1000 beta=0.999", std::abs(anchor - 632.305) < 5e-4,
                 fmt("%.6f vs 632.305", anchor)});
  const double zero = hooks.effective_number(0.0, 0.999);
  out.push_back({"effective_number", "n=0", zero == 0.0, fmt("%g", zero)});
  return out;
}

std::vector<CheckResult> check_components(std::uint64_t seed, int maps) {
  Rng rng(seed);
  int mismatched = 0, box_mismatched = 0;
  std::string first_failure;
  for (int i = 0; i < maps; ++i) {
    cammix::BinaryMap map{16, 16, std::vector<std::uint8_t>(256)};
    const double density = 0.15 + 0.5 * uniform01(rng);
    for (auto& cell : map.cells) cell = bernoulli(rng, density) ? 1 : 0;
    const cammix::Component got = cammix::largest_component(map);
    const oracles::OracleComponent want = oracles::largest_component(map);
    if (got.area != want.area || got.pixels != want.pixels || (want.area > 0 && !(got.bounds == want.bounds))) {
      ++mismatched;
      if (first_failure.empty()) first_failure = fmt("map %d: area %ld vs %ld", i, got.area, want.area);
    }
    // Box scaling onto a 32x32 image; skip the random fallback.
    if (want.area >= 26) {
      Rng box_rng(seed + i);
      const cammix::BoxChoice choice = cammix::region_to_box(got, 16, 16, 32, 32, 0.1, box_rng);
      const cammix::BBox expect{want.bounds.x0 * 2, want.bounds.y0 * 2, want.bounds.x1 * 2, want.bounds.y1 * 2};
      if (choice.used_fallback || !(choice.box == expect)) ++box_mismatched;
    }
  }
  return {{"flood_fill", fmt("largest component on %d random 16x16 maps", maps), mismatched == 0,
           mismatched == 0 ? "all match the union-find labeling" : first_failure},
          {"flood_fill", "scaled bounding box", box_mismatched == 0, fmt("%d mismatches", box_mismatched)}};
}

std::vector<CheckResult> check_masks(std::uint64_t seed) {
  Rng rng(seed);
  int bad = 0, ties = 0, tie_bad = 0;
  for (int i = 0; i < 20000; ++i) {
    const double tau = uniform_real(rng, 0.0, std::log(10.0));
    // Every fourth sample sits exactly on the boundary.
    const double e = i % 4 == 0 ? tau : uniform_real(rng, 0.0, std::log(10.0));
    const balance::EntropyMask m = balance::entropy_masks(e, tau);
    if (static_cast<int>(m.high) + static_cast<int>(m.low) != 1) ++bad;
    if (e == tau) {
      ++ties;
      if (!m.low) ++tie_bad;
    }
  }
  // A crafted one-hot batch: every entropy equals the threshold 0.
  std::vector<float> row(10, 0.0f);
  row[3] = 1.0f;
  const double h = balance::sample_entropy(row);
  const balance::EntropyMask onehot = balance::entropy_masks(h, 0.0);
  return {{"entropy_masks", "exactly one of high/low on 20000 pairs", bad == 0, fmt("%d violations", bad)},
          {"entropy_masks", "ties go to low", tie_bad == 0 && ties > 0, fmt("%d ties, %d misassigned", ties, tie_bad)},
          {"entropy_masks", "one-hot row sits on a zero threshold", h == 0.0 && onehot.low && !onehot.high,
           fmt("entropy %g", h)}};
}

std::vector<CheckResult> check_ema() {
  std::vector<CheckResult> out;
  const double lambda = 0.999;

  // Towards a zero target each update is a single multiplication by lambda.
  balance::ClassBalanceState st = balance::make_state({10, 5}, 100);
  const std::vector<double> one{1.0}, zero{0.0};
  balance::update_tau_e(st, one, lambda);
  double expect = 1.0;
  bool exact = st.tau_e == 1.0;
  for (int k = 0; k < 100; ++k) {
    balance::update_tau_e(st, zero, lambda);
    expect *= lambda;
    exact = exact && st.tau_e == expect;
  }
  out.push_back({"ema", "geometric decay of tau_e is exact", exact, fmt("%.17g vs %.17g", st.tau_e, expect)});
  out.push_back({"ema", "0.999^100 after 100 zero updates", std::abs(st.tau_e - 0.904792147) < 1e-6,
                 fmt("%.9f", st.tau_e)});

  // d_u: classes absent from every batch decay geometrically; the present class approaches 1.
  balance::ClassBalanceState ds = balance::make_state({10, 5, 2}, 100);
  const std::vector<int> mixed{0, 1, 2, 2}, only0(4, 0);
  balance::update_unlabeled_dist(ds, mixed, lambda);
  double d1 = 0.25, d2 = 0.5;
  bool decay = ds.d_u[1] == d1 && ds.d_u[2] == d2;
  for (int k = 0; k < 50; ++k) {
    balance::update_unlabeled_dist(ds, only0, lambda);
    d1 *= lambda;
    d2 *= lambda;
    decay = decay && ds.d_u[1] == d1 && ds.d_u[2] == d2;
  }
  const double gap = std::abs((1.0 - ds.d_u[0]) - (0.75 * std::pow(lambda, 50)));
  out.push_back({"ema", "unlabeled distribution decay is exact", decay, fmt("d_u[1] %.17g", ds.d_u[1])});
  out.push_back({"ema", "unlabeled distribution stays normalized", gap < 1e-12, fmt("|gap| %.2e", gap)});

  // Fixed point: a constant input leaves the estimate in place.
  balance::ClassBalanceState fp = balance::make_state({10, 5}, 100);
  const std::vector<double> c{0.375};
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    balance::update_tau_e(fp, c, lambda);
    worst = std::max(worst, std::abs(fp.tau_e - 0.375));
  }
  out.push_back({"ema", "constant input is a fixed point", worst < 1e-12, fmt("max drift %.2e", worst)});
  return out;
}

std::vector<CheckResult> check_sampling(std::uint64_t seed, int draws) {
  const int C = 10;
  balance::BalanceConfig cfg;
  balance::ClassBalanceState st = balance::make_state(data::longtail_counts(100, 10.0, C), 2000);
  const std::vector<int> pseudo{0, 0, 0, 1, 1, 2, 3, 5, 7, 9};
  balance::update_unlabeled_dist(st, pseudo, cfg.lambda_d);
  for (int c = 0; c < C; ++c) {
    st.e_x[c] = 0.1 + 0.05 * c;
    st.e_u[c] = 0.2 + 0.03 * c;
    st.e_x_initialized[c] = st.e_u_initialized[c] = true;
  }
  const balance::SamplingProbs probs = balance::sampling_probs(st, cfg);

  mixbank::MixBank bank(C, 4);
  for (int c = 0; c < C; ++c) bank.push(c, Image(2, 2, 3), balance::Origin::kLabeled);
  Rng rng(seed);
  std::vector<double> freq(C, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto d = bank.draw(probs.s_hat, balance::Origin::kLabeled, rng);
    freq[d->class_idx] += 1.0 / draws;
  }
  double worst = 0.0;
  for (int c = 0; c < C; ++c) worst = std::max(worst, std::abs(freq[c] - probs.s_hat[c]));

  std::vector<double> direct(C, 0.0);
  for (int i = 0; i < draws; ++i) direct[mixbank::categorical(probs.s_hat_u, rng)] += 1.0 / draws;
  double worst_u = 0.0;
  for (int c = 0; c < C; ++c) worst_u = std::max(worst_u, std::abs(direct[c] - probs.s_hat_u[c]));

  return {{"sampling", fmt("bank draw frequencies over %d draws", draws), worst < 0.01, fmt("max |diff| %.4f", worst)},
          {"sampling", fmt("categorical frequencies over %d draws", draws), worst_u < 0.01,
           fmt("max |diff| %.4f", worst_u)}};
}

std::vector<CheckResult> check_forward(std::uint64_t seed) {
  Rng rng(seed);
  const nn::BackboneParams params = nn::init_backbone({}, rng);
  const std::vector<Image> images = random_images(3, 32, rng);
  const nn::BackboneOutput out = nn::forward(params, stack_images(images));
  const oracles::DoubleParams dp = oracles::to_double(params);
  const oracles::DoubleForward ref = oracles::reference_forward(dp, images);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < ref.logits.size(); ++i) {
    worst = std::max(worst, std::abs(out.logits[i] - ref.logits[i]));
    scale = std::max(scale, std::abs(ref.logits[i]));
  }
  double cam_worst = 0.0, cam_scale = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < params.config.num_classes; ++c) {
      const auto got = nn::cam(out, params, n, c);
      const auto want = oracles::reference_cam(ref, dp, n, c);
      for (std::size_t i = 0; i < want.size(); ++i) {
        cam_worst = std::max(cam_worst, std::abs(got[i] - want[i]));
        cam_scale = std::max(cam_scale, std::abs(want[i]));
      }
    }
  return {{"forward", "logits match the loop reference", worst <= 1e-4 * std::max(1.0, scale),
           fmt("max |diff| %.2e at scale %.3f", worst, scale)},
          {"forward", "activation maps match the loop reference", cam_worst <= 1e-4 * std::max(1.0, cam_scale),
           fmt("max |diff| %.2e at scale %.3f", cam_worst, cam_scale)}};
}

GradCheckStats gradient_check(std::uint64_t seed, int per_tensor, double step, double tolerance) {
  Rng rng(seed);
  const nn::BackboneParams params = nn::init_backbone({}, rng);
  const int B = 4, C = params.config.num_classes;
  const std::vector<Image> images = random_images(B, params.config.image_size, rng);
  const std::vector<int> targets{1, 4, 7, 9};
  const std::vector<float> weights{1.0f, 0.5f, 2.0f, 1.0f};
  const std::vector<double> dweights(weights.begin(), weights.end());

  const nn::BackboneOutput out = nn::forward(params, stack_images(images));
  const nn::WeightedCe ce = nn::weighted_softmax_ce(out.logits, C, targets, weights);
  const nn::BackboneParams grads = nn::backward(params, out, ce.logit_grads);

  std::vector<std::span<const float>> grad_tensors;
  for_each_tensor(grads, [&](const std::string&, std::span<const float> t) { grad_tensors.push_back(t); });

  oracles::DoubleParams dp = oracles::to_double(params);
  // Match the visiting order of for_each_tensor: conv{i}.kernels, conv{i}.bias, ..., fc.weights, fc.bias.
  std::vector<std::vector<double>*> ordered;
  for (std::size_t l = 0; l < dp.kernels.size(); ++l) {
    ordered.push_back(&dp.kernels[l]);
    ordered.push_back(&dp.biases[l]);
  }
  ordered.push_back(&dp.fc_weights);
  ordered.push_back(&dp.fc_bias);
  std::vector<std::string> names;
  for_each_tensor(params, [&](const std::string& name, std::span<const float>) { names.push_back(name); });

  auto loss = [&](std::vector<std::uint8_t>* pattern) {
    const oracles::DoubleForward f = oracles::reference_forward(dp, images, pattern);
    return oracles::reference_weighted_ce(f.logits, C, targets, dweights);
  };
  std::vector<std::uint8_t> base_pattern, pattern_up, pattern_down;
  loss(&base_pattern);

  GradCheckStats stats;
  for (std::size_t t = 0; t < ordered.size(); ++t) {
    std::vector<double>& tensor = *ordered[t];
    const int size = static_cast<int>(tensor.size());
    std::vector<int> picks(size);
    for (int i = 0; i < size; ++i) picks[i] = i;
    int taken = 0;
    for (int i = 0; i < size && taken < per_tensor; ++i) {
      std::swap(picks[i], picks[uniform_int(rng, i, size - 1)]);
      const int idx = picks[i];
      const double saved = tensor[idx];
      // Central difference at the largest step of the ladder whose perturbations flip no ReLU unit,
      // so the reference never straddles a kink. Without such a step the draw is replaced.
      std::optional<double> fd;
      for (int k = 0; k < 4 && !fd; ++k) {
        const double h = step * std::pow(10.0, 1 - k);
        tensor[idx] = saved + h;
        const double up = loss(&pattern_up);
        tensor[idx] = saved - h;
        const double down = loss(&pattern_down);
        tensor[idx] = saved;
        if (pattern_up == base_pattern && pattern_down == base_pattern) fd = (up - down) / (2.0 * h);
      }
      if (!fd) {
        ++stats.ambiguous;
        continue;
      }
      const double g = grad_tensors[t][idx];
      const double rel = std::abs(g - *fd) / std::max({std::abs(g), std::abs(*fd), kGradFloor});
      stats.max_rel_error = std::max(stats.max_rel_error, rel);
      if (!(rel < tolerance)) ++stats.failures;
      ++stats.sampled;
      ++taken;
    }
    if (taken > 0) stats.tensors.push_back(names[t]);
  }
  return stats;
}

std::vector<CheckResult> check_gradients(std::uint64_t seed) {
  const GradCheckStats s = gradient_check(seed);
  return {{"gradients", fmt("backward vs central differences on %d parameters", s.sampled),
           s.failures == 0 && s.sampled >= 200,
           fmt("%d over tolerance, max relative error %.2e, %zu tensors, %d draws at ReLU kinks replaced", s.failures,
               s.max_rel_error, s.tensors.size(), s.ambiguous)}};
}

Report run_selfcheck(const Hooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  Report r;
  for (auto&& part : {check_effective_number(hooks), check_components(), check_masks(), check_ema(), check_sampling(),
                      check_forward(), check_gradients()})
    r.checks.insert(r.checks.end(), part.begin(), part.end());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void print_report(const Report& report, std::ostream& out) {
  int failed = 0;
  for (const auto& c : report.checks) {
    out << (c.passed ? "[PASS] " : "[FAIL] ") << c.family << " / " << c.name << " : " << c.detail << "\n";
    failed += !c.passed;
  }
  out << report.checks.size() - failed << "/" << report.checks.size() << " checks passed across "
      << report.families().size() << " families in " << fmt("%.2f", report.seconds) << " s\n";
}

}  // namespace bem::selfcheck
