// Acceptance gate: prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//   acceptance [criteria...] [--out DIR] [--iterations T] [--seeds 1,2,3]
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "bem/config.hpp"
#include "bem/experiment.hpp"
#include "bem/learner.hpp"
#include "bem/selfcheck.hpp"

using namespace bem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pts(double v) { return fmt("%+.2f pts", 100.0 * v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1: oracle battery without the gradient family.
Outcome oracle_battery() {
  const auto t0 = std::chrono::steady_clock::now();
  const selfcheck::Hooks hooks = selfcheck::default_hooks();
  std::vector<selfcheck::CheckResult> checks;
  for (auto&& part : {selfcheck::check_effective_number(hooks), selfcheck::check_components(), selfcheck::check_masks(),
                      selfcheck::check_ema(), selfcheck::check_sampling(), selfcheck::check_forward()})
    checks.insert(checks.end(), part.begin(), part.end());
  const double secs = seconds_since(t0);
  int failed = 0;
  std::string first_failure;
  for (const auto& c : checks)
    if (!c.passed && failed++ == 0) first_failure = c.family + "/" + c.name + ": " + c.detail;
  Outcome o;
  o.passed = failed == 0 && secs < 60.0;
  o.detail = std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " checks in " +
             fmt("%.1f s", secs) + (failed ? "; first failure " + first_failure : "");
  return o;
}

// 2: backward pass against central differences.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto stats = selfcheck::gradient_check();
  const double secs = seconds_since(t0);
  Outcome o;
  o.passed = stats.sampled >= 200 && stats.failures == 0 && stats.max_rel_error < 1e-3 && secs < 60.0;
  o.detail = std::to_string(stats.sampled) + " parameters, " + std::to_string(stats.failures) +
             " above 1e-3, max relative error " + fmt("%.2e", stats.max_rel_error) + ", " + fmt("%.1f s", secs);
  return o;
}

data::DatasetSpec criterion_dataset() {
  data::DatasetSpec spec;  // C=10, gamma 10/10, N1=100, M1=500
  return spec;
}

// 3: with balancing and mixing off, the trainer's loss equals the plain FixMatch objective computed by a
// separate loop that consumes the same random streams.
Outcome fixmatch_reduction() {
  const int steps = 100;
  const data::Generated g = experiment::make_data(criterion_dataset(), 1);
  const data::Dataset& d = g.dataset;
  learner::TrainConfig cfg;
  cfg.bem_enabled = false;
  cfg.mixer = learner::Mixer::kNone;
  cfg.total_iterations = steps;
  cfg.tau = 0.5;
  learner::Trainer trainer(cfg, d, 1);

  const learner::Seeds seeds = learner::Seeds::from_master(1);
  Rng init_rng(seeds.init);
  nn::BackboneParams params = nn::init_backbone({}, init_rng);
  nn::OptimizerState opt = nn::make_optimizer(params, cfg.lr, cfg.momentum, cfg.total_iterations);
  learner::BatchSampler lab_sampler(static_cast<int>(d.labeled.size()), seeds.sampler_labeled);
  learner::BatchSampler unl_sampler(static_cast<int>(d.unlabeled.size()), seeds.sampler_unlabeled);

  int mismatches = 0;
  long confident = 0;
  for (long it = 0; it < steps; ++it) {
    const auto li = lab_sampler.next(cfg.batch_size), ui = unl_sampler.next(cfg.batch_size);
    std::vector<Image> xw, uw, us;
    std::vector<int> labels;
    for (int n = 0; n < cfg.batch_size; ++n) {
      Rng r = learner::augment_rng(seeds.augment, it, n, learner::View::kLabeledWeak);
      xw.push_back(data::weak_aug(d.labeled[li[n]].image, r));
      labels.push_back(d.labeled[li[n]].label);
      Rng rw = learner::augment_rng(seeds.augment, it, n, learner::View::kUnlabeledWeak);
      uw.push_back(data::weak_aug(d.unlabeled[ui[n]].image, rw));
      Rng rs = learner::augment_rng(seeds.augment, it, n, learner::View::kUnlabeledStrong);
      us.push_back(data::strong_aug(d.unlabeled[ui[n]].image, rs));
    }
    const auto weak = nn::forward(params, stack_images(uw), nn::Retain::kNone);
    const learner::PseudoLabels pl = learner::pseudo_label(weak.probs, 10, cfg.tau);
    const auto lab = nn::forward(params, stack_images(xw));
    const auto strong = nn::forward(params, stack_images(us));
    const learner::FixMatchLoss ref = learner::fixmatch_loss(10, lab.logits, labels, strong.logits, pl.classes,
                                                             pl.mask, static_cast<float>(cfg.batch_size));
    confident += std::accumulate(pl.mask.begin(), pl.mask.end(), 0L);

    const learner::StepReport rep = trainer.step();
    if (rep.loss.total != ref.total) ++mismatches;

    nn::BackboneParams grads = nn::backward(params, lab, ref.labeled_grads);
    const nn::BackboneParams strong_grads = nn::backward(params, strong, ref.strong_grads);
    std::vector<std::span<float>> gs;
    std::vector<std::span<const float>> hs;
    nn::for_each_tensor(grads, [&](const std::string&, std::span<float> t) { gs.push_back(t); });
    nn::for_each_tensor(strong_grads, [&](const std::string&, std::span<const float> t) { hs.push_back(t); });
    for (std::size_t i = 0; i < gs.size(); ++i)
      for (std::size_t j = 0; j < gs[i].size(); ++j) gs[i][j] += hs[i][j];
    nn::sgd_step(params, grads, opt);
  }
  Outcome o;
  o.passed = mismatches == 0 && params == trainer.params();
  o.detail = std::to_string(steps - mismatches) + "/" + std::to_string(steps) + " steps bitwise equal, " +
             std::to_string(confident) + " confident pseudo labels used, parameters " +
             (params == trainer.params() ? "identical" : "differ");
  return o;
}

// 4: stored total equals the recomposed five-term formula on every step, for every variant.
Outcome composite_identity() {
  const data::Generated g = experiment::make_data(criterion_dataset(), 2);
  long steps = 0, violations = 0;
  for (const auto& v : experiment::ablation_variants()) {
    learner::TrainConfig cfg;
    cfg.total_iterations = 120;
    cfg.balance.warmup_epochs = 1;
    v.apply(cfg);
    learner::Trainer trainer(cfg, g.dataset, 2);
    for (long i = 0; i < cfg.total_iterations; ++i) {
      const learner::StepReport rep = trainer.step();
      ++steps;
      if (rep.loss.total != rep.loss.recomposed()) ++violations;
    }
  }
  Outcome o;
  o.passed = violations == 0;
  o.detail = std::to_string(steps) + " steps over 9 variants, " + std::to_string(violations) + " violations";
  return o;
}

struct TrainingEvidence {
  experiment::SweepOutput ablate;
  experiment::SweepOutput reversed;
  std::vector<std::uint64_t> seeds;
  long composite_violations = 0;
  double slowest_run = 0.0;
};

const experiment::VariantSummary& summary(const experiment::SweepOutput& s, const std::string& name) {
  for (const auto& v : s.summaries)
    if (v.name == name) return v;
  throw std::runtime_error("missing variant " + name);
}

const std::vector<experiment::RunResult>& runs(const experiment::SweepOutput& s, const std::string& name) {
  for (std::size_t i = 0; i < s.summaries.size(); ++i)
    if (s.summaries[i].name == name) return s.runs[i];
  throw std::runtime_error("missing variant " + name);
}

TrainingEvidence run_training_sweeps(const std::string& out, long iterations, const std::vector<std::uint64_t>& seeds) {
  TrainingEvidence ev;
  ev.seeds = seeds;
  config::RunManifest m;
  m.mode = config::Mode::kAblate;
  m.data = criterion_dataset();
  m.train.total_iterations = iterations;
  m.seeds = seeds;
  m.output_dir = (std::filesystem::path(out) / "ablate").string();
  config::validate(m);
  ev.ablate = experiment::run_sweep(m, experiment::ablation_variants(), &std::cout);

  config::RunManifest r = m;
  r.data.gamma_u = 1.0 / r.data.gamma_l;
  r.output_dir = (std::filesystem::path(out) / "reversed").string();
  const auto all = experiment::ablation_variants();
  ev.reversed = experiment::run_sweep(r, {all[0]}, &std::cout);

  for (const auto* sweep : {&ev.ablate, &ev.reversed})
    for (const auto& per_variant : sweep->runs)
      for (const auto& run : per_variant) {
        ev.composite_violations += run.composite_violations;
        ev.slowest_run = std::max(ev.slowest_run, run.seconds);
      }
  return ev;
}

// 5: full method beats the FixMatch baseline on balanced accuracy and on the few group.
Outcome beats_baseline(const TrainingEvidence& ev) {
  const auto& bem = summary(ev.ablate, "bem");
  const auto& fix = summary(ev.ablate, "fixmatch");
  const double gain = bem.mean_accuracy - fix.mean_accuracy, few_gain = bem.mean_few - fix.mean_few;
  Outcome o;
  o.passed = gain >= 0.02 && few_gain >= 0.05 && ev.slowest_run < 1800.0;
  o.detail = "accuracy " + fmt("%.4f", bem.mean_accuracy) + " vs " + fmt("%.4f", fix.mean_accuracy) + " (" +
             pts(gain) + ", need >= +2), few " + fmt("%.4f", bem.mean_few) + " vs " + fmt("%.4f", fix.mean_few) +
             " (" + pts(few_gain) + ", need >= +5), slowest run " + fmt("%.0f s", ev.slowest_run);
  return o;
}

double class_entropy_spread(const balance::ClassBalanceState& st) {
  std::vector<double> v;
  for (int c = 0; c < st.num_classes(); ++c)
    if (st.e_u_initialized[c]) v.push_back(st.e_u[c]);
  return experiment::stddev(v);
}

// 6: class-wise entropy is more even under the full method.
Outcome entropy_rebalanced(const TrainingEvidence& ev) {
  const auto& bem = runs(ev.ablate, "bem");
  const auto& fix = runs(ev.ablate, "fixmatch");
  int wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < bem.size(); ++s) {
    const double a = class_entropy_spread(bem[s].final_balance), b = class_entropy_spread(fix[s].final_balance);
    wins += a <= b;
    detail += (s ? ", " : "") + std::string("seed ") + std::to_string(ev.seeds[s]) + " " + fmt("%.4f", a) + " vs " +
              fmt("%.4f", b);
  }
  Outcome o;
  const int needed = static_cast<int>(bem.size()) - static_cast<int>(bem.size()) / 3;
  o.passed = wins >= needed;
  o.detail = "class entropy std bem vs fixmatch: " + detail + " (" + std::to_string(wins) + "/" +
             std::to_string(bem.size()) + " seeds, need " + std::to_string(needed) + ")";
  return o;
}

// 7: no single-component removal beats the full method, and the random-draw bank hurts at least as much
// as dropping the class-balanced loss weights.
Outcome ablation_ordering(const TrainingEvidence& ev) {
  const double tie = 0.005;
  const double full = summary(ev.ablate, "bem").mean_accuracy;
  bool ok = true;
  std::string detail = "bem " + fmt("%.4f", full);
  for (const char* name : {"bem_cutmix_instead_of_cammix", "bem_random_draw_instead_of_cbmb", "bem_without_ess",
                           "bem_without_esm", "bem_without_ecb"}) {
    const double acc = summary(ev.ablate, name).mean_accuracy;
    ok &= full + tie >= acc;
    detail += std::string(", ") + name + " " + fmt("%.4f", acc);
  }
  const double drop_cbmb = full - summary(ev.ablate, "bem_random_draw_instead_of_cbmb").mean_accuracy;
  const double drop_ecb = full - summary(ev.ablate, "bem_without_ecb").mean_accuracy;
  ok &= drop_cbmb + tie >= drop_ecb;
  Outcome o;
  o.passed = ok;
  o.detail = detail + "; drop without bank " + pts(drop_cbmb) + " vs without loss weights " + pts(drop_ecb);
  return o;
}

// 8: reversed unlabeled distribution.
Outcome reversed_distribution(const TrainingEvidence& ev) {
  const auto& rev = runs(ev.reversed, "bem");
  const std::vector<int> counts = data::unlabeled_counts(criterion_dataset().m1, 0.1, criterion_dataset().num_classes);
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double worst_l1 = 0.0;
  for (const auto& run : rev) {
    double l1 = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) l1 += std::abs(run.final_balance.d_u[c] - counts[c] / total);
    worst_l1 = std::max(worst_l1, run.final_balance.d_initialized ? l1 : 2.0);
  }
  const double rev_acc = summary(ev.reversed, "bem").mean_accuracy;
  const double con_acc = summary(ev.ablate, "bem").mean_accuracy;
  Outcome o;
  o.passed = worst_l1 < 0.15 && std::abs(rev_acc - con_acc) <= 0.05;
  o.detail = "worst d_u L1 " + fmt("%.4f", worst_l1) + " (need < 0.15), accuracy " + fmt("%.4f", rev_acc) +
             " vs consistent " + fmt("%.4f", con_acc) + " (" + pts(rev_acc - con_acc) + ", need within 5)";
  return o;
}

// 9: the low-entropy share grows between the first post-warm-up 500-step window and the last one.
Outcome low_entropy_growth(const TrainingEvidence& ev) {
  const long window = 500;
  bool ok = true;
  std::string detail;
  const auto& bem = runs(ev.ablate, "bem");
  for (std::size_t s = 0; s < bem.size(); ++s) {
    const auto& trace = bem[s].trace;
    const long total = static_cast<long>(trace.size());
    const long first_start = (bem[s].warmup_iterations + window - 1) / window * window;
    const long last_start = total / window * window - window;
    auto avg = [&](long from) {
      double acc = 0.0;
      for (long i = from; i < from + window; ++i) acc += trace[i].low_entropy_fraction;
      return acc / window;
    };
    if (first_start >= last_start) {
      ok = false;
      detail += (s ? ", " : "") + std::string("seed ") + std::to_string(ev.seeds[s]) + " too short";
      continue;
    }
    const double first = avg(first_start), last = avg(last_start);
    ok &= last > first;
    detail += (s ? ", " : "") + std::string("seed ") + std::to_string(ev.seeds[s]) + " " + fmt("%.3f", first) + " -> " +
              fmt("%.3f", last);
  }
  return {ok, "low-entropy fraction first vs final window: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance criteria");
  std::vector<int> criteria;
  std::string out = "acceptance_runs";
  long iterations = 5000;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  app.add_option("criteria", criteria, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--out", out, "output directory for training runs");
  app.add_option("--iterations", iterations, "training iterations for criteria 5-9");
  app.add_option("--seeds", seeds, "seeds for criteria 5-9")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::set<int> wanted(criteria.begin(), criteria.end());

  std::map<int, Outcome> results;
  const std::map<int, std::string> titles{
      {1, "oracle battery"},
      {2, "gradient check"},
      {3, "FixMatch reduction"},
      {4, "composite loss identity"},
      {5, "improvement over FixMatch"},
      {6, "class entropy rebalanced"},
      {7, "ablation ordering"},
      {8, "reversed unlabeled distribution"},
      {9, "low-entropy share grows"},
  };
  auto report = [&](int id, const Outcome& o) {
    results[id] = o;
    std::printf("criterion %d %s: %s | %s\n", id, o.passed ? "PASS" : "FAIL", titles.at(id).c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  if (wanted.count(1)) report(1, oracle_battery());
  if (wanted.count(2)) report(2, gradient_check());
  if (wanted.count(3)) report(3, fixmatch_reduction());
  if (wanted.count(4)) report(4, composite_identity());

  if (wanted.lower_bound(5) != wanted.end()) {
    const TrainingEvidence ev = run_training_sweeps(out, iterations, seeds);
    std::printf("training sweeps: %ld composite-identity violations across all logged steps\n", ev.composite_violations);
    if (wanted.count(5)) report(5, beats_baseline(ev));
    if (wanted.count(6)) report(6, entropy_rebalanced(ev));
    if (wanted.count(7)) report(7, ablation_ordering(ev));
    if (wanted.count(8)) report(8, reversed_distribution(ev));
    if (wanted.count(9)) report(9, low_entropy_growth(ev));
  }

  int failed = 0;
  for (const auto& [id, o] : results) failed += !o.passed;
  std::printf("%zu criteria, %d passed, %d failed\n", results.size(), static_cast<int>(results.size()) - failed,
              failed);
  return failed == 0 ? 0 : 1;
}
