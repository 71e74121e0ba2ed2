#include "bem/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "bem/checkpoint.hpp"
#include "bem/errors.hpp"

namespace bem::experiment {

std::uint64_t dataset_seed(std::uint64_t run_seed) { return derive_seed(run_seed, "dataset"); }

data::Generated make_data(const data::DatasetSpec& spec, std::uint64_t run_seed) {
  data::DatasetSpec s = spec;
  s.seed = dataset_seed(run_seed);
  return data::generate(s);
}

namespace {

class PpmDump : public learner::MixDumpSink {
public:
  PpmDump(std::string dir, int limit) : dir_(std::move(dir)), limit_(limit) { std::filesystem::create_directories(dir_); }

  void on_mix(long iteration, int sample, const Image& destination, const Image& source, const Image& mixed,
              const cammix::MixOutcome& outcome) override {
    if (written_ >= limit_) return;
    const std::string stem = dir_ + "/it" + std::to_string(iteration) + "_s" + std::to_string(sample);
    write_ppm(destination, stem + "_dst.ppm");
    write_ppm(source, stem + "_src.ppm");
    write_ppm(mixed, stem + "_mix.ppm");
    if (!outcome.cam_mask.cells.empty()) {
      Image mask(outcome.cam_mask.height, outcome.cam_mask.width, 1);
      for (std::size_t i = 0; i < mask.pixels.size(); ++i) mask.pixels[i] = outcome.cam_mask.cells[i];
      write_ppm(mask, stem + "_cam.ppm");
    }
    ++written_;
  }

private:
  std::string dir_;
  int limit_;
  int written_ = 0;
};

struct Window {
  double entropy = 0.0, lambda = 0.0, low = 0.0;
  double ls = 0, luh = 0, lul = 0, lush = 0, lusl = 0, total = 0;
  std::vector<double> pseudo;
  long steps = 0;

  explicit Window(int C) : pseudo(C, 0.0) {}
  void add(const learner::StepReport& r, int batch) {
    entropy += r.mean_entropy;
    lambda += r.loss.lambda;
    low += static_cast<double>(r.low_entropy) / batch;
    ls += r.loss.l_s;
    luh += r.loss.l_u_h;
    lul += r.loss.l_u_l;
    lush += r.loss.l_us_h;
    lusl += r.loss.l_us_l;
    total += r.loss.total;
    for (std::size_t c = 0; c < pseudo.size(); ++c) pseudo[c] += r.pseudo_counts[c];
    ++steps;
  }
};

}  // namespace

RunResult run_training(const learner::TrainConfig& cfg, const data::Generated& data, std::uint64_t run_seed,
                       const RunOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  learner::Trainer trainer(cfg, data.dataset, run_seed);
  std::optional<PpmDump> dump;
  if (!options.dump_dir.empty()) {
    dump.emplace(options.dump_dir, options.dump_limit);
    trainer.set_mix_dump(&*dump);
  }
  const int C = cfg.balance.num_classes;
  std::vector<int> labeled_counts = trainer.balance_state().labeled_counts;

  RunResult result;
  result.warmup_iterations = trainer.warmup_iterations();
  result.trace.reserve(cfg.total_iterations);
  Window window(C);
  for (long t = 0; t < cfg.total_iterations; ++t) {
    const learner::StepReport rep = trainer.step();
    window.add(rep, cfg.batch_size);
    if (rep.loss.total != rep.loss.recomposed()) ++result.composite_violations;
    result.trace.push_back(
        {rep.iteration, rep.warmed_up, rep.loss, static_cast<double>(rep.low_entropy) / cfg.batch_size});

    const long done = t + 1;
    if (done % cfg.eval_every != 0 && done != cfg.total_iterations) continue;
    const eval::EvalResult ev = eval::evaluate(trainer.params(), data.dataset.test);
    const auto& bs = trainer.balance_state();
    eval::MetricsRow row;
    row.iteration = done;
    row.test_accuracy = ev.accuracy;
    row.per_class_accuracy = ev.per_class_accuracy;
    row.groups = eval::group_accuracy(ev.per_class_accuracy, labeled_counts);
    const double n = static_cast<double>(window.steps);
    row.mean_pseudo_entropy = window.entropy / n;
    row.per_class_entropy = bs.e_u;
    row.per_class_pseudo_count = window.pseudo;
    row.unlabeled_dist = bs.d_u;
    row.lambda = window.lambda / n;
    row.low_entropy_fraction = window.low / n;
    row.tau_e = bs.tau_e;
    row.loss_s = window.ls / n;
    row.loss_u_h = window.luh / n;
    row.loss_u_l = window.lul / n;
    row.loss_us_h = window.lush / n;
    row.loss_us_l = window.lusl / n;
    row.loss_total = window.total / n;
    if (options.on_eval) options.on_eval(row);
    result.rows.push_back(std::move(row));
    window = Window(C);
    if (done == cfg.total_iterations) {
      result.final_eval = ev;
      result.final_groups = result.rows.back().groups;
    }
  }
  result.final_balance = trainer.balance_state();
  if (!options.checkpoint_path.empty()) checkpoint::save(options.checkpoint_path, trainer);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<Variant> ablation_variants() {
  using learner::Mixer;
  using learner::TrainConfig;
  return {
      {"bem", [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCamMix; }},
      {"bem_cutmix_instead_of_cammix", [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCutMix; }},
      {"bem_random_draw_instead_of_cbmb",
       [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCamMix; c.bank_sampling = mixbank::DrawMode::kRandom; }},
      {"bem_without_ess", [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCamMix; c.balance.alpha = 1.0; }},
      {"bem_without_esm", [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCamMix; c.esm_enabled = false; }},
      {"bem_without_ecb", [](TrainConfig& c) { c.bem_enabled = true; c.mixer = Mixer::kCamMix; c.ecb_enabled = false; }},
      {"fixmatch", [](TrainConfig& c) { c.bem_enabled = false; c.mixer = Mixer::kNone; }},
      {"fixmatch_mixup", [](TrainConfig& c) { c.bem_enabled = false; c.mixer = Mixer::kMixUp; }},
      {"fixmatch_cutmix", [](TrainConfig& c) { c.bem_enabled = false; c.mixer = Mixer::kCutMix; }},
  };
}

std::vector<Variant> comparison_variants() {
  auto all = ablation_variants();
  return {all[6], all[0]};
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

VariantSummary summarize(const std::string& name, const std::vector<RunResult>& runs) {
  VariantSummary s;
  s.name = name;
  for (const auto& r : runs) {
    s.accuracy.push_back(r.final_eval.accuracy);
    s.few.push_back(r.final_groups.few);
  }
  s.mean_accuracy = mean(s.accuracy);
  s.std_accuracy = stddev(s.accuracy);
  s.mean_few = mean(s.few);
  s.std_few = stddev(s.few);
  return s;
}

void write_trace(const std::string& path, const std::vector<StepTrace>& trace) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.size());
  for (const auto& t : trace) {
    const auto& l = t.loss;
    rows.push_back({std::to_string(t.iteration), t.warmed_up ? "1" : "0", eval::format_number(l.l_s),
                    eval::format_number(l.l_u_h), eval::format_number(l.l_u_l), eval::format_number(l.l_us_h),
                    eval::format_number(l.l_us_l), eval::format_number(l.lambda), eval::format_number(l.total),
                    eval::format_number(t.low_entropy_fraction)});
  }
  eval::write_table(path,
                    {"iteration", "warmed_up", "loss_s", "loss_u_h", "loss_u_l", "loss_us_h", "loss_us_l", "lambda",
                     "loss_total", "low_entropy_fraction"},
                    rows);
}

void write_summary(const std::string& path, const std::vector<VariantSummary>& summaries) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : summaries) {
    std::string per_seed;
    for (std::size_t i = 0; i < s.accuracy.size(); ++i) per_seed += (i ? ";" : "") + eval::format_number(s.accuracy[i]);
    rows.push_back({s.name, std::to_string(s.accuracy.size()), eval::format_number(s.mean_accuracy),
                    eval::format_number(s.std_accuracy), eval::format_number(s.mean_few),
                    eval::format_number(s.std_few), per_seed});
  }
  eval::write_table(path, {"variant", "seeds", "mean_accuracy", "std_accuracy", "mean_few", "std_few", "accuracy_per_seed"},
                    rows);
}

SweepOutput run_sweep(const config::RunManifest& manifest, const std::vector<Variant>& variants, std::ostream* log,
                      bool write_checkpoints) {
  namespace fs = std::filesystem;
  config::validate(manifest);
  const fs::path root(manifest.output_dir);
  fs::create_directories(root);
  {
    std::ofstream snap(root / "manifest.cfg", std::ios::binary);
    snap << config::to_config_text(manifest);
    if (!snap) throw IoError("cannot write " + (root / "manifest.cfg").string());
  }
  SweepOutput out;
  out.runs.resize(variants.size());
  for (std::uint64_t seed : manifest.seeds) {
    const data::Generated data = make_data(manifest.data, seed);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      learner::TrainConfig cfg = manifest.train;
      variants[v].apply(cfg);
      cfg.validate();
      const fs::path dir = root / variants[v].name / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      RunOptions opts;
      if (manifest.dump_mixes) opts.dump_dir = (dir / "mixes").string();
      if (write_checkpoints) opts.checkpoint_path = (dir / "final.bemc").string();
      if (log)
        opts.on_eval = [&](const eval::MetricsRow& row) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s seed=%llu it=%ld acc=%.4f few=%.4f low=%.3f\n", variants[v].name.c_str(),
                        static_cast<unsigned long long>(seed), row.iteration, row.test_accuracy, row.groups.few,
                        row.low_entropy_fraction);
          *log << buf << std::flush;
        };
      RunResult r = run_training(cfg, data, seed, opts);
      eval::emit_csv(r.rows, cfg.balance.num_classes, (dir / "metrics.csv").string());
      write_trace((dir / "trace.csv").string(), r.trace);
      out.runs[v].push_back(std::move(r));
    }
  }
  for (std::size_t v = 0; v < variants.size(); ++v) out.summaries.push_back(summarize(variants[v].name, out.runs[v]));
  write_summary((root / "summary.csv").string(), out.summaries);
  return out;
}

}  // namespace bem::experiment
