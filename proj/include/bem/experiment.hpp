#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bem/balance.hpp"
#include "bem/config.hpp"
#include "bem/evalkit.hpp"
#include "bem/learner.hpp"
#include "bem/synthdata.hpp"

namespace bem::experiment {

struct StepTrace {
  long iteration = 0;
  bool warmed_up = false;
  learner::LossBreakdown loss;
  double low_entropy_fraction = 0.0;
};

struct RunOptions {
  std::string dump_dir;        // non-empty: write PPM triplets of mixes
  int dump_limit = 64;         // number of mixes dumped
  std::string checkpoint_path;  // non-empty: save the final training state here
  std::function<void(const eval::MetricsRow&)> on_eval;
};

struct RunResult {
  std::vector<eval::MetricsRow> rows;
  std::vector<StepTrace> trace;
  eval::EvalResult final_eval;
  eval::GroupAccuracy final_groups;
  balance::ClassBalanceState final_balance;
  long composite_violations = 0;  // steps where the stored total differs from the recomposed one
  long warmup_iterations = 0;
  double seconds = 0.0;
};

// Dataset seed for a run seed.
std::uint64_t dataset_seed(std::uint64_t run_seed);

data::Generated make_data(const data::DatasetSpec& spec, std::uint64_t run_seed);

RunResult run_training(const learner::TrainConfig& cfg, const data::Generated& data, std::uint64_t run_seed,
                       const RunOptions& options = {});

struct Variant {
  std::string name;
  std::function<void(learner::TrainConfig&)> apply;
};

// Full method, five single-component removals and three baselines.
std::vector<Variant> ablation_variants();

// Baseline then full method.
std::vector<Variant> comparison_variants();

struct VariantSummary {
  std::string name;
  std::vector<double> accuracy;  // per seed
  std::vector<double> few;       // per seed
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_few = 0.0;
  double std_few = 0.0;
};

VariantSummary summarize(const std::string& name, const std::vector<RunResult>& runs);

// iteration, warm-up flag, the loss terms, lambda, total and the low-entropy fraction per step.
void write_trace(const std::string& path, const std::vector<StepTrace>& trace);

struct SweepOutput {
  std::vector<VariantSummary> summaries;
  std::vector<std::vector<RunResult>> runs;  // [variant][seed]
};

// Runs every variant over the manifest's seeds. Writes <out>/<variant>/seed_<s>/{metrics.csv,trace.csv},
// <out>/summary.csv and <out>/manifest.cfg, plus final.bemc checkpoints when asked. Progress goes to log.
SweepOutput run_sweep(const config::RunManifest& manifest, const std::vector<Variant>& variants,
                      std::ostream* log = nullptr, bool write_checkpoints = false);

void write_summary(const std::string& path, const std::vector<VariantSummary>& summaries);

// Population standard deviation.
double stddev(const std::vector<double>& v);
double mean(const std::vector<double>& v);

}  // namespace bem::experiment
