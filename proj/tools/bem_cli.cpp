#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bem/config.hpp"
#include "bem/errors.hpp"
#include "bem/experiment.hpp"
#include "bem/selfcheck.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mixer;
  std::string bem;
  bool dump_mixes = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "flat key=value config file");
  cmd->add_option("--seed", f.seed, "run a single seed instead of the configured list");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--mixer", f.mixer, "none|mixup|cutmix|cammix");
  cmd->add_option("--bem", f.bem, "on|off");
  cmd->add_flag("--dump-mixes", f.dump_mixes, "write PPM images of mixed samples");
  cmd->add_option("--set", f.sets, "override any config key, e.g. --set iterations=500");
}

bem::config::RunManifest build_manifest(const Flags& f, bem::config::Mode mode) {
  using namespace bem::config;
  RunManifest m = f.config_path.empty() ? parse_config_text("") : parse_config_file(f.config_path);
  m.mode = mode;
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw bem::ConfigError("--set expects key=value, got '" + kv + "'", kv);
    apply_setting(m, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) m.seeds = {*f.seed};
  if (!f.out.empty()) m.output_dir = f.out;
  if (!f.mixer.empty()) apply_setting(m, "mixer", f.mixer);
  if (!f.bem.empty()) apply_setting(m, "bem", f.bem);
  if (f.dump_mixes) m.dump_mixes = true;
  validate(m);
  return m;
}

void print_summaries(const std::vector<bem::experiment::VariantSummary>& summaries) {
  std::printf("%-34s %10s %10s %10s %10s\n", "variant", "accuracy", "std", "few", "std");
  for (const auto& s : summaries)
    std::printf("%-34s %10.4f %10.4f %10.4f %10.4f\n", s.name.c_str(), s.mean_accuracy, s.std_accuracy, s.mean_few,
                s.std_few);
}

int run_train(const bem::config::RunManifest& m) {
  using namespace bem;
  const std::vector<experiment::Variant> variants{{"train", [](learner::TrainConfig&) {}}};
  const auto out = experiment::run_sweep(m, variants, &std::cout, /*write_checkpoints=*/true);
  print_summaries(out.summaries);
  return kExitOk;
}

int run_variants(const bem::config::RunManifest& m, const std::vector<bem::experiment::Variant>& variants) {
  const auto out = bem::experiment::run_sweep(m, variants, &std::cout);
  print_summaries(out.summaries);
  std::cout << "summary written to " << (std::filesystem::path(m.output_dir) / "summary.csv").string() << "\n";
  return kExitOk;
}

int run_selfcheck() {
  const auto report = bem::selfcheck::run_selfcheck();
  bem::selfcheck::print_report(report, std::cout);
  return report.all_passed() ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed semi-supervised training with balanced entropy-based mixing"};
  app.require_subcommand(1);
  Flags flags;
  auto* train = app.add_subcommand("train", "train one configuration over the seed list");
  auto* compare = app.add_subcommand("compare", "train the FixMatch baseline and the full method");
  auto* ablate = app.add_subcommand("ablate", "train the nine preset variants");
  auto* check = app.add_subcommand("selfcheck", "run the oracle battery");
  for (auto* cmd : {train, compare, ablate}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    using bem::config::Mode;
    if (check->parsed()) return run_selfcheck();
    if (train->parsed()) return run_train(build_manifest(flags, Mode::kTrain));
    if (compare->parsed()) return run_variants(build_manifest(flags, Mode::kCompare), bem::experiment::comparison_variants());
    if (ablate->parsed()) return run_variants(build_manifest(flags, Mode::kAblate), bem::experiment::ablation_variants());
  } catch (const bem::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
