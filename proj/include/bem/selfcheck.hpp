#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

// Embedded oracle battery: each check compares an implementation against an
// independent reference or an exact identity.
namespace bem::selfcheck {

struct CheckResult {
  std::string family;
  std::string name;
  bool passed = false;
  std::string detail;
};

// Functions under test that can be swapped, e.g. for a deliberately broken variant.
struct Hooks {
  std::function<double(double n, double beta)> effective_number;
};

Hooks default_hooks();

struct Report {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool all_passed() const;
  std::vector<std::string> families() const;  // in order of first appearance
};

std::vector<CheckResult> check_effective_number(const Hooks& hooks);
std::vector<CheckResult> check_components(std::uint64_t seed = 7, int maps = 200);
std::vector<CheckResult> check_masks(std::uint64_t seed = 11);
std::vector<CheckResult> check_ema();
std::vector<CheckResult> check_sampling(std::uint64_t seed = 13, int draws = 100000);
std::vector<CheckResult> check_forward(std::uint64_t seed = 17);

struct GradCheckStats {
  int sampled = 0;
  int failures = 0;
  int ambiguous = 0;  // draws where every step crossed a ReLU kink
  double max_rel_error = 0.0;
  std::vector<std::string> tensors;  // tensors that contributed samples
};

// Backward pass against central differences of the double-precision reference forward,
// at the largest of 10*step, step, step/10, step/100 that crosses no ReLU kink.
GradCheckStats gradient_check(std::uint64_t seed = 19, int per_tensor = 40, double step = 1e-4,
                              double tolerance = 1e-3);
std::vector<CheckResult> check_gradients(std::uint64_t seed = 19);

Report run_selfcheck(const Hooks& hooks = default_hooks());

void print_report(const Report& report, std::ostream& out);

}  // namespace bem::selfcheck
