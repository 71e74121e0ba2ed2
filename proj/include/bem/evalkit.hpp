#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "bem/synthdata.hpp"
#include "bem/tinynn.hpp"

// Metrics and reporting: balanced accuracy, per-class and grouped accuracy,
// confusion matrix and CSV emission.
namespace bem::eval {

struct EvalResult {
  double accuracy = 0.0;  // mean of per-class accuracy
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<long>> confusion;  // [true][predicted]
};

EvalResult evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, int num_classes);
EvalResult evaluate(const nn::BackboneParams& params, const std::vector<data::LabeledSample>& test,
                    int batch_size = 250);

struct GroupAccuracy {
  double many = 0.0;
  double medium = 0.0;
  double few = 0.0;
};

// Classes ordered by labeled count (descending, stable), split into thirds with the remainder going to the
// earlier groups.
GroupAccuracy group_accuracy(std::span<const double> per_class_accuracy, std::span<const int> class_counts);
std::array<int, 3> group_sizes(int num_classes);

struct MetricsRow {
  long iteration = 0;
  double test_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  GroupAccuracy groups;
  double mean_pseudo_entropy = 0.0;
  std::vector<double> per_class_entropy;  // EMA class-wise entropy of unlabeled data
  std::vector<double> per_class_pseudo_count;
  std::vector<double> unlabeled_dist;     // EMA class distribution estimate
  double lambda = 1.0;
  double low_entropy_fraction = 0.0;
  double tau_e = 0.0;
  double loss_s = 0.0;
  double loss_u_h = 0.0;
  double loss_u_l = 0.0;
  double loss_us_h = 0.0;
  double loss_us_l = 0.0;
  double loss_total = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

std::vector<std::string> csv_header(int num_classes);
void emit_csv(const std::vector<MetricsRow>& rows, int num_classes, const std::string& path);
std::vector<MetricsRow> parse_csv(const std::string& path);

// Formats with 9 significant digits.
std::string format_number(double v);

// Minimal RFC-4180 table writer used for summaries.
void write_table(const std::string& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_table(const std::string& path);

}  // namespace bem::eval
