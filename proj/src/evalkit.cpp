#include "bem/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bem/errors.hpp"

namespace bem::eval {

EvalResult evaluate_predictions(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  require(truth.size() == predicted.size(), "evaluate_predictions: size mismatch");
  EvalResult r;
  r.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes && predicted[i] >= 0 && predicted[i] < num_classes,
            "evaluate_predictions: class out of range");
    ++r.confusion[truth[i]][predicted[i]];
  }
  r.per_class_accuracy.assign(num_classes, 0.0);
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const long total = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), 0L);
    if (total == 0) continue;
    r.per_class_accuracy[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(total);
    r.accuracy += r.per_class_accuracy[c];
    ++present;
  }
  if (present > 0) r.accuracy /= present;
  return r;
}

EvalResult evaluate(const nn::BackboneParams& params, const std::vector<data::LabeledSample>& test, int batch_size) {
  std::vector<int> truth, predicted;
  truth.reserve(test.size());
  predicted.reserve(test.size());
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t end = std::min(test.size(), start + batch_size);
    std::vector<Image> imgs;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(test[i].image);
      truth.push_back(test[i].label);
    }
    const nn::BackboneOutput out = nn::forward(params, stack_images(imgs), nn::Retain::kNone);
    for (int n = 0; n < out.batch; ++n) {
      const auto row = out.logits_row(n);
      predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return evaluate_predictions(truth, predicted, params.classifier.num_classes);
}

std::array<int, 3> group_sizes(int num_classes) {
  require(num_classes >= 3, "group_accuracy: need at least three classes");
  const int base = num_classes / 3, rem = num_classes % 3;
  return {base + (rem > 0 ? 1 : 0), base + (rem > 1 ? 1 : 0), base};
}

GroupAccuracy group_accuracy(std::span<const double> per_class_accuracy, std::span<const int> class_counts) {
  const int C = static_cast<int>(per_class_accuracy.size());
  require(static_cast<int>(class_counts.size()) == C, "group_accuracy: size mismatch");
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return class_counts[a] > class_counts[b]; });
  const auto sizes = group_sizes(C);
  std::array<double, 3> means{};
  int k = 0;
  for (int g = 0; g < 3; ++g) {
    for (int i = 0; i < sizes[g]; ++i) means[g] += per_class_accuracy[order[k++]];
    means[g] /= sizes[g];
  }
  return {means[0], means[1], means[2]};
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        in_quotes = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

const char* kScalarColumns[] = {"iteration", "test_accuracy", "group_many", "group_medium", "group_few",
                                "mean_pseudo_entropy", "lambda", "low_entropy_fraction", "tau_e", "loss_s",
                                "loss_u_h", "loss_u_l", "loss_us_h", "loss_us_l", "loss_total"};
const char* kArrayColumns[] = {"per_class_accuracy", "per_class_entropy", "per_class_pseudo_count",
                               "unlabeled_dist"};

}  // namespace

void write_table(const std::string& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const auto emit = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) out << (i ? "," : "") << quote(rec[i]);
    out << "\r\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::vector<std::string>> read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_record(line));
  }
  return rows;
}

std::vector<std::string> csv_header(int num_classes) {
  std::vector<std::string> h(std::begin(kScalarColumns), std::end(kScalarColumns));
  for (const char* name : kArrayColumns)
    for (int c = 0; c < num_classes; ++c) h.push_back(std::string(name) + "_" + std::to_string(c));
  return h;
}

void emit_csv(const std::vector<MetricsRow>& rows, int num_classes, const std::string& path) {
  std::vector<std::vector<std::string>> records;
  for (const auto& r : rows) {
    std::vector<std::string> rec = {std::to_string(r.iteration), format_number(r.test_accuracy),
                                    format_number(r.groups.many), format_number(r.groups.medium),
                                    format_number(r.groups.few), format_number(r.mean_pseudo_entropy),
                                    format_number(r.lambda), format_number(r.low_entropy_fraction),
                                    format_number(r.tau_e), format_number(r.loss_s), format_number(r.loss_u_h),
                                    format_number(r.loss_u_l), format_number(r.loss_us_h),
                                    format_number(r.loss_us_l), format_number(r.loss_total)};
    for (const auto* arr : {&r.per_class_accuracy, &r.per_class_entropy, &r.per_class_pseudo_count, &r.unlabeled_dist}) {
      require(static_cast<int>(arr->size()) == num_classes, "emit_csv: array column has wrong length");
      for (double v : *arr) rec.push_back(format_number(v));
    }
    records.push_back(std::move(rec));
  }
  write_table(path, csv_header(num_classes), records);
}

std::vector<MetricsRow> parse_csv(const std::string& path) {
  const auto table = read_table(path);
  if (table.empty()) throw IoError("missing header in " + path);
  const std::size_t scalars = std::size(kScalarColumns);
  const std::size_t width = table.front().size();
  if (width < scalars || (width - scalars) % std::size(kArrayColumns) != 0) throw IoError("bad header in " + path);
  const int C = static_cast<int>((width - scalars) / std::size(kArrayColumns));
  if (table.front() != csv_header(C)) throw IoError("unexpected header in " + path);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& f = table[i];
    if (f.size() != width) throw IoError("row " + std::to_string(i) + " has wrong width in " + path);
    MetricsRow r;
    std::size_t k = 0;
    const auto num = [&] { return std::stod(f[k++]); };
    r.iteration = std::stol(f[k++]);
    r.test_accuracy = num();
    r.groups.many = num();
    r.groups.medium = num();
    r.groups.few = num();
    r.mean_pseudo_entropy = num();
    r.lambda = num();
    r.low_entropy_fraction = num();
    r.tau_e = num();
    r.loss_s = num();
    r.loss_u_h = num();
    r.loss_u_l = num();
    r.loss_us_h = num();
    r.loss_us_l = num();
    r.loss_total = num();
    for (auto* arr : {&r.per_class_accuracy, &r.per_class_entropy, &r.per_class_pseudo_count, &r.unlabeled_dist}) {
      arr->resize(C);
      for (double& v : *arr) v = num();
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace bem::eval
