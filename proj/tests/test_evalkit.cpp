#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bem/errors.hpp"
#include "bem/evalkit.hpp"

using namespace bem;
using namespace bem::eval;

namespace {

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

MetricsRow sample_row(long it, int C) {
  MetricsRow r;
  r.iteration = it;
  r.test_accuracy = 0.123456789 + it;
  r.groups = {0.9, 0.5, 1.0 / 3.0};
  r.mean_pseudo_entropy = 1.75;
  r.lambda = 0.625;
  r.low_entropy_fraction = 0.4375;
  r.tau_e = 0.8125;
  r.loss_s = 2.5;
  r.loss_u_h = 1e-7;
  r.loss_u_l = 0.0;
  r.loss_us_h = 3.25;
  r.loss_us_l = 12345.678;
  r.loss_total = 1.0 / 7.0;
  for (int c = 0; c < C; ++c) {
    r.per_class_accuracy.push_back(c / 10.0);
    r.per_class_entropy.push_back(0.01 * c);
    r.per_class_pseudo_count.push_back(3.0 * c);
    r.unlabeled_dist.push_back(1.0 / C);
  }
  return r;
}

void check_close(double a, double b) { CHECK(a == doctest::Approx(b).epsilon(1e-8)); }

}  // namespace

TEST_CASE("accuracy and confusion") {
  const std::vector<int> truth{0, 1, 2, 0, 1, 2};
  const EvalResult perfect = evaluate_predictions(truth, truth, 3);
  CHECK(perfect.accuracy == 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(perfect.confusion[i][j] == (i == j ? 2 : 0));

  const EvalResult constant = evaluate_predictions(truth, std::vector<int>(6, 1), 3);
  CHECK(constant.accuracy == doctest::Approx(1.0 / 3));

  // 20 samples over 4 classes, tallied by hand.
  const std::vector<int> t{0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3};
  const std::vector<int> p{0, 0, 0, 0, 0, 1, 2, 3, 1, 1, 1, 0, 0, 2, 2, 2, 3, 3, 3, 0};
  const EvalResult r = evaluate_predictions(t, p, 4);
  const std::vector<std::vector<long>> expected{{5, 1, 1, 1}, {2, 3, 1, 0}, {0, 0, 2, 2}, {1, 0, 0, 1}};
  CHECK(r.confusion == expected);
  CHECK(r.per_class_accuracy == std::vector<double>{5.0 / 8, 3.0 / 6, 2.0 / 4, 1.0 / 2});
  CHECK(r.accuracy == doctest::Approx((5.0 / 8 + 0.5 + 0.5 + 0.5) / 4));

  CHECK_THROWS_AS(evaluate_predictions(t, std::vector<int>(3, 0), 4), ContractViolation);
}

TEST_CASE("group accuracy") {
  CHECK(group_sizes(10) == std::array<int, 3>{4, 3, 3});
  CHECK(group_sizes(9) == std::array<int, 3>{3, 3, 3});
  CHECK(group_sizes(11) == std::array<int, 3>{4, 4, 3});

  const std::vector<double> flat(9, 0.7);
  const GroupAccuracy g = group_accuracy(flat, std::vector<int>{9, 8, 7, 6, 5, 4, 3, 2, 1});
  CHECK(g.many == doctest::Approx(0.7));
  CHECK(g.medium == doctest::Approx(0.7));
  CHECK(g.few == doctest::Approx(0.7));

  std::vector<double> acc;
  for (int c = 1; c <= 10; ++c) acc.push_back(c / 10.0);
  const std::vector<int> counts{100, 77, 60, 46, 36, 28, 22, 17, 13, 10};
  const GroupAccuracy h = group_accuracy(acc, counts);
  CHECK(h.many == doctest::Approx(0.25));
  CHECK(h.medium == doctest::Approx(0.6));
  CHECK(h.few == doctest::Approx(0.9));

  // Ordering follows the counts, not the class index.
  const std::vector<int> reversed(counts.rbegin(), counts.rend());
  CHECK(group_accuracy(acc, reversed).many == doctest::Approx(0.85));
}

TEST_CASE("metrics CSV") {
  SUBCASE("header layout") {
    const auto header = csv_header(10);
    int per_class = 0;
    for (const auto& h : header) per_class += h.rfind("per_class_accuracy_", 0) == 0;
    CHECK(per_class == 10);
    CHECK(header.front() == "iteration");
  }
  SUBCASE("zero rows writes only the header") {
    const auto path = temp_path("bem_metrics_empty.csv");
    emit_csv({}, 4, path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 1);
    CHECK(parse_csv(path).empty());
    std::filesystem::remove(path);
  }
  SUBCASE("round trip") {
    const auto path = temp_path("bem_metrics_roundtrip.csv");
    const std::vector<MetricsRow> rows{sample_row(250, 5), sample_row(500, 5)};
    emit_csv(rows, 5, path);
    const auto back = parse_csv(path);
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(back[i].iteration == rows[i].iteration);
      check_close(back[i].test_accuracy, rows[i].test_accuracy);
      check_close(back[i].groups.few, rows[i].groups.few);
      check_close(back[i].loss_us_l, rows[i].loss_us_l);
      check_close(back[i].loss_u_h, rows[i].loss_u_h);
      check_close(back[i].loss_total, rows[i].loss_total);
      for (int c = 0; c < 5; ++c) {
        check_close(back[i].per_class_accuracy[c], rows[i].per_class_accuracy[c]);
        check_close(back[i].unlabeled_dist[c], rows[i].unlabeled_dist[c]);
      }
    }
    std::filesystem::remove(path);
  }
  SUBCASE("unwritable path names the path") {
    const std::string path = "/nonexistent-dir/metrics.csv";
    try {
      emit_csv({}, 3, path);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
  }
}

TEST_CASE("table quoting") {
  const auto path = temp_path("bem_table.csv");
  write_table(path, {"name", "value"}, {{"plain", "1"}, {"with,comma", "say \"hi\""}});
  const auto t = read_table(path);
  REQUIRE(t.size() == 3);
  CHECK(t[2][0] == "with,comma");
  CHECK(t[2][1] == "say \"hi\"");
  std::filesystem::remove(path);
  CHECK(format_number(1.0 / 3.0) == "0.333333333");
}
