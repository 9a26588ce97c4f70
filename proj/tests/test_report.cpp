#include "aptest/config.hpp"
#include "aptest/io.hpp"
#include "aptest/report.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <numeric>
#include <random>

using namespace aptest;
using namespace aptest::report;
namespace fs = std::filesystem;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

FaultBounds unit_upper() {
  FaultBounds b;
  b.mean = Vector::Zero(1);
  b.stddev = Vector::Ones(1);
  b.side = {BoundSide::upper};
  return b;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Report small_report() {
  Report r;
  r.spec_names = {"A", "B"};
  r.module_labels = {"1-1", "1-2"};
  r.mse_grid.resize(2, 2);
  r.mse_grid << 0.1, 0.2, 0.3, 0.4;
  r.thresholds = Vector::Constant(2, 0.25);
  r.benchmarks.columns = {"B1", "B3", "Proposed"};
  r.benchmarks.mse.resize(2, 3);
  r.benchmarks.mse << 0.3, 0.2, 0.1,
                      0.5, 0.4, 0.3;
  r.scatter.resize(2);
  for (auto& s : r.scatter) {
    s.devices = {4, 9};
    s.actual = Vector::LinSpaced(2, 1.0, 2.0);
    s.predicted = Vector::LinSpaced(2, 1.1, 2.1);
  }
  r.bounds.mean = Vector::Zero(2);
  r.bounds.stddev = Vector::Ones(2);
  r.bounds.side = {BoundSide::upper, BoundSide::lower};
  r.coverage = {FaultCoverage{2, 1, 50.0}, FaultCoverage{}};
  r.selected = {"1-1"};
  r.selection_cost = 1.0;
  r.config_hash = "abc";
  r.seeds = {{"master", 1}};
  return r;
}

}  // namespace

TEST_CASE("system mse is the mean over specs") {
  CHECK(system_mse(Vector::Constant(10, 0.5)) == 0.5);
  Vector v(2);
  v << 0.2, 0.4;
  CHECK(system_mse(v) == doctest::Approx(0.3));
  const auto ref = reference_thresholds();
  REQUIRE(ref.size() == 10);
  CHECK(std::accumulate(ref.begin(), ref.end(), 0.0) / 10.0 == doctest::Approx(4.53e-3));
}

TEST_CASE("fault coverage") {
  SUBCASE("hand example: two faults, one flagged") {
    const auto fc = fault_coverage(column({0.5, 1.5, 2.0}), column({0.4, 1.6, 0.9}), unit_upper());
    REQUIRE(fc.size() == 1);
    CHECK(fc[0].faults == 2);
    CHECK(fc[0].detected == 1);
    REQUIRE(fc[0].percent);
    CHECK(*fc[0].percent == 50.0);
  }
  SUBCASE("perfect predictions detect every fault") {
    const Matrix a = column({0.5, 1.5, 2.0, -3.0});
    const auto fc = fault_coverage(a, a, unit_upper());
    CHECK(fc[0].faults == 2);
    CHECK(*fc[0].percent == 100.0);
  }
  SUBCASE("no faults is not applicable") {
    const auto fc = fault_coverage(column({0.1, 0.2}), column({5.0, 5.0}), unit_upper());
    CHECK(fc[0].faults == 0);
    CHECK_FALSE(fc[0].percent);
  }
  SUBCASE("lower-bounded specs fault below mean minus sigma") {
    FaultBounds b = unit_upper();
    b.side = {BoundSide::lower};
    CHECK(b.limit(0) == -1.0);
    CHECK(b.fault_free(0, -1.0));
    CHECK_FALSE(b.fault_free(0, -1.01));
    CHECK(b.fault_free(0, 100.0));
    const auto fc = fault_coverage(column({-2.0, -1.5, 0.0}), column({-1.2, 0.0, -3.0}), b);
    CHECK(fc[0].faults == 2);
    CHECK(fc[0].detected == 1);
  }
}

TEST_CASE("fault bounds use population statistics") {
  Matrix p(4, 2);
  p << 1, 10, 2, 10, 3, 10, 4, 14;
  const FaultBounds b = fit_fault_bounds(p, {BoundSide::upper, BoundSide::lower});
  CHECK(b.mean[0] == 2.5);
  CHECK(b.stddev[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(b.mean[1] == 11.0);
  CHECK(b.limit(1) == doctest::Approx(11.0 - std::sqrt(3.0)));
  CHECK(default_bound_sides().size() == 10);
  CHECK(bound_side_from_string(to_string(BoundSide::lower)) == BoundSide::lower);
}

TEST_CASE("module-count sweep") {
  std::mt19937_64 rng(10);
  const Matrix labels = gaussian(120, 2, rng);
  std::vector<Matrix> preds;
  for (int i = 0; i < 4; ++i) preds.push_back(labels + gaussian(120, 2, rng, 0.3 + 0.2 * i));
  std::vector<std::size_t> rows(120);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const std::vector<std::size_t> fit(rows.begin(), rows.begin() + 70);
  const std::vector<std::size_t> val(rows.begin() + 70, rows.begin() + 90);
  const std::vector<std::size_t> train(rows.begin(), rows.begin() + 90);
  const std::vector<std::size_t> test(rows.begin() + 90, rows.end());

  SweepInputs in;
  in.predictions = preds;
  in.labels = &labels;
  in.fit_rows = fit;
  in.validation_rows = val;
  in.train_rows = train;
  in.test_rows = test;
  in.num_stimuli = 2;
  in.max_count = 4;
  in.combiner_hidden = {8};
  in.combiner_cfg.epochs = 3;
  in.combiner_cfg.batch_size = 16;
  in.seed = 5;
  const auto sweep = sweep_module_count(in);
  REQUIRE(sweep.size() == 4);
  for (std::size_t t = 0; t < sweep.size(); ++t) {
    CHECK(sweep[t].count == t + 1);
    CHECK(sweep[t].modules.size() == t + 1);
    CHECK(std::is_sorted(sweep[t].modules.begin(), sweep[t].modules.end()));
  }
  // The full set is forced at T = M*N.
  CHECK(sweep.back().modules == std::vector<ModuleId>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  // The least noisy module is the greedy first pick.
  CHECK(sweep.front().modules == std::vector<ModuleId>{{0, 0}});
  CHECK(sweep_module_count(in).back().dnn_system_mse == sweep.back().dnn_system_mse);
}

TEST_CASE("emit_report writes every table") {
  const fs::path dir = fs::temp_directory_path() / "aptest_report_emit";
  fs::remove_all(dir);
  Report r = small_report();
  r.sweep = std::vector<SweepRow>{{1, {{0, 0}}, 0.4, 0.5, 0.45}};
  emit_report(r, dir);
  for (const char* f : {"mse_grid.csv", "benchmarks.csv", "fault_coverage.csv", "sweep.csv",
                        "scatter_A.csv", "scatter_B.csv", "summary.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  const auto grid = io::read_csv(dir / "mse_grid.csv");
  CHECK(grid.header == std::vector<std::string>{"module", "A", "B"});
  CHECK(grid.rows.size() == 2);
  const auto fc = io::read_csv(dir / "fault_coverage.csv");
  CHECK(fc.rows[1].back() == "NA");
  const auto summary = nlohmann::json::parse(io::read_text(dir / "summary.json"));
  CHECK(summary["threshold_violations"] == nlohmann::json::array({"B"}));
  CHECK(summary["sweep"] == "sweep.csv");
  CHECK(r.threshold_violations() == std::vector<std::string>{"B"});

  const std::string first = io::read_text(dir / "benchmarks.csv");
  emit_report(r, dir);
  CHECK(io::read_text(dir / "benchmarks.csv") == first);

  r.sweep.reset();
  emit_report(r, dir);
  CHECK_FALSE(fs::exists(dir / "sweep.csv"));
  const auto again = nlohmann::json::parse(io::read_text(dir / "summary.json"));
  CHECK(again["sweep"].get<std::string>().find("not run") != std::string::npos);
  fs::remove_all(dir);
}
