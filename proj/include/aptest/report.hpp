#pragma once

#include "aptest/combiner.hpp"
#include "aptest/nn.hpp"
#include "aptest/selection.hpp"
#include "aptest/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aptest::report {

// Mean of the per-spec MSEs.
double system_mse(const Vector& per_spec_mse);

enum class BoundSide {
  upper,  // fault-free (-inf, mu + sigma]
  lower,  // fault-free [mu - sigma, +inf)
};

std::string_view to_string(BoundSide side);
BoundSide bound_side_from_string(std::string_view text);
// Floors for gains, margins and slew rates; ceilings for IB and VOS.
std::vector<BoundSide> default_bound_sides();

struct FaultBounds {
  Vector mean;    // physical units
  Vector stddev;  // physical units, > 0
  std::vector<BoundSide> side;

  bool fault_free(std::size_t spec, double value) const;
  double limit(std::size_t spec) const;
};

// Population statistics over every device row.
FaultBounds fit_fault_bounds(const Matrix& physical, std::vector<BoundSide> sides);

struct FaultCoverage {
  std::size_t faults = 0;
  std::size_t detected = 0;
  std::optional<double> percent;  // empty when the spec has no actual faults
};

// A fault is detected only when the prediction for the same spec is itself
// outside the fault-free range.
std::vector<FaultCoverage> fault_coverage(const Matrix& actual_physical,
                                          const Matrix& predicted_physical,
                                          const FaultBounds& bounds);

struct SweepRow {
  std::size_t count = 0;
  std::vector<ModuleId> modules;
  double dnn_system_mse = 0.0;
  double ws_system_mse = 0.0;
  double ws_validation_system_mse = 0.0;
};

struct SweepInputs {
  std::span<const Matrix> predictions;  // every module, every row, normalized
  const Matrix* labels = nullptr;       // normalized
  // The greedy search fits on fit_rows and scores on validation_rows; the
  // reported combiners are then fit on train_rows.
  std::span<const std::size_t> fit_rows;
  std::span<const std::size_t> validation_rows;
  std::span<const std::size_t> train_rows;
  std::span<const std::size_t> test_rows;
  int num_stimuli = 0;
  std::size_t max_count = 0;
  std::vector<int> combiner_hidden;
  nn::TrainConfig combiner_cfg;
  std::uint64_t seed = 0;
};

// Greedy forward selection on validation WS system MSE; for each subset size
// both combiners are fit on the training rows and scored on the test rows.
std::vector<SweepRow> sweep_module_count(const SweepInputs& in);

struct ScatterSeries {
  std::vector<std::size_t> devices;
  Vector actual;     // physical
  Vector predicted;  // physical
};

struct Report {
  std::vector<std::string> spec_names;
  std::vector<std::string> module_labels;
  Matrix mse_grid;  // modules x specs, test rows
  Vector thresholds;
  combiner::BenchmarkResult benchmarks;
  std::vector<ScatterSeries> scatter;  // per spec, proposed method
  FaultBounds bounds;
  std::vector<FaultCoverage> coverage;
  std::optional<std::vector<SweepRow>> sweep;
  std::vector<std::string> selected;
  double selection_cost = 0.0;
  std::string config_hash;
  nlohmann::json seeds;

  // Specs whose proposed-method test MSE exceeds the threshold.
  std::vector<std::string> threshold_violations() const;
};

// Writes mse_grid.csv, benchmarks.csv, fault_coverage.csv, sweep.csv (when a
// sweep was run), scatter_<spec>.csv and summary.json.
void emit_report(const Report& report, const std::filesystem::path& out_dir);

}  // namespace aptest::report
