#include "aptest/report.hpp"

#include "aptest/dataset.hpp"
#include "aptest/io.hpp"
#include "aptest/seed.hpp"
#include "aptest/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aptest::report {

namespace fs = std::filesystem;
using nlohmann::json;

double system_mse(const Vector& per_spec_mse) {
  if (per_spec_mse.size() == 0) throw DimensionError("system_mse needs at least one spec");
  return per_spec_mse.mean();
}

std::string_view to_string(BoundSide side) { return side == BoundSide::upper ? "upper" : "lower"; }

BoundSide bound_side_from_string(std::string_view text) {
  if (text == "upper") return BoundSide::upper;
  if (text == "lower") return BoundSide::lower;
  throw InvalidConfigError("bound side must be 'upper' or 'lower', got '" + std::string(text) + "'");
}

std::vector<BoundSide> default_bound_sides() {
  using namespace surrogate;
  std::vector<BoundSide> sides(kNumSpecs, BoundSide::lower);
  sides[kIb] = BoundSide::upper;
  sides[kVos] = BoundSide::upper;
  return sides;
}

double FaultBounds::limit(std::size_t spec) const {
  const auto l = static_cast<Eigen::Index>(spec);
  return side[spec] == BoundSide::upper ? mean[l] + stddev[l] : mean[l] - stddev[l];
}

bool FaultBounds::fault_free(std::size_t spec, double value) const {
  const double lim = limit(spec);
  return side[spec] == BoundSide::upper ? value <= lim : value >= lim;
}

FaultBounds fit_fault_bounds(const Matrix& physical, std::vector<BoundSide> sides) {
  if (static_cast<Eigen::Index>(sides.size()) != physical.cols()) {
    throw DimensionError("one bound side per spec required");
  }
  std::vector<std::size_t> rows(static_cast<std::size_t>(physical.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const dataset::ColumnStats s = dataset::fit_normalizer(physical, rows);
  for (Eigen::Index l = 0; l < s.stddev.size(); ++l) {
    if (!(s.stddev[l] > 0.0)) {
      throw InvalidDatasetError("fault bounds: spec " + std::to_string(l) + " has zero spread");
    }
  }
  return {s.mean, s.stddev, std::move(sides)};
}

std::vector<FaultCoverage> fault_coverage(const Matrix& actual, const Matrix& predicted,
                                          const FaultBounds& bounds) {
  if (actual.rows() != predicted.rows() || actual.cols() != predicted.cols()) {
    throw DimensionError("fault_coverage: actual and predicted shapes differ");
  }
  if (bounds.side.size() != static_cast<std::size_t>(actual.cols()) ||
      bounds.mean.size() != actual.cols() || bounds.stddev.size() != actual.cols()) {
    throw DimensionError("fault_coverage: bounds do not cover every spec");
  }
  std::vector<FaultCoverage> out(static_cast<std::size_t>(actual.cols()));
  for (std::size_t l = 0; l < out.size(); ++l) {
    auto& fc = out[l];
    for (Eigen::Index w = 0; w < actual.rows(); ++w) {
      if (bounds.fault_free(l, actual(w, static_cast<Eigen::Index>(l)))) continue;
      ++fc.faults;
      if (!bounds.fault_free(l, predicted(w, static_cast<Eigen::Index>(l)))) ++fc.detected;
    }
    if (fc.faults > 0) {
      fc.percent = 100.0 * static_cast<double>(fc.detected) / static_cast<double>(fc.faults);
    }
  }
  return out;
}

// -- sweep -----------------------------------------------------------------

namespace {

Matrix stack_rows(std::span<const Matrix> predictions, const std::vector<ModuleId>& ids,
                  int num_stimuli, std::span<const std::size_t> rows) {
  std::vector<Matrix> blocks;
  for (const auto& id : ids) {
    blocks.push_back(dataset::select_rows(predictions[id.flat(num_stimuli)], rows));
  }
  return combiner::stack_predictions(blocks);
}

}  // namespace

std::vector<SweepRow> sweep_module_count(const SweepInputs& in) {
  const std::size_t total = in.predictions.size();
  if (in.labels == nullptr) throw DimensionError("sweep: missing labels");
  if (in.max_count < 1 || in.max_count > total) {
    throw InvalidConfigError("sweep max count must be in [1, " + std::to_string(total) + "]");
  }
  const Matrix y_fit = dataset::select_rows(*in.labels, in.fit_rows);
  const Matrix y_val = dataset::select_rows(*in.labels, in.validation_rows);
  const Matrix y_train = dataset::select_rows(*in.labels, in.train_rows);
  const Matrix y_test = dataset::select_rows(*in.labels, in.test_rows);

  std::vector<SweepRow> rows;
  std::vector<ModuleId> current;
  for (std::size_t count = 1; count <= in.max_count; ++count) {
    std::optional<std::vector<ModuleId>> best;
    double best_val = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      const ModuleId id = ModuleId::from_flat(i, in.num_stimuli);
      if (std::find(current.begin(), current.end(), id) != current.end()) continue;
      std::vector<ModuleId> trial = current;
      trial.push_back(id);
      std::sort(trial.begin(), trial.end());
      const combiner::WsModel ws = combiner::fit_ws(
          stack_rows(in.predictions, trial, in.num_stimuli, in.fit_rows), y_fit, trial);
      const double val = system_mse(selection::per_spec_mse(
          combiner::predict(ws, stack_rows(in.predictions, trial, in.num_stimuli, in.validation_rows),
                            trial),
          y_val));
      if (!best || val < best_val) {
        best = std::move(trial);
        best_val = val;
      }
    }
    current = *best;

    SweepRow row;
    row.count = count;
    row.modules = current;
    row.ws_validation_system_mse = best_val;
    const Matrix train_stack = stack_rows(in.predictions, current, in.num_stimuli, in.train_rows);
    const Matrix test_stack = stack_rows(in.predictions, current, in.num_stimuli, in.test_rows);
    const combiner::WsModel ws = combiner::fit_ws(train_stack, y_train, current);
    row.ws_system_mse =
        system_mse(selection::per_spec_mse(combiner::predict(ws, test_stack, current), y_test));
    const combiner::CombinerModel rho =
        combiner::train_combiner(train_stack, y_train, current, in.combiner_hidden,
                                 derive_seed(in.seed, "sweep-init", static_cast<std::int64_t>(count)),
                                 [&] {
                                   nn::TrainConfig cfg = in.combiner_cfg;
                                   cfg.shuffle_seed = derive_seed(in.seed, "sweep-shuffle",
                                                                  static_cast<std::int64_t>(count));
                                   return cfg;
                                 }());
    row.dnn_system_mse =
        system_mse(selection::per_spec_mse(combiner::predict(rho, test_stack, current), y_test));
    rows.push_back(std::move(row));
  }
  return rows;
}

// -- report files ----------------------------------------------------------

std::vector<std::string> Report::threshold_violations() const {
  std::vector<std::string> out;
  const auto col = benchmarks.column("Proposed");
  if (!col) return out;
  for (Eigen::Index l = 0; l < benchmarks.mse.rows(); ++l) {
    if (benchmarks.mse(l, *col) > thresholds[l]) out.push_back(spec_names[static_cast<std::size_t>(l)]);
  }
  return out;
}

namespace {

std::string module_list_text(const std::vector<ModuleId>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ' ';
    out += id.label();
  }
  return out;
}

// JSON has no infinity.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void emit_report(const Report& r, const fs::path& out_dir) {
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create report directory " + out_dir.string() + ": " + e.what());
  }
  const auto L = static_cast<Eigen::Index>(r.spec_names.size());

  {
    io::Table t;
    t.header = {"module"};
    t.header.insert(t.header.end(), r.spec_names.begin(), r.spec_names.end());
    for (Eigen::Index i = 0; i < r.mse_grid.rows(); ++i) {
      std::vector<std::string> row{r.module_labels[static_cast<std::size_t>(i)]};
      for (Eigen::Index l = 0; l < L; ++l) row.push_back(io::format_double(r.mse_grid(i, l)));
      t.rows.push_back(std::move(row));
    }
    io::write_csv(out_dir / "mse_grid.csv", t);
  }
  {
    io::Table t;
    t.header = {"spec"};
    t.header.insert(t.header.end(), r.benchmarks.columns.begin(), r.benchmarks.columns.end());
    t.header.push_back("threshold");
    for (Eigen::Index l = 0; l < L; ++l) {
      std::vector<std::string> row{r.spec_names[static_cast<std::size_t>(l)]};
      for (Eigen::Index c = 0; c < r.benchmarks.mse.cols(); ++c) {
        row.push_back(io::format_double(r.benchmarks.mse(l, c)));
      }
      row.push_back(io::format_double(r.thresholds[l]));
      t.rows.push_back(std::move(row));
    }
    std::vector<std::string> sys{"system"};
    for (Eigen::Index c = 0; c < r.benchmarks.mse.cols(); ++c) {
      sys.push_back(io::format_double(system_mse(r.benchmarks.mse.col(c))));
    }
    sys.push_back(io::format_double(r.thresholds.mean()));
    t.rows.push_back(std::move(sys));
    io::write_csv(out_dir / "benchmarks.csv", t);
  }
  {
    io::Table t;
    t.header = {"spec", "side", "mean", "std", "limit", "faults", "detected", "fc_percent"};
    for (std::size_t l = 0; l < r.coverage.size(); ++l) {
      const auto& fc = r.coverage[l];
      t.rows.push_back({r.spec_names[l], std::string(to_string(r.bounds.side[l])),
                        io::format_double(r.bounds.mean[static_cast<Eigen::Index>(l)]),
                        io::format_double(r.bounds.stddev[static_cast<Eigen::Index>(l)]),
                        io::format_double(r.bounds.limit(l)), std::to_string(fc.faults),
                        std::to_string(fc.detected),
                        fc.percent ? io::format_double(*fc.percent) : std::string("NA")});
    }
    io::write_csv(out_dir / "fault_coverage.csv", t);
  }
  const fs::path sweep_path = out_dir / "sweep.csv";
  if (r.sweep) {
    io::Table t;
    t.header = {"count", "modules", "dnn_system_mse", "ws_system_mse", "ws_validation_system_mse"};
    for (const auto& row : *r.sweep) {
      t.rows.push_back({std::to_string(row.count), module_list_text(row.modules),
                        io::format_double(row.dnn_system_mse), io::format_double(row.ws_system_mse),
                        io::format_double(row.ws_validation_system_mse)});
    }
    io::write_csv(sweep_path, t);
  } else if (fs::exists(sweep_path)) {
    fs::remove(sweep_path);
  }
  for (std::size_t l = 0; l < r.scatter.size(); ++l) {
    const auto& s = r.scatter[l];
    io::Table t;
    t.header = {"device", "actual", "predicted"};
    for (Eigen::Index i = 0; i < s.actual.size(); ++i) {
      t.rows.push_back({std::to_string(s.devices[static_cast<std::size_t>(i)]),
                        io::format_double(s.actual[i]), io::format_double(s.predicted[i])});
    }
    io::write_csv(out_dir / ("scatter_" + r.spec_names[l] + ".csv"), t);
  }

  json specs = json::array();
  const auto proposed = r.benchmarks.column("Proposed");
  for (Eigen::Index l = 0; l < L; ++l) {
    const auto& fc = r.coverage[static_cast<std::size_t>(l)];
    const double mse = proposed ? r.benchmarks.mse(l, *proposed) : 0.0;
    specs.push_back({{"name", r.spec_names[static_cast<std::size_t>(l)]},
                     {"test_mse", mse},
                     {"threshold", finite_or_null(r.thresholds[l])},
                     {"meets_threshold", mse <= r.thresholds[l]},
                     {"fault_coverage_percent", fc.percent ? json(*fc.percent) : json(nullptr)}});
  }
  json systems = json::object();
  for (Eigen::Index c = 0; c < r.benchmarks.mse.cols(); ++c) {
    systems[r.benchmarks.columns[static_cast<std::size_t>(c)]] = system_mse(r.benchmarks.mse.col(c));
  }
  json summary = {
      {"config_hash", r.config_hash},
      {"seeds", r.seeds},
      {"selected_modules", r.selected},
      {"selection_cost", r.selection_cost},
      {"b2_modules", module_list_text(r.benchmarks.b2_modules)},
      {"system_mse", systems},
      {"mean_threshold", finite_or_null(r.thresholds.mean())},
      {"specs", specs},
      {"threshold_violations", r.threshold_violations()},
      {"warnings", r.benchmarks.warnings},
      {"sweep", r.sweep ? json("sweep.csv") : json("not run (sweep disabled in config)")},
  };
  io::write_text(out_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace aptest::report
