#pragma once

// Fusion of the selected modules' predictions: the learned combiner network,
// the per-spec weighted-sum baseline, and the comparison benchmarks.

#include "aptest/dataset.hpp"
#include "aptest/nn.hpp"
#include "aptest/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aptest::combiner {

// Row w is the concatenation of each block's row w, in the given order.
Matrix stack_predictions(std::span<const Matrix> blocks);
// Runs each model on its own module's (normalized) responses, then stacks.
Matrix stack_predictions(std::span<const nn::MlpModel> models, std::span<const Matrix> inputs);

struct CombinerModel {
  nn::MlpModel inner;                  // (T*L) -> L
  std::vector<ModuleId> selected;      // stacking order, row-major (m, n)
  dataset::ColumnStats input_stats;    // z-score of the stacked predictions
  std::vector<double> loss_history;
  double initial_loss = 0.0;

  std::size_t num_specs() const { return static_cast<std::size_t>(inner.output_dim()); }
};

// hidden: widths between the T*L input and the L output.
CombinerModel train_combiner(const Matrix& stacked_train, const Matrix& labels_train,
                             std::vector<ModuleId> selected, const std::vector<int>& hidden,
                             std::uint64_t init_seed, const nn::TrainConfig& cfg);

// Throws DimensionError if `order` differs from the order the model was trained on.
Matrix predict(const CombinerModel& model, const Matrix& stacked,
               const std::vector<ModuleId>& order);

void save_combiner(const std::filesystem::path& dir, const CombinerModel& model);
CombinerModel load_combiner(const std::filesystem::path& dir);

struct WsModel {
  std::vector<ModuleId> selected;
  Matrix weights;    // L x T: spec l uses the T predictions of spec l
  Vector intercept;  // L
  std::vector<bool> ridge_used;  // per spec

  std::size_t num_specs() const { return static_cast<std::size_t>(weights.rows()); }
};

inline constexpr double kRidge = 1e-8;

// Per-spec least squares with intercept via the normal equations; a
// singular normal matrix is retried with kRidge added to its diagonal.
WsModel fit_ws(const Matrix& stacked_train, const Matrix& labels_train,
               std::vector<ModuleId> selected);
Matrix predict(const WsModel& model, const Matrix& stacked, const std::vector<ModuleId>& order);

nlohmann::json to_json(const WsModel& model);
WsModel ws_from_json(const nlohmann::json& j);

inline constexpr std::size_t kB2Modules = 3;

struct BenchmarkInputs {
  // Per-module predictions for every device row (normalized units), row-major module order.
  std::span<const Matrix> predictions;
  const Matrix* labels = nullptr;  // W x L normalized
  std::span<const std::size_t> train_rows;  // rows the combiners are fit on
  std::span<const std::size_t> test_rows;
  int num_stimuli = 0;
  std::vector<ModuleId> selected;
  const CombinerModel* combiner = nullptr;
  std::uint64_t b2_seed = 0;
};

struct BenchmarkResult {
  std::vector<std::string> columns;  // B1, B2, B3, Proposed (B2 absent if skipped)
  Matrix mse;                        // L x columns, test rows
  std::vector<ModuleId> b2_modules;
  std::vector<std::string> warnings;
  WsModel b3;
  std::optional<WsModel> b2;

  std::optional<Eigen::Index> column(std::string_view name) const;
};

// B1: mean of all modules. B2: weighted sum of kB2Modules seeded-random modules.
// B3: weighted sum of the selected modules. Proposed: the combiner network.
BenchmarkResult run_benchmarks(const BenchmarkInputs& in);

// Seeded draw of `count` distinct modules, returned in row-major order.
std::vector<ModuleId> random_modules(std::size_t num_modules, int num_stimuli, std::size_t count,
                                     std::uint64_t seed);

}  // namespace aptest::combiner
