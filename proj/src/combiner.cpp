#include "aptest/combiner.hpp"

#include "aptest/io.hpp"
#include "aptest/selection.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <numeric>
#include <random>

namespace aptest::combiner {

using nlohmann::json;
namespace fs = std::filesystem;

Matrix stack_predictions(std::span<const Matrix> blocks) {
  if (blocks.empty()) throw DimensionError("stack_predictions: no modules selected");
  const Eigen::Index rows = blocks.front().rows();
  Eigen::Index width = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) throw DimensionError("stack_predictions: row count differs across modules");
    width += b.cols();
  }
  Matrix out(rows, width);
  Eigen::Index col = 0;
  for (const auto& b : blocks) {
    out.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  return out;
}

Matrix stack_predictions(std::span<const nn::MlpModel> models, std::span<const Matrix> inputs) {
  if (models.size() != inputs.size()) throw DimensionError("stack_predictions: one input per model");
  std::vector<Matrix> blocks;
  blocks.reserve(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) blocks.push_back(nn::predict(models[i], inputs[i]));
  return stack_predictions(blocks);
}

namespace {

void check_order(const std::vector<ModuleId>& expected, const std::vector<ModuleId>& got) {
  if (expected != got) {
    throw DimensionError("stacked module order does not match the order the model was fit on");
  }
}

std::vector<std::size_t> all_rows(Eigen::Index n) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

json module_list(const std::vector<ModuleId>& ids) {
  json out = json::array();
  for (const auto& id : ids) out.push_back({id.circuit + 1, id.stimulus + 1});
  return out;
}

std::vector<ModuleId> parse_module_list(const json& j) {
  std::vector<ModuleId> ids;
  for (const auto& item : j) ids.push_back({item.at(0).get<int>() - 1, item.at(1).get<int>() - 1});
  return ids;
}

}  // namespace

CombinerModel train_combiner(const Matrix& stacked_train, const Matrix& labels_train,
                             std::vector<ModuleId> selected, const std::vector<int>& hidden,
                             std::uint64_t init_seed, const nn::TrainConfig& cfg) {
  if (stacked_train.rows() == 0) throw DimensionError("train_combiner: no training rows");
  if (selected.empty()) throw DimensionError("train_combiner: no modules selected");
  const auto L = labels_train.cols();
  if (stacked_train.cols() != static_cast<Eigen::Index>(selected.size()) * L) {
    throw DimensionError("train_combiner: stacked width != T * L");
  }
  CombinerModel model;
  model.selected = std::move(selected);
  model.input_stats = stacked_train.rows() >= 2
                          ? dataset::fit_normalizer(stacked_train, all_rows(stacked_train.rows()))
                          : dataset::ColumnStats{Vector::Zero(stacked_train.cols()),
                                                 Vector::Zero(stacked_train.cols())};
  std::vector<int> dims{static_cast<int>(stacked_train.cols())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(static_cast<int>(L));
  nn::TrainResult r = nn::train(nn::init_model(dims, init_seed),
                                dataset::apply_normalizer(stacked_train, model.input_stats),
                                labels_train, cfg);
  model.inner = std::move(r.model);
  model.loss_history = std::move(r.loss_history);
  model.initial_loss = r.initial_loss;
  return model;
}

Matrix predict(const CombinerModel& model, const Matrix& stacked,
               const std::vector<ModuleId>& order) {
  check_order(model.selected, order);
  return nn::predict(model.inner, dataset::apply_normalizer(stacked, model.input_stats));
}

void save_combiner(const fs::path& dir, const CombinerModel& model) {
  fs::create_directories(dir);
  nn::save_model(dir / "combiner_rho.model", model.inner);
  const json j = {
      {"format", "aptest-combiner/1"},
      {"selected", module_list(model.selected)},
      {"input_mean", std::vector<double>(model.input_stats.mean.begin(), model.input_stats.mean.end())},
      {"input_std",
       std::vector<double>(model.input_stats.stddev.begin(), model.input_stats.stddev.end())},
      {"initial_loss", model.initial_loss},
      {"loss_history", model.loss_history},
  };
  io::write_text(dir / "combiner.json", j.dump(2) + "\n");
}

CombinerModel load_combiner(const fs::path& dir) {
  CombinerModel model;
  model.inner = nn::load_model(dir / "combiner_rho.model");
  try {
    const json j = json::parse(io::read_text(dir / "combiner.json"));
    model.selected = parse_module_list(j.at("selected"));
    const auto mean = j.at("input_mean").get<std::vector<double>>();
    const auto sd = j.at("input_std").get<std::vector<double>>();
    model.input_stats.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    model.input_stats.stddev = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    model.initial_loss = j.at("initial_loss").get<double>();
    model.loss_history = j.at("loss_history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError((dir / "combiner.json").string() + ": " + e.what());
  }
  if (model.input_stats.size() != model.inner.input_dim()) {
    throw IoError((dir / "combiner.json").string() + ": input stats do not match the network");
  }
  return model;
}

// -- weighted sum ----------------------------------------------------------

WsModel fit_ws(const Matrix& stacked_train, const Matrix& labels_train,
               std::vector<ModuleId> selected) {
  const auto T = static_cast<Eigen::Index>(selected.size());
  const auto L = labels_train.cols();
  if (T < 1) throw FitError("fit_ws: needs at least one module");
  if (stacked_train.rows() != labels_train.rows() || stacked_train.rows() == 0) {
    throw DimensionError("fit_ws: stacked and label rows differ or are empty");
  }
  if (stacked_train.cols() != T * L) throw DimensionError("fit_ws: stacked width != T * L");

  WsModel ws;
  ws.selected = std::move(selected);
  ws.weights.resize(L, T);
  ws.intercept.resize(L);
  ws.ridge_used.assign(static_cast<std::size_t>(L), false);

  const Eigen::Index W = stacked_train.rows();
  Eigen::MatrixXd design(W, T + 1);
  for (Eigen::Index l = 0; l < L; ++l) {
    design.col(0).setOnes();
    for (Eigen::Index t = 0; t < T; ++t) design.col(t + 1) = stacked_train.col(t * L + l);
    const Eigen::MatrixXd normal = design.transpose() * design;
    const Eigen::VectorXd rhs = design.transpose() * labels_train.col(l);

    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                          pivots.minCoeff() <= 1e-13 * pivots.maxCoeff();
    Eigen::VectorXd beta;
    if (!singular) {
      beta = ldlt.solve(rhs);
    } else {
      Eigen::MatrixXd ridge = normal;
      ridge.diagonal().array() += kRidge;
      Eigen::LDLT<Eigen::MatrixXd> fallback(ridge);
      if (fallback.info() != Eigen::Success || !fallback.isPositive()) {
        throw FitError("fit_ws: normal matrix singular for spec " + std::to_string(l) +
                       " even with ridge");
      }
      beta = fallback.solve(rhs);
      ws.ridge_used[static_cast<std::size_t>(l)] = true;
    }
    if (!beta.allFinite()) throw FitError("fit_ws: non-finite weights for spec " + std::to_string(l));
    ws.intercept[l] = beta[0];
    ws.weights.row(l) = beta.tail(T).transpose();
  }
  return ws;
}

Matrix predict(const WsModel& model, const Matrix& stacked, const std::vector<ModuleId>& order) {
  check_order(model.selected, order);
  const auto T = static_cast<Eigen::Index>(model.selected.size());
  const auto L = model.weights.rows();
  if (stacked.cols() != T * L) throw DimensionError("ws predict: stacked width != T * L");
  Matrix out(stacked.rows(), L);
  for (Eigen::Index l = 0; l < L; ++l) {
    out.col(l).setConstant(model.intercept[l]);
    for (Eigen::Index t = 0; t < T; ++t) out.col(l) += model.weights(l, t) * stacked.col(t * L + l);
  }
  return out;
}

json to_json(const WsModel& model) {
  json weights = json::array();
  for (Eigen::Index l = 0; l < model.weights.rows(); ++l) {
    weights.push_back(std::vector<double>(model.weights.row(l).begin(), model.weights.row(l).end()));
  }
  return {{"selected", module_list(model.selected)},
          {"weights", weights},
          {"intercept", std::vector<double>(model.intercept.begin(), model.intercept.end())},
          {"ridge_used", model.ridge_used}};
}

WsModel ws_from_json(const json& j) {
  WsModel ws;
  ws.selected = parse_module_list(j.at("selected"));
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  const auto T = static_cast<Eigen::Index>(ws.selected.size());
  ws.weights.resize(static_cast<Eigen::Index>(rows.size()), T);
  for (std::size_t l = 0; l < rows.size(); ++l) {
    if (static_cast<Eigen::Index>(rows[l].size()) != T) throw DimensionError("ws json: weight width");
    for (Eigen::Index t = 0; t < T; ++t) ws.weights(static_cast<Eigen::Index>(l), t) = rows[l][static_cast<std::size_t>(t)];
  }
  const auto b = j.at("intercept").get<std::vector<double>>();
  ws.intercept = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  ws.ridge_used = j.at("ridge_used").get<std::vector<bool>>();
  return ws;
}

// -- benchmarks ------------------------------------------------------------

std::optional<Eigen::Index> BenchmarkResult::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  }
  return std::nullopt;
}

std::vector<ModuleId> random_modules(std::size_t num_modules, int num_stimuli, std::size_t count,
                                     std::uint64_t seed) {
  std::vector<std::size_t> order(num_modules);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(count, num_modules));
  std::sort(order.begin(), order.end());
  std::vector<ModuleId> ids;
  for (auto i : order) ids.push_back(ModuleId::from_flat(i, num_stimuli));
  return ids;
}

namespace {

Matrix stack_rows(std::span<const Matrix> predictions, const std::vector<ModuleId>& ids,
                  int num_stimuli, std::span<const std::size_t> rows) {
  std::vector<Matrix> blocks;
  for (const auto& id : ids) {
    blocks.push_back(dataset::select_rows(predictions[id.flat(num_stimuli)], rows));
  }
  return stack_predictions(blocks);
}

}  // namespace

BenchmarkResult run_benchmarks(const BenchmarkInputs& in) {
  if (in.predictions.empty() || in.labels == nullptr || in.combiner == nullptr) {
    throw DimensionError("run_benchmarks: missing inputs");
  }
  if (in.selected.empty()) throw DimensionError("run_benchmarks: empty selection");
  const Matrix y_train = dataset::select_rows(*in.labels, in.train_rows);
  const Matrix y_test = dataset::select_rows(*in.labels, in.test_rows);
  const auto L = in.labels->cols();

  BenchmarkResult out;
  std::vector<Vector> cols;

  // B1: unweighted mean of every module.
  {
    Matrix mean = Matrix::Zero(static_cast<Eigen::Index>(in.test_rows.size()), L);
    for (const auto& p : in.predictions) mean += dataset::select_rows(p, in.test_rows);
    mean /= static_cast<double>(in.predictions.size());
    out.columns.push_back("B1");
    cols.push_back(selection::per_spec_mse(mean, y_test));
  }
  // B2: weighted sum over randomly drawn modules.
  if (in.predictions.size() >= kB2Modules) {
    out.b2_modules = random_modules(in.predictions.size(), in.num_stimuli, kB2Modules, in.b2_seed);
    WsModel ws = fit_ws(stack_rows(in.predictions, out.b2_modules, in.num_stimuli, in.train_rows),
                        y_train, out.b2_modules);
    const Matrix pred =
        predict(ws, stack_rows(in.predictions, out.b2_modules, in.num_stimuli, in.test_rows),
                out.b2_modules);
    out.columns.push_back("B2");
    cols.push_back(selection::per_spec_mse(pred, y_test));
    out.b2 = std::move(ws);
  } else {
    out.warnings.push_back("B2 skipped: only " + std::to_string(in.predictions.size()) +
                           " modules available, " + std::to_string(kB2Modules) + " required");
  }
  // B3: weighted sum over the selected modules.
  {
    out.b3 = fit_ws(stack_rows(in.predictions, in.selected, in.num_stimuli, in.train_rows), y_train,
                    in.selected);
    const Matrix pred = predict(
        out.b3, stack_rows(in.predictions, in.selected, in.num_stimuli, in.test_rows), in.selected);
    out.columns.push_back("B3");
    cols.push_back(selection::per_spec_mse(pred, y_test));
  }
  // Proposed: combiner network over the selected modules.
  {
    const Matrix pred = predict(
        *in.combiner, stack_rows(in.predictions, in.selected, in.num_stimuli, in.test_rows),
        in.selected);
    out.columns.push_back("Proposed");
    cols.push_back(selection::per_spec_mse(pred, y_test));
  }

  out.mse.resize(L, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.mse.col(static_cast<Eigen::Index>(c)) = cols[c];
  return out;
}

}  // namespace aptest::combiner
