#include "aptest/pipeline.hpp"

#include "aptest/combiner.hpp"
#include "aptest/io.hpp"
#include "aptest/nn.hpp"
#include "aptest/report.hpp"
#include "aptest/seed.hpp"

#include <json.hpp>

#include <atomic>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace aptest::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

RunPaths::RunPaths(const fs::path& out_dir)
    : root(out_dir),
      dataset(out_dir / "dataset"),
      models(out_dir / "models"),
      combine(out_dir / "combine"),
      report(out_dir / "report") {}

namespace {

std::ostream& null_stream() {
  static std::ostream sink(nullptr);
  return sink;
}

std::ostream& log_of(const StageOptions& opt) { return opt.log ? *opt.log : null_stream(); }

// Runs body(i) for i in [0, count). Results must not depend on scheduling.
template <typename Body>
void parallel_for(std::size_t count, int threads, Body body) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw StaleArtifactError(path.string() + ": missing; run the earlier stage first");
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": corrupt JSON: " + e.what());
  }
}

void require_hash(const fs::path& path, const json& doc, const std::string& expected,
                  const char* stage) {
  const std::string got = doc.value("config_hash", std::string{});
  if (got != expected) {
    throw StaleArtifactError(path.string() + ": produced under a different config (hash " + got +
                             ", expected " + expected + "); rerun '" + stage +
                             "' (with --force if needed)");
  }
}

std::string model_file(ModuleId id) { return "phi_" + id.file_tag() + ".model"; }
std::string loss_file(ModuleId id) { return "phi_" + id.file_tag() + "_loss.csv"; }
std::string prediction_file(ModuleId id) { return "predictions_" + id.file_tag() + ".bin"; }

dataset::Dataset load_checked_dataset(const PipelineConfig& cfg, const RunPaths& paths) {
  if (!fs::exists(paths.dataset / "manifest.json")) {
    throw StaleArtifactError((paths.dataset / "manifest.json").string() +
                             ": missing; run 'generate' first");
  }
  dataset::Dataset ds = dataset::load_dataset(paths.dataset);
  if (ds.config_hash != cfg.data_hash()) {
    throw StaleArtifactError(paths.dataset.string() +
                             ": dataset was generated under a different config; rerun 'generate'");
  }
  return ds;
}

json load_models_manifest(const PipelineConfig& cfg, const RunPaths& paths) {
  const fs::path path = paths.models / "manifest.json";
  json doc = read_json(path);
  require_hash(path, doc, cfg.train_hash(), "train");
  return doc;
}

std::vector<ModuleId> parse_selected(const json& selection, int num_stimuli) {
  std::vector<ModuleId> ids;
  const json& modules = selection.at("modules");
  for (std::size_t i = 0; i < modules.size(); ++i) {
    if (modules[i].at("selected").get<bool>()) ids.push_back(ModuleId::from_flat(i, num_stimuli));
  }
  return ids;
}

Matrix stack_rows(const std::vector<Matrix>& predictions, const std::vector<ModuleId>& ids,
                  int num_stimuli, std::span<const std::size_t> rows) {
  std::vector<Matrix> blocks;
  for (const auto& id : ids) {
    blocks.push_back(dataset::select_rows(predictions[id.flat(num_stimuli)], rows));
  }
  return combiner::stack_predictions(blocks);
}

nn::TrainConfig with_shuffle(nn::TrainConfig cfg, std::uint64_t seed) {
  cfg.shuffle_seed = seed;
  return cfg;
}

}  // namespace

std::vector<Matrix> load_predictions(const RunPaths& paths, const dataset::Dataset& ds) {
  const fs::path manifest_path = paths.models / "manifest.json";
  const json manifest = read_json(manifest_path);
  std::vector<Matrix> out;
  const auto W = static_cast<Eigen::Index>(ds.num_devices());
  const auto L = ds.labels_physical.cols();
  for (const ModuleId id : ds.modules()) {
    const std::string name = prediction_file(id);
    const fs::path path = paths.models / name;
    if (!fs::exists(path)) throw StaleArtifactError(path.string() + ": missing; run 'train'");
    const std::string bytes = io::read_text(path);
    const json& entry = manifest.at("files").at(name);
    if (io::crc32_hex(io::crc32(bytes)) != entry.at("crc32").get<std::string>()) {
      throw IoError(path.string() + ": checksum mismatch");
    }
    const std::vector<double> values = io::decode_f64_le(bytes);
    if (static_cast<Eigen::Index>(values.size()) != W * L) {
      throw IoError(path.string() + ": expected " + std::to_string(W) + "x" + std::to_string(L) +
                    " predictions");
    }
    out.push_back(Eigen::Map<const Matrix>(values.data(), W, L));
  }
  return out;
}

// -- generate --------------------------------------------------------------

void cmd_generate(const PipelineConfig& cfg, const StageOptions& opt) {
  auto& log = log_of(opt);
  const RunPaths paths(cfg.output_dir);
  const fs::path manifest = paths.dataset / "manifest.json";
  if (!opt.force && fs::exists(manifest)) {
    const json doc = read_json(manifest);
    if (doc.value("config_hash", std::string{}) == cfg.data_hash()) {
      log << "generate: dataset up to date (" << paths.dataset.string() << ")\n";
      return;
    }
  }

  const std::size_t W = cfg.devices;
  std::vector<surrogate::DeviceSample> devices(W);
  dataset::Dataset ds;
  ds.master_seed = cfg.master_seed;
  ds.config_hash = cfg.data_hash();
  ds.num_circuits = cfg.num_circuits();
  ds.num_stimuli = cfg.num_stimuli();
  ds.k_points = cfg.k_points;
  ds.tau_s = cfg.tau_s;
  for (const auto& c : cfg.circuits) ds.circuit_names.push_back(c.name);
  for (const auto& s : cfg.stimuli) ds.stimulus_names.push_back(s.name);

  ds.labels_physical.resize(static_cast<Eigen::Index>(W), static_cast<Eigen::Index>(surrogate::kNumSpecs));
  for (std::size_t w = 0; w < W; ++w) {
    devices[w] = surrogate::sample_device(cfg.master_seed, static_cast<std::int64_t>(w), cfg.nominals);
    const auto p = surrogate::true_specs(devices[w]);
    for (std::size_t l = 0; l < p.size(); ++l) {
      ds.labels_physical(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(l)) = p[l];
    }
  }
  ds.split = dataset::split(W, cfg.split_ratio, derive_seed(cfg.master_seed, "split"));
  ds.labels = dataset::normalize_labels(ds.labels_physical, ds.split.train_rows, cfg.spec_names);

  const std::size_t modules = cfg.num_modules();
  ds.responses.resize(modules);
  parallel_for(modules, cfg.threads, [&](std::size_t i) {
    const ModuleId id = ModuleId::from_flat(i, cfg.num_stimuli());
    dataset::ResponseMatrix r = dataset::build_response_matrix(
        devices, cfg.circuits[static_cast<std::size_t>(id.circuit)],
        cfg.stimuli[static_cast<std::size_t>(id.stimulus)], cfg.k_points, cfg.tau_s, cfg.simulation,
        id);
    r.col_stats = dataset::fit_normalizer(r.data, ds.split.train_rows);
    ds.responses[i] = std::move(r);
  });
  for (const auto& r : ds.responses) {
    log << "generate: module " << r.module.label() << " " << r.data.rows() << "x" << r.data.cols()
        << "\n";
  }
  dataset::save_dataset(paths.dataset, ds);
  log << "generate: wrote " << paths.dataset.string() << " (" << W << " devices, "
      << ds.split.train_rows.size() << " train / " << ds.split.test_rows.size() << " test)\n";
}

// -- train -----------------------------------------------------------------

void cmd_train(const PipelineConfig& cfg, const StageOptions& opt) {
  auto& log = log_of(opt);
  const RunPaths paths(cfg.output_dir);
  const dataset::Dataset ds = load_checked_dataset(cfg, paths);
  const dataset::RowPlan plan = dataset::plan_rows(ds.split, cfg.phi.train.validation_fraction);
  fs::create_directories(paths.models);

  const fs::path manifest_path = paths.models / "manifest.json";
  json previous = json::object();
  if (!opt.force && fs::exists(manifest_path)) {
    previous = read_json(manifest_path);
    if (previous.value("config_hash", std::string{}) != cfg.train_hash()) previous = json::object();
  }

  const auto modules = ds.modules();
  const Matrix y_fit = dataset::select_rows(ds.labels.data, plan.fit);
  std::vector<json> entries(modules.size());
  std::vector<bool> reused(modules.size(), false);

  parallel_for(modules.size(), cfg.threads, [&](std::size_t i) {
    const ModuleId id = modules[i];
    const fs::path model_path = paths.models / model_file(id);
    const fs::path pred_path = paths.models / prediction_file(id);
    if (previous.contains("modules") && previous["modules"].contains(id.label()) &&
        fs::exists(model_path) && fs::exists(pred_path)) {
      entries[i] = previous["modules"][id.label()];
      reused[i] = true;
      return;
    }
    const dataset::ResponseMatrix& r = ds.response(id);
    const Matrix x_all = dataset::apply_normalizer(r.data, r.col_stats);
    const Matrix x_fit = dataset::select_rows(x_all, plan.fit);

    std::vector<int> dims{static_cast<int>(ds.k_points)};
    dims.insert(dims.end(), cfg.phi.hidden.begin(), cfg.phi.hidden.end());
    dims.push_back(static_cast<int>(ds.labels_physical.cols()));
    const auto init_seed = derive_seed(cfg.master_seed, "phi-init", id.circuit, id.stimulus);
    const auto shuffle_seed = derive_seed(cfg.master_seed, "phi-shuffle", id.circuit, id.stimulus);

    nn::TrainResult result;
    try {
      result = nn::train(nn::init_model(dims, init_seed), x_fit, y_fit,
                         with_shuffle(cfg.phi.train, shuffle_seed));
    } catch (const TrainingError& e) {
      throw TrainingError("module " + id.label() + ": " + e.what(), e.epoch());
    }
    nn::save_model(model_path, result.model);

    io::Table loss;
    loss.header = {"epoch", "train_loss"};
    loss.rows.push_back({"0", io::format_double(result.initial_loss)});
    for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
      loss.rows.push_back({std::to_string(e + 1), io::format_double(result.loss_history[e])});
    }
    io::write_csv(paths.models / loss_file(id), loss);

    const Matrix pred = nn::predict(result.model, x_all);
    io::write_f64(pred_path, std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())));

    entries[i] = {{"model", model_file(id)},
                  {"init_seed", init_seed},
                  {"shuffle_seed", shuffle_seed},
                  {"initial_loss", result.initial_loss},
                  {"final_loss", result.loss_history.back()}};
  });

  json files = json::object();
  json module_entries = json::object();
  for (std::size_t i = 0; i < modules.size(); ++i) {
    const ModuleId id = modules[i];
    module_entries[id.label()] = entries[i];
    for (const std::string& name : {model_file(id), prediction_file(id)}) {
      files[name] = {{"crc32", io::crc32_hex(io::file_crc32(paths.models / name))}};
    }
    log << "train: module " << id.label() << (reused[i] ? " (up to date)" : "") << " loss "
        << entries[i].at("initial_loss").get<double>() << " -> "
        << entries[i].at("final_loss").get<double>() << "\n";
  }
  const json manifest = {{"config_hash", cfg.train_hash()},
                         {"fit_rows", plan.fit.size()},
                         {"validation_rows", plan.validation.size()},
                         {"modules", module_entries},
                         {"files", files}};
  io::write_text(manifest_path, manifest.dump(2) + "\n");
}

// -- select ----------------------------------------------------------------

selection::SelectionSolution cmd_select(const PipelineConfig& cfg, const StageOptions& opt) {
  auto& log = log_of(opt);
  const RunPaths paths(cfg.output_dir);
  const dataset::Dataset ds = load_checked_dataset(cfg, paths);
  load_models_manifest(cfg, paths);
  const std::vector<Matrix> predictions = load_predictions(paths, ds);
  const dataset::RowPlan plan = dataset::plan_rows(ds.split, cfg.phi.train.validation_fraction);

  const Matrix y_val = dataset::select_rows(ds.labels.data, plan.validation);
  selection::MseMatrix mse;
  mse.num_circuits = ds.num_circuits;
  mse.num_stimuli = ds.num_stimuli;
  mse.eval_rows = "validation";
  mse.e.resize(static_cast<Eigen::Index>(predictions.size()), y_val.cols());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    mse.e.row(static_cast<Eigen::Index>(i)) =
        selection::per_spec_mse(dataset::select_rows(predictions[i], plan.validation), y_val)
            .transpose();
  }

  const Eigen::Map<const Vector> costs(cfg.module_costs.data(),
                                       static_cast<Eigen::Index>(cfg.module_costs.size()));
  const Eigen::Map<const Vector> thresholds(cfg.thresholds.data(),
                                            static_cast<Eigen::Index>(cfg.thresholds.size()));
  const fs::path error_path = paths.root / "select_error.json";
  if (fs::exists(error_path)) fs::remove(error_path);

  selection::SelectionProblem problem;
  try {
    problem = selection::build_problem(mse, costs, thresholds);
  } catch (const selection::InfeasibleSelectionError& e) {
    json uncovered = json::array();
    for (const auto& u : e.uncovered()) {
      uncovered.push_back({{"spec", cfg.spec_names[u.spec]},
                           {"best_mse", u.best_mse},
                           {"threshold", u.threshold}});
    }
    const json err = {{"error", "infeasible_selection"},
                      {"message", "no module meets the MSE threshold of every listed spec"},
                      {"uncovered", uncovered}};
    fs::create_directories(paths.root);
    io::write_text(error_path, err.dump(2) + "\n");
    throw;
  }

  const selection::SelectionSolution solution = selection::solve_implicit_enumeration(problem);
  json oracle = nullptr;
  if (problem.num_modules() <= selection::kExhaustiveLimit) {
    const selection::SelectionSolution check = selection::solve_exhaustive(problem);
    if (check.x != solution.x || check.total_cost != solution.total_cost) {
      throw Error("select: implicit enumeration disagrees with exhaustive search");
    }
    oracle = {{"agrees", true}, {"subsets_checked", check.nodes_explored}};
  }

  json out = selection::to_json(problem, solution, cfg.spec_names);
  out["config_hash"] = cfg.select_hash();
  out["nodes_explored"] = solution.nodes_explored;
  out["exhaustive_check"] = oracle;
  io::write_text(paths.root / "selection.json", out.dump(2) + "\n");

  log << "select: modules";
  for (std::size_t i : solution.selected()) log << " " << ModuleId::from_flat(i, ds.num_stimuli).label();
  log << ", cost " << solution.total_cost << "\n";
  return solution;
}

// -- combine ---------------------------------------------------------------

namespace {

struct CombineInputs {
  dataset::Dataset ds;
  dataset::RowPlan plan;
  std::vector<Matrix> predictions;
  json selection;
  std::vector<ModuleId> selected;
};

CombineInputs load_combine_inputs(const PipelineConfig& cfg, const RunPaths& paths) {
  CombineInputs in;
  in.ds = load_checked_dataset(cfg, paths);
  load_models_manifest(cfg, paths);
  const fs::path sel_path = paths.root / "selection.json";
  in.selection = read_json(sel_path);
  require_hash(sel_path, in.selection, cfg.select_hash(), "select");
  in.predictions = load_predictions(paths, in.ds);
  in.plan = dataset::plan_rows(in.ds.split, cfg.phi.train.validation_fraction);
  in.selected = parse_selected(in.selection, in.ds.num_stimuli);
  if (in.selected.empty()) throw StaleArtifactError(sel_path.string() + ": no module selected");
  return in;
}

combiner::BenchmarkResult benchmarks_for(const PipelineConfig& cfg, const CombineInputs& in,
                                         const combiner::CombinerModel& rho) {
  combiner::BenchmarkInputs b;
  b.predictions = in.predictions;
  b.labels = &in.ds.labels.data;
  b.train_rows = in.plan.train;
  b.test_rows = in.plan.test;
  b.num_stimuli = in.ds.num_stimuli;
  b.selected = in.selected;
  b.combiner = &rho;
  b.b2_seed = derive_seed(cfg.master_seed, "b2");
  return combiner::run_benchmarks(b);
}

}  // namespace

void cmd_combine(const PipelineConfig& cfg, const StageOptions& opt) {
  auto& log = log_of(opt);
  const RunPaths paths(cfg.output_dir);
  const CombineInputs in = load_combine_inputs(cfg, paths);

  const Matrix stack_train =
      stack_rows(in.predictions, in.selected, in.ds.num_stimuli, in.plan.train);
  const Matrix y_train = dataset::select_rows(in.ds.labels.data, in.plan.train);
  const combiner::CombinerModel rho = combiner::train_combiner(
      stack_train, y_train, in.selected, cfg.rho.hidden, derive_seed(cfg.master_seed, "rho-init"),
      with_shuffle(cfg.rho.train, derive_seed(cfg.master_seed, "rho-shuffle")));
  combiner::save_combiner(paths.combine, rho);

  const combiner::BenchmarkResult bench = benchmarks_for(cfg, in, rho);
  json ws = {{"B3", combiner::to_json(bench.b3)}};
  if (bench.b2) ws["B2"] = combiner::to_json(*bench.b2);
  io::write_text(paths.combine / "ws.json", ws.dump(2) + "\n");

  io::Table t;
  t.header = {"spec"};
  t.header.insert(t.header.end(), bench.columns.begin(), bench.columns.end());
  for (Eigen::Index l = 0; l < bench.mse.rows(); ++l) {
    std::vector<std::string> row{cfg.spec_names[static_cast<std::size_t>(l)]};
    for (Eigen::Index c = 0; c < bench.mse.cols(); ++c) row.push_back(io::format_double(bench.mse(l, c)));
    t.rows.push_back(std::move(row));
  }
  io::write_csv(paths.combine / "benchmarks.csv", t);
  io::write_text(paths.combine / "manifest.json",
                 json{{"config_hash", cfg.combine_hash()}}.dump(2) + "\n");

  for (const auto& w : bench.warnings) log << "combine: warning: " << w << "\n";
  log << "combine: system test MSE";
  for (Eigen::Index c = 0; c < bench.mse.cols(); ++c) {
    log << " " << bench.columns[static_cast<std::size_t>(c)] << "="
        << report::system_mse(bench.mse.col(c));
  }
  log << "\n";
}

// -- report ----------------------------------------------------------------

std::vector<std::string> cmd_report(const PipelineConfig& cfg, const StageOptions& opt) {
  auto& log = log_of(opt);
  const RunPaths paths(cfg.output_dir);
  const CombineInputs in = load_combine_inputs(cfg, paths);
  {
    const fs::path path = paths.combine / "manifest.json";
    require_hash(path, read_json(path), cfg.combine_hash(), "combine");
  }
  const combiner::CombinerModel rho = combiner::load_combiner(paths.combine);
  const auto& ds = in.ds;
  const auto& test = in.plan.test;

  report::Report r;
  r.spec_names = cfg.spec_names;
  r.thresholds = Eigen::Map<const Vector>(cfg.thresholds.data(),
                                          static_cast<Eigen::Index>(cfg.thresholds.size()));
  r.config_hash = cfg.report_hash();

  const Matrix y_test = dataset::select_rows(ds.labels.data, test);
  r.mse_grid.resize(static_cast<Eigen::Index>(in.predictions.size()), y_test.cols());
  for (std::size_t i = 0; i < in.predictions.size(); ++i) {
    r.module_labels.push_back(ModuleId::from_flat(i, ds.num_stimuli).label());
    r.mse_grid.row(static_cast<Eigen::Index>(i)) =
        selection::per_spec_mse(dataset::select_rows(in.predictions[i], test), y_test).transpose();
  }

  r.benchmarks = benchmarks_for(cfg, in, rho);
  for (const auto& id : in.selected) r.selected.push_back(id.label());
  r.selection_cost = in.selection.at("total_cost").get<double>();

  const Matrix proposed = combiner::predict(
      rho, stack_rows(in.predictions, in.selected, ds.num_stimuli, test), in.selected);
  const Matrix predicted_phys = ds.labels.denormalize(proposed);
  const Matrix actual_phys = dataset::select_rows(ds.labels_physical, test);
  for (Eigen::Index l = 0; l < actual_phys.cols(); ++l) {
    report::ScatterSeries s;
    s.devices = test;
    s.actual = actual_phys.col(l);
    s.predicted = predicted_phys.col(l);
    r.scatter.push_back(std::move(s));
  }
  r.bounds = report::fit_fault_bounds(ds.labels_physical, cfg.bound_sides);
  r.coverage = report::fault_coverage(actual_phys, predicted_phys, r.bounds);

  if (cfg.sweep.enabled && cfg.sweep.max_modules > 0) {
    report::SweepInputs s;
    s.predictions = in.predictions;
    s.labels = &ds.labels.data;
    s.fit_rows = in.plan.fit;
    s.validation_rows = in.plan.validation;
    s.train_rows = in.plan.train;
    s.test_rows = test;
    s.num_stimuli = ds.num_stimuli;
    s.max_count = cfg.sweep.max_modules;
    s.combiner_hidden = cfg.rho.hidden;
    s.combiner_cfg = cfg.rho.train;
    s.seed = derive_seed(cfg.master_seed, "sweep");
    r.sweep = report::sweep_module_count(s);
  }

  json phi_seeds = json::object();
  for (const ModuleId id : ds.modules()) {
    phi_seeds[id.label()] = {
        {"init", derive_seed(cfg.master_seed, "phi-init", id.circuit, id.stimulus)},
        {"shuffle", derive_seed(cfg.master_seed, "phi-shuffle", id.circuit, id.stimulus)}};
  }
  r.seeds = {{"master", cfg.master_seed},
             {"split", derive_seed(cfg.master_seed, "split")},
             {"phi", phi_seeds},
             {"rho_init", derive_seed(cfg.master_seed, "rho-init")},
             {"rho_shuffle", derive_seed(cfg.master_seed, "rho-shuffle")},
             {"b2", derive_seed(cfg.master_seed, "b2")},
             {"sweep", derive_seed(cfg.master_seed, "sweep")}};

  report::emit_report(r, paths.report);
  const auto violations = r.threshold_violations();
  log << "report: wrote " << paths.report.string() << "\n";
  return violations;
}

std::vector<std::string> run_all(const PipelineConfig& cfg, const StageOptions& opt) {
  cmd_generate(cfg, opt);
  cmd_train(cfg, opt);
  cmd_select(cfg, opt);
  cmd_combine(cfg, opt);
  return cmd_report(cfg, opt);
}

}  // namespace aptest::pipeline
