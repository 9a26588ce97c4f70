#include "aptest/dataset.hpp"

#include "aptest/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace aptest::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

ResponseMatrix build_response_matrix(std::span<const surrogate::DeviceSample> devices,
                                     const surrogate::TestCircuit& circuit,
                                     const surrogate::Stimulus& stimulus, std::size_t k_points,
                                     double tau_s, const surrogate::SimOptions& options,
                                     ModuleId module) {
  if (devices.empty()) throw InvalidDatasetError("build_response_matrix: no devices");
  const surrogate::ResponseSimulator sim(circuit, stimulus, k_points, tau_s, options);
  ResponseMatrix r;
  r.module = module;
  r.data.resize(static_cast<Eigen::Index>(devices.size()), static_cast<Eigen::Index>(k_points));
  for (std::size_t w = 0; w < devices.size(); ++w) {
    try {
      sim.run(devices[w], std::span<double>(r.data.row(static_cast<Eigen::Index>(w)).data(),
                                            k_points));
    } catch (const SimulationError& e) {
      throw SimulationError("module " + module.label() + ", device " + std::to_string(w) + ": " +
                            e.what());
    }
  }
  return r;
}

ColumnStats fit_normalizer(const Matrix& data, std::span<const std::size_t> rows) {
  if (rows.size() < 2) throw InvalidDatasetError("fit_normalizer needs at least 2 rows");
  const Eigen::Index cols = data.cols();
  const double n = static_cast<double>(rows.size());
  ColumnStats s;
  s.mean = Vector::Zero(cols);
  s.stddev = Vector::Zero(cols);
  for (std::size_t r : rows) s.mean += data.row(static_cast<Eigen::Index>(r)).transpose();
  s.mean /= n;
  for (std::size_t r : rows) {
    s.stddev += (data.row(static_cast<Eigen::Index>(r)).transpose() - s.mean).array().square().matrix();
  }
  s.stddev = (s.stddev / n).array().sqrt().matrix();
  return s;
}

Matrix apply_normalizer(const Matrix& data, const ColumnStats& stats) {
  if (stats.size() != data.cols()) {
    throw DimensionError("apply_normalizer: stats length " + std::to_string(stats.size()) +
                         " != column count " + std::to_string(data.cols()));
  }
  Matrix out(data.rows(), data.cols());
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    const double sd = stats.stddev[c];
    if (sd > 0.0) {
      out.col(c) = (data.col(c).array() - stats.mean[c]) / sd;
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

Matrix select_rows(const Matrix& data, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Matrix SpecMatrix::normalize(const Matrix& physical) const {
  if (physical.cols() != mean.size()) throw DimensionError("label width mismatch");
  Matrix out(physical.rows(), physical.cols());
  for (Eigen::Index c = 0; c < physical.cols(); ++c) {
    out.col(c) = (physical.col(c).array() - mean[c]) / stddev[c];
  }
  return out;
}

Matrix SpecMatrix::denormalize(const Matrix& normalized) const {
  if (normalized.cols() != mean.size()) throw DimensionError("label width mismatch");
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    out.col(c) = normalized.col(c).array() * stddev[c] + mean[c];
  }
  return out;
}

SpecMatrix normalize_labels(const Matrix& physical, std::span<const std::size_t> train_rows,
                            std::vector<std::string> names) {
  if (static_cast<Eigen::Index>(names.size()) != physical.cols()) {
    throw DimensionError("normalize_labels: " + std::to_string(names.size()) + " names for " +
                         std::to_string(physical.cols()) + " columns");
  }
  const ColumnStats stats = fit_normalizer(physical, train_rows);
  for (Eigen::Index c = 0; c < physical.cols(); ++c) {
    if (!(stats.stddev[c] > 0.0)) {
      throw InvalidDatasetError("specification '" + names[static_cast<std::size_t>(c)] +
                                "' has zero variance over the training rows");
    }
  }
  SpecMatrix spec;
  spec.mean = stats.mean;
  spec.stddev = stats.stddev;
  spec.names = std::move(names);
  spec.data = spec.normalize(physical);
  return spec;
}

SplitIndex split(std::size_t w_total, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidConfigError("split ratio must be in (0, 1)");
  if (w_total < 10) throw InvalidConfigError("split needs at least 10 rows");
  std::vector<std::size_t> order(w_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(w_total)));
  SplitIndex s;
  s.ratio = ratio;
  s.seed = seed;
  s.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

RowPlan plan_rows(const SplitIndex& split, double validation_fraction) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InvalidConfigError("validation_fraction must be in (0, 1)");
  }
  const std::size_t n = split.train_rows.size();
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n >= 2 ? n - 1 : 1);
  if (n < 2) throw InvalidDatasetError("too few training rows for a validation slice");
  RowPlan plan;
  plan.fit.assign(split.train_rows.begin(), split.train_rows.end() - static_cast<std::ptrdiff_t>(n_val));
  plan.validation.assign(split.train_rows.end() - static_cast<std::ptrdiff_t>(n_val),
                         split.train_rows.end());
  plan.train = split.train_rows;
  plan.test = split.test_rows;
  return plan;
}

std::vector<ModuleId> Dataset::modules() const {
  std::vector<ModuleId> ids;
  for (int m = 0; m < num_circuits; ++m) {
    for (int n = 0; n < num_stimuli; ++n) ids.push_back({m, n});
  }
  return ids;
}

// -- persistence -----------------------------------------------------------

namespace {

constexpr const char* kFormat = "aptest-dataset/1";

std::string response_file(ModuleId id) { return "responses_" + id.file_tag() + ".bin"; }
std::string colstats_file(ModuleId id) { return "colstats_" + id.file_tag() + ".csv"; }

io::Table stats_table(const Vector& mean, const Vector& sd, const std::vector<std::string>& keys,
                      const std::string& key_name) {
  io::Table t;
  t.header = {key_name, "mean", "std"};
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    t.rows.push_back({keys.empty() ? std::to_string(i + 1) : keys[static_cast<std::size_t>(i)],
                      io::format_double(mean[i]), io::format_double(sd[i])});
  }
  return t;
}

void read_stats(const io::Table& t, const fs::path& origin, Eigen::Index expected, Vector& mean,
                Vector& sd, std::vector<std::string>* keys) {
  if (t.header.size() != 3 || static_cast<Eigen::Index>(t.rows.size()) != expected) {
    throw IoError(origin.string() + ": expected " + std::to_string(expected) +
                  " stats rows, manifest disagrees with file");
  }
  mean.resize(expected);
  sd.resize(expected);
  for (Eigen::Index i = 0; i < expected; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (keys) keys->push_back(row[0]);
    mean[i] = io::parse_double(row[1]);
    sd[i] = io::parse_double(row[2]);
  }
}

struct FileEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

void record(json& files, const fs::path& dir, const FileEntry& e) {
  files[e.name] = {{"crc32", io::crc32_hex(io::file_crc32(dir / e.name))},
                   {"rows", e.rows},
                   {"cols", e.cols}};
}

// Reads a file listed in the manifest and verifies its checksum.
std::string checked_read(const fs::path& dir, const json& files, const std::string& name) {
  if (!files.contains(name)) throw IoError((dir / name).string() + ": not listed in manifest");
  const fs::path path = dir / name;
  if (!fs::exists(path)) throw IoError(path.string() + ": missing");
  std::string bytes = io::read_text(path);
  const std::string expected = files[name].at("crc32").get<std::string>();
  if (io::crc32_hex(io::crc32(bytes)) != expected) {
    throw IoError(path.string() + ": checksum mismatch (expected " + expected + ")");
  }
  return bytes;
}

void check_shape(const fs::path& path, const json& entry, std::size_t rows, std::size_t cols) {
  const auto mr = entry.at("rows").get<std::size_t>();
  const auto mc = entry.at("cols").get<std::size_t>();
  if (mr != rows || mc != cols) {
    throw IoError(path.string() + ": shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                  " does not match manifest " + std::to_string(mr) + "x" + std::to_string(mc));
  }
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  const std::size_t W = ds.num_devices();
  const auto L = static_cast<std::size_t>(ds.labels_physical.cols());
  json files = json::object();

  {
    io::Table t;
    t.header = {"device"};
    t.header.insert(t.header.end(), ds.labels.names.begin(), ds.labels.names.end());
    for (std::size_t w = 0; w < W; ++w) {
      std::vector<std::string> row{std::to_string(w)};
      for (std::size_t l = 0; l < L; ++l) {
        row.push_back(io::format_double(ds.labels_physical(static_cast<Eigen::Index>(w),
                                                           static_cast<Eigen::Index>(l))));
      }
      t.rows.push_back(std::move(row));
    }
    io::write_csv(dir / "labels.csv", t);
    record(files, dir, {"labels.csv", W, L});
  }
  {
    io::write_csv(dir / "specstats.csv",
                  stats_table(ds.labels.mean, ds.labels.stddev, ds.labels.names, "spec"));
    record(files, dir, {"specstats.csv", L, 2});
  }
  {
    io::Table t;
    t.header = {"role", "row"};
    for (auto r : ds.split.train_rows) t.rows.push_back({"train", std::to_string(r)});
    for (auto r : ds.split.test_rows) t.rows.push_back({"test", std::to_string(r)});
    io::write_csv(dir / "split.csv", t);
    record(files, dir, {"split.csv", W, 2});
  }
  for (const auto& r : ds.responses) {
    const auto K = static_cast<std::size_t>(r.data.cols());
    io::write_f64(dir / response_file(r.module),
                  std::span<const double>(r.data.data(), static_cast<std::size_t>(r.data.size())));
    record(files, dir, {response_file(r.module), static_cast<std::size_t>(r.data.rows()), K});
    io::write_csv(dir / colstats_file(r.module),
                  stats_table(r.col_stats.mean, r.col_stats.stddev, {}, "k"));
    record(files, dir, {colstats_file(r.module), static_cast<std::size_t>(r.col_stats.size()), 2});
  }

  json manifest = {
      {"format", kFormat},
      {"master_seed", ds.master_seed},
      {"config_hash", ds.config_hash},
      {"devices", W},
      {"k_points", ds.k_points},
      {"tau_s", ds.tau_s},
      {"num_circuits", ds.num_circuits},
      {"num_stimuli", ds.num_stimuli},
      {"circuit_names", ds.circuit_names},
      {"stimulus_names", ds.stimulus_names},
      {"spec_names", ds.labels.names},
      {"split", {{"ratio", ds.split.ratio}, {"seed", ds.split.seed},
                 {"train", ds.split.train_rows.size()}, {"test", ds.split.test_rows.size()}}},
      {"files", files},
  };
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError(manifest_path.string() + ": missing");
  json manifest;
  try {
    manifest = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": corrupt manifest: " + e.what());
  }

  try {
    if (manifest.at("format") != kFormat) throw IoError(manifest_path.string() + ": unknown format");
    const json& files = manifest.at("files");
    Dataset ds;
    ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    ds.config_hash = manifest.at("config_hash").get<std::string>();
    ds.k_points = manifest.at("k_points").get<std::size_t>();
    ds.tau_s = manifest.at("tau_s").get<double>();
    ds.num_circuits = manifest.at("num_circuits").get<int>();
    ds.num_stimuli = manifest.at("num_stimuli").get<int>();
    ds.circuit_names = manifest.at("circuit_names").get<std::vector<std::string>>();
    ds.stimulus_names = manifest.at("stimulus_names").get<std::vector<std::string>>();
    const auto W = manifest.at("devices").get<std::size_t>();
    auto names = manifest.at("spec_names").get<std::vector<std::string>>();
    const std::size_t L = names.size();

    {
      const std::string name = "labels.csv";
      const io::Table t = io::parse_csv(checked_read(dir, files, name), dir / name);
      const std::size_t cols = t.header.empty() ? 0 : t.header.size() - 1;
      check_shape(dir / name, files[name], t.rows.size(), cols);
      check_shape(dir / name, {{"rows", W}, {"cols", L}}, t.rows.size(), cols);
      ds.labels_physical.resize(static_cast<Eigen::Index>(W), static_cast<Eigen::Index>(L));
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t l = 0; l < L; ++l) {
          ds.labels_physical(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(l)) =
              io::parse_double(t.rows[w][l + 1]);
        }
      }
    }
    {
      const std::string name = "specstats.csv";
      const io::Table t = io::parse_csv(checked_read(dir, files, name), dir / name);
      check_shape(dir / name, files[name], t.rows.size(), 2);
      read_stats(t, dir / name, static_cast<Eigen::Index>(L), ds.labels.mean, ds.labels.stddev,
                 nullptr);
      ds.labels.names = names;
      ds.labels.data = ds.labels.normalize(ds.labels_physical);
    }
    {
      const std::string name = "split.csv";
      const io::Table t = io::parse_csv(checked_read(dir, files, name), dir / name);
      check_shape(dir / name, files[name], t.rows.size(), 2);
      const json& sp = manifest.at("split");
      ds.split.ratio = sp.at("ratio").get<double>();
      ds.split.seed = sp.at("seed").get<std::uint64_t>();
      for (const auto& row : t.rows) {
        const auto r = static_cast<std::size_t>(std::stoull(row[1]));
        if (r >= W) throw IoError((dir / name).string() + ": row index out of range");
        (row[0] == "train" ? ds.split.train_rows : ds.split.test_rows).push_back(r);
      }
      if (ds.split.train_rows.size() != sp.at("train").get<std::size_t>() ||
          ds.split.test_rows.size() != sp.at("test").get<std::size_t>()) {
        throw IoError((dir / name).string() + ": split sizes do not match manifest");
      }
    }
    for (const ModuleId id : ds.modules()) {
      ResponseMatrix r;
      r.module = id;
      const std::string bin = response_file(id);
      const std::vector<double> values = io::decode_f64_le(checked_read(dir, files, bin));
      const auto rows = files[bin].at("rows").get<std::size_t>();
      const auto cols = files[bin].at("cols").get<std::size_t>();
      if (rows != W || cols != ds.k_points || values.size() != rows * cols) {
        throw IoError((dir / bin).string() + ": shape does not match manifest");
      }
      r.data = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
      const std::string cs = colstats_file(id);
      const io::Table t = io::parse_csv(checked_read(dir, files, cs), dir / cs);
      check_shape(dir / cs, files[cs], t.rows.size(), 2);
      read_stats(t, dir / cs, static_cast<Eigen::Index>(ds.k_points), r.col_stats.mean,
                 r.col_stats.stddev, nullptr);
      ds.responses.push_back(std::move(r));
    }
    return ds;
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(dir.string() + ": malformed table: " + e.what());
  }
}

}  // namespace aptest::dataset
