#pragma once

#include "aptest/surrogate.hpp"
#include "aptest/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aptest::dataset {

// Per-column location/scale of a response matrix, fit on training rows only.
struct ColumnStats {
  Vector mean;
  Vector stddev;

  Eigen::Index size() const { return mean.size(); }
  friend bool operator==(const ColumnStats& a, const ColumnStats& b) {
    return a.mean.size() == b.mean.size() && a.stddev.size() == b.stddev.size() &&
           a.mean == b.mean && a.stddev == b.stddev;
  }
};

struct ResponseMatrix {
  ModuleId module;
  Matrix data;  // W x K, un-normalized
  ColumnStats col_stats;
};

ResponseMatrix build_response_matrix(std::span<const surrogate::DeviceSample> devices,
                                     const surrogate::TestCircuit& circuit,
                                     const surrogate::Stimulus& stimulus, std::size_t k_points,
                                     double tau_s, const surrogate::SimOptions& options = {},
                                     ModuleId module = {});

// Population mean and standard deviation (divide by the row count) per column.
ColumnStats fit_normalizer(const Matrix& data, std::span<const std::size_t> rows);

// (r - mean) / stddev per column; zero-variance columns map to 0.
Matrix apply_normalizer(const Matrix& data, const ColumnStats& stats);

Matrix select_rows(const Matrix& data, std::span<const std::size_t> rows);

struct SpecMatrix {
  Matrix data;  // W x L, z-scored
  Vector mean;
  Vector stddev;
  std::vector<std::string> names;

  Matrix normalize(const Matrix& physical) const;
  Matrix denormalize(const Matrix& normalized) const;
};

// Throws InvalidDatasetError naming any spec with zero training variance.
SpecMatrix normalize_labels(const Matrix& physical, std::span<const std::size_t> train_rows,
                            std::vector<std::string> names);

struct SplitIndex {
  std::vector<std::size_t> train_rows;  // shuffled order, kept as drawn
  std::vector<std::size_t> test_rows;
  double ratio = 0.7;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitIndex&, const SplitIndex&) = default;
};

SplitIndex split(std::size_t w_total, double ratio, std::uint64_t seed);

// Training rows divided into the part the module models fit on and a held-out
// validation tail used for module scoring.
struct RowPlan {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> train;  // fit followed by validation
  std::vector<std::size_t> test;
};

RowPlan plan_rows(const SplitIndex& split, double validation_fraction);

struct Dataset {
  std::uint64_t master_seed = 0;
  std::string config_hash;
  int num_circuits = 0;
  int num_stimuli = 0;
  std::size_t k_points = 0;
  double tau_s = 0.0;
  std::vector<std::string> circuit_names;
  std::vector<std::string> stimulus_names;

  Matrix labels_physical;  // W x L
  SpecMatrix labels;
  SplitIndex split;
  std::vector<ResponseMatrix> responses;  // row-major (circuit, stimulus)

  std::size_t num_devices() const { return static_cast<std::size_t>(labels_physical.rows()); }
  std::size_t num_modules() const { return responses.size(); }
  const ResponseMatrix& response(ModuleId id) const { return responses.at(id.flat(num_stimuli)); }
  std::vector<ModuleId> modules() const;
};

// Directory layout: manifest.json, labels.csv, split.csv, specstats.csv,
// responses_<m>_<n>.bin, colstats_<m>_<n>.csv.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace aptest::dataset
