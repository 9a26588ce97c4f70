#pragma once

#include "aptest/nn.hpp"
#include "aptest/report.hpp"
#include "aptest/surrogate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aptest {

struct StageTrainConfig {
  std::vector<int> hidden;
  nn::TrainConfig train;
};

struct SweepConfig {
  bool enabled = true;
  std::size_t max_modules = 0;  // 0: every module
};

struct PipelineConfig {
  std::string profile = "desk";
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir;
  int threads = 0;  // 0: hardware concurrency

  std::size_t devices = 0;
  double split_ratio = 0.7;
  std::size_t k_points = 0;
  double tau_s = 0.0;
  surrogate::SimOptions simulation;
  surrogate::DeviceNominals nominals;
  std::vector<surrogate::Stimulus> stimuli;
  std::vector<surrogate::TestCircuit> circuits;

  std::vector<std::string> spec_names;
  std::vector<double> thresholds;   // per spec, normalized-label MSE
  std::vector<double> module_costs; // row-major (circuit, stimulus)

  StageTrainConfig phi;
  StageTrainConfig rho;
  SweepConfig sweep;
  std::vector<report::BoundSide> bound_sides;

  int num_circuits() const { return static_cast<int>(circuits.size()); }
  int num_stimuli() const { return static_cast<int>(stimuli.size()); }
  std::size_t num_modules() const { return circuits.size() * stimuli.size(); }

  // Hash of the keys each stage depends on; downstream stages include upstream keys.
  std::string data_hash() const;
  std::string train_hash() const;
  std::string select_hash() const;
  std::string combine_hash() const;
  std::string report_hash() const;
};

// Per-spec MSE thresholds in label order. The full-scale targets are far
// below what 1000 devices and 2000 points support; the desk values are twice
// the best single-module validation MSE of the default seeded desk run.
std::vector<double> reference_thresholds();
std::vector<double> desk_thresholds();

// Complete JSON document of a built-in profile ("desk", "paper" or "smoke").
nlohmann::json profile_json(std::string_view profile);

// profile defaults <- JSON overrides <- CLI overrides. Nested objects merge
// key by key; arrays and scalars (null included) replace.
// Throws InvalidConfigError with the offending key path.
PipelineConfig resolve_config(std::string_view profile, const nlohmann::json& overrides);
PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           std::string_view profile, const nlohmann::json& cli_overrides);

nlohmann::json to_json(const PipelineConfig& cfg);

}  // namespace aptest
