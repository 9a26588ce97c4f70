#pragma once

// Stage drivers behind the command-line tool. Each stage reads its inputs
// from the run directory, checks them against the config hash recorded by
// the stage that produced them, and writes its own artifacts.

#include "aptest/config.hpp"
#include "aptest/dataset.hpp"
#include "aptest/selection.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace aptest::pipeline {

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path models;
  std::filesystem::path combine;
  std::filesystem::path report;

  explicit RunPaths(const std::filesystem::path& out_dir);
};

// Inputs of a stage are missing or were produced under a different config.
class StaleArtifactError : public Error {
 public:
  using Error::Error;
};

struct StageOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

void cmd_generate(const PipelineConfig& cfg, const StageOptions& opt = {});
void cmd_train(const PipelineConfig& cfg, const StageOptions& opt = {});
// Throws selection::InfeasibleSelectionError after writing select_error.json.
selection::SelectionSolution cmd_select(const PipelineConfig& cfg, const StageOptions& opt = {});
void cmd_combine(const PipelineConfig& cfg, const StageOptions& opt = {});
// Returns the names of specs whose proposed-method test MSE exceeds the threshold.
std::vector<std::string> cmd_report(const PipelineConfig& cfg, const StageOptions& opt = {});
std::vector<std::string> run_all(const PipelineConfig& cfg, const StageOptions& opt = {});

// Per-module predictions (normalized label units) for every device row,
// written by the train stage.
std::vector<Matrix> load_predictions(const RunPaths& paths, const dataset::Dataset& ds);

}  // namespace aptest::pipeline
