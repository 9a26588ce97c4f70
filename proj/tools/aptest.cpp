#include "aptest/config.hpp"
#include "aptest/io.hpp"
#include "aptest/pipeline.hpp"
#include "aptest/selection.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kThresholdViolation = 2,
  kInfeasible = 3,
};

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string profile;
  bool force = false;
  bool quiet = false;
};

aptest::PipelineConfig resolve(const Options& o) {
  json cli = json::object();
  if (!o.out_dir.empty()) cli["output_dir"] = o.out_dir;
  if (o.seed) cli["master_seed"] = *o.seed;
  std::optional<fs::path> path;
  if (!o.config_path.empty()) path = o.config_path;
  return aptest::load_config(path, o.profile, cli);
}

int report_violations(const std::vector<std::string>& violations) {
  if (violations.empty()) return kOk;
  std::cerr << "error: test MSE exceeds the threshold for:";
  for (const auto& name : violations) std::cerr << " " << name;
  std::cerr << "\n";
  return kThresholdViolation;
}

int run(const std::string& command, const Options& o) {
  const aptest::PipelineConfig cfg = resolve(o);
  aptest::pipeline::StageOptions stage;
  stage.force = o.force;
  stage.log = o.quiet ? nullptr : &std::clog;

  if (command == "show-config") {
    std::cout << aptest::to_json(cfg).dump(2) << "\n";
    return kOk;
  }
  try {
    if (command == "generate") {
      aptest::pipeline::cmd_generate(cfg, stage);
    } else if (command == "train") {
      aptest::pipeline::cmd_train(cfg, stage);
    } else if (command == "select") {
      const auto solution = aptest::pipeline::cmd_select(cfg, stage);
      std::cout << "selected:";
      for (std::size_t i : solution.selected()) {
        std::cout << " " << aptest::ModuleId::from_flat(i, cfg.num_stimuli()).label();
      }
      std::cout << "\ncost: " << aptest::io::format_double(solution.total_cost) << "\n";
    } else if (command == "combine") {
      aptest::pipeline::cmd_combine(cfg, stage);
    } else if (command == "report") {
      return report_violations(aptest::pipeline::cmd_report(cfg, stage));
    } else if (command == "run-all") {
      return report_violations(aptest::pipeline::run_all(cfg, stage));
    }
  } catch (const aptest::selection::InfeasibleSelectionError& e) {
    const fs::path error_path = aptest::pipeline::RunPaths(cfg.output_dir).root / "select_error.json";
    if (fs::exists(error_path)) std::cout << aptest::io::read_text(error_path);
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analog test-module selection and specification prediction pipeline"};
  app.require_subcommand(1);

  Options o;
  app.add_option("--config", o.config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--out", o.out_dir, "Output directory (overrides output_dir)");
  app.add_option("--seed", o.seed, "Master seed (overrides master_seed)");
  app.add_option("--profile", o.profile, "Built-in defaults the config is applied to")
      ->check(CLI::IsMember({"desk", "paper", "smoke"}));
  app.add_flag("--force", o.force, "Recompute artifacts even if they are up to date");
  app.add_flag("-q,--quiet", o.quiet, "No progress output");
  app.fallthrough();

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "Sample devices and simulate every test module"},
      {"train", "Train one predictor per test module"},
      {"select", "Choose the cheapest module subset meeting the MSE thresholds"},
      {"combine", "Train the combiner network and weighted-sum baselines"},
      {"report", "Write MSE, benchmark, fault-coverage and sweep tables"},
      {"run-all", "Run every stage in order"},
      {"show-config", "Print the resolved config"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const aptest::InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
