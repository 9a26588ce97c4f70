#include "aptest/config.hpp"
#include "aptest/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

using namespace aptest;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("decimal formatting round-trips every double") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> bits;
  int checked = 0;
  while (checked < 2000) {
    const std::uint64_t b = bits(rng);
    double v;
    std::memcpy(&v, &b, sizeof v);
    if (!std::isfinite(v)) continue;
    const double back = io::parse_double(io::format_double(v));
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
    ++checked;
  }
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(3.0) == "3");
}

TEST_CASE("crc32 check value") {
  CHECK(io::crc32(std::string_view("123456789")) == 0xCBF43926u);
  CHECK(io::crc32_hex(0xCBF43926u) == "cbf43926");
  CHECK(io::crc32(std::string_view("")) == 0u);
}

TEST_CASE("binary and csv files round-trip") {
  const fs::path dir = fs::temp_directory_path() / "aptest_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<double> v = {1.5, -0.0, 1e-310, std::numeric_limits<double>::max()};
  io::write_f64(dir / "v.bin", v);
  const auto back = io::read_f64(dir / "v.bin");
  REQUIRE(back.size() == v.size());
  CHECK(std::memcmp(back.data(), v.data(), v.size() * sizeof(double)) == 0);
  CHECK(fs::file_size(dir / "v.bin") == 32);

  io::Table t{{"a", "b"}, {{"1", "x"}, {"2", "y"}}};
  io::write_csv(dir / "t.csv", t);
  CHECK(io::read_text(dir / "t.csv") == "a,b\n1,x\n2,y\n");
  const io::Table r = io::read_csv(dir / "t.csv");
  CHECK(r.header == t.header);
  CHECK(r.rows == t.rows);
  CHECK_THROWS_AS(io::parse_csv("a,b\n1\n", "inline"), IoError);
  CHECK_THROWS_AS(io::read_text(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("built-in profiles resolve") {
  for (const char* name : {"desk", "paper", "smoke"}) {
    const PipelineConfig cfg = resolve_config(name, json::object());
    CHECK(cfg.profile == name);
    CHECK(cfg.num_circuits() == 2);
    CHECK(cfg.num_stimuli() == 4);
    CHECK(cfg.spec_names.size() == 10);
    CHECK(cfg.thresholds.size() == 10);
    CHECK(cfg.module_costs.size() == 8);
  }
  const PipelineConfig desk = resolve_config("desk", json::object());
  CHECK(desk.devices == 1000);
  CHECK(desk.k_points == 2000);
  CHECK(desk.thresholds == desk_thresholds());
  CHECK(desk.rho.train.batch_size == 16);
  CHECK(desk.rho.train.epochs == 75);
  CHECK(desk.rho.train.learning_rate == 5e-4);
  const PipelineConfig paper = resolve_config("paper", json::object());
  CHECK(paper.devices == 5000);
  CHECK(paper.thresholds == reference_thresholds());
  const PipelineConfig smoke = resolve_config("smoke", json::object());
  for (double t : smoke.thresholds) CHECK(std::isinf(t));
}

TEST_CASE("shipped config files match the built-in profiles") {
  for (const char* name : {"desk", "paper", "smoke"}) {
    const fs::path file = fs::path(APTEST_SOURCE_DIR) / "configs" / (std::string(name) + ".json");
    const PipelineConfig from_file = load_config(file, "", json());
    const PipelineConfig builtin = resolve_config(name, json::object());
    CHECK_MESSAGE(to_json(from_file) == to_json(builtin), name);
    CHECK(from_file.report_hash() == builtin.report_hash());
  }
}

TEST_CASE("overrides") {
  SUBCASE("unknown keys are rejected with their path") {
    try {
      resolve_config("desk", {{"phi", {{"bogus", 1}}}});
      FAIL("expected InvalidConfigError");
    } catch (const InvalidConfigError& e) {
      CHECK(std::string(e.what()).find("phi.bogus") != std::string::npos);
    }
  }
  SUBCASE("wrong types are rejected") {
    CHECK_THROWS_AS(resolve_config("desk", {{"devices", "many"}}), InvalidConfigError);
    CHECK_THROWS_AS(resolve_config("nonexistent", json::object()), InvalidConfigError);
  }
  SUBCASE("nested keys merge and null thresholds mean unbounded") {
    const PipelineConfig cfg =
        resolve_config("desk", {{"thresholds", {{"VOS", nullptr}}}, {"phi", {{"epochs", 3}}}});
    CHECK(std::isinf(cfg.thresholds[9]));
    CHECK(cfg.thresholds[0] == desk_thresholds()[0]);
    CHECK(cfg.phi.train.epochs == 3);
    CHECK(cfg.phi.train.batch_size == resolve_config("desk", json::object()).phi.train.batch_size);
  }
  SUBCASE("cli values override the file") {
    const fs::path file = fs::temp_directory_path() / "aptest_override.json";
    io::write_text(file, R"({"profile": "smoke", "master_seed": 5})");
    const PipelineConfig cfg = load_config(file, "", {{"master_seed", 9}});
    CHECK(cfg.profile == "smoke");
    CHECK(cfg.master_seed == 9);
    fs::remove(file);
  }
}

TEST_CASE("stage hashes track their inputs") {
  const PipelineConfig base = resolve_config("desk", json::object());
  const PipelineConfig more_epochs = resolve_config("desk", {{"rho", {{"epochs", 10}}}});
  CHECK(base.data_hash() == more_epochs.data_hash());
  CHECK(base.train_hash() == more_epochs.train_hash());
  CHECK(base.combine_hash() != more_epochs.combine_hash());
  const PipelineConfig other_seed = resolve_config("desk", {{"master_seed", 1}});
  CHECK(base.data_hash() != other_seed.data_hash());
  CHECK(base.report_hash() != other_seed.report_hash());
  const PipelineConfig other_dir = resolve_config("desk", {{"output_dir", "elsewhere"}});
  CHECK(base.report_hash() == other_dir.report_hash());
}
