#include "aptest/dataset.hpp"
#include "aptest/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

using namespace aptest;
using namespace aptest::dataset;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aptest_dataset_" + name);
  fs::remove_all(p);
  return p;
}

Dataset tiny_dataset() {
  Dataset ds;
  ds.master_seed = 11;
  ds.config_hash = "cafef00d";
  ds.num_circuits = 1;
  ds.num_stimuli = 1;
  ds.k_points = 4;
  ds.tau_s = 1e-9;
  ds.circuit_names = {"x3"};
  ds.stimulus_names = {"pulse"};
  ds.labels_physical.resize(3, 2);
  ds.labels_physical << 1.0, 10.0, 2.5, 20.0, 4.0, 33.0;
  ds.split.train_rows = {2, 0};
  ds.split.test_rows = {1};
  ds.split.ratio = 0.7;
  ds.split.seed = 5;
  ds.labels = normalize_labels(ds.labels_physical, ds.split.train_rows, {"A", "B"});
  ResponseMatrix r;
  r.module = {0, 0};
  r.data.resize(3, 4);
  r.data << 0.1, -0.2, 1.0 / 3.0, 4e-300, 5.5, 6.25, -7.0, 8.0, 9.0, 1e10, 11.0, -0.0;
  r.col_stats = fit_normalizer(r.data, ds.split.train_rows);
  ds.responses.push_back(r);
  return ds;
}

}  // namespace

TEST_CASE("response matrix rows are the simulated responses") {
  surrogate::DeviceNominals n;
  const auto circuit = surrogate::TestCircuit::with_gain(3.0, "x3");
  surrogate::Stimulus s;
  s.name = "chirp";
  std::vector<surrogate::DeviceSample> devices = {surrogate::sample_device(3, 0, n)};

  const ResponseMatrix one = build_response_matrix(devices, circuit, s, 4, 50e-9);
  REQUIRE(one.data.rows() == 1);
  REQUIRE(one.data.cols() == 4);
  const auto y = surrogate::simulate_response(devices[0], circuit, s, 4, 50e-9);
  for (int k = 0; k < 4; ++k) CHECK(one.data(0, k) == y[static_cast<std::size_t>(k)]);

  devices.push_back(devices[0]);
  const ResponseMatrix two = build_response_matrix(devices, circuit, s, 50, 50e-9);
  CHECK(two.data.row(0) == two.data.row(1));
  CHECK(two.data.allFinite());
}

TEST_CASE("column statistics use population variance") {
  Matrix m(3, 2);
  m << 1, 5, 2, 5, 3, 5;
  const ColumnStats st = fit_normalizer(m, iota_rows(3));
  CHECK(st.mean[0] == doctest::Approx(2.0));
  CHECK(st.stddev[0] == doctest::Approx(0.816497).epsilon(1e-6));
  CHECK(st.mean[1] == 5.0);
  CHECK(st.stddev[1] == 0.0);

  const Matrix z = apply_normalizer(m, st);
  CHECK(z(0, 0) == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(z(1, 0) == doctest::Approx(0.0));
  CHECK(z(2, 0) == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(z.col(1).isZero(0.0));
}

TEST_CASE("column statistics ignore row order and unlisted rows") {
  Matrix m(4, 1);
  m << 3, 1, 2, 1000;
  const std::vector<std::size_t> a = {0, 1, 2};
  const std::vector<std::size_t> b = {2, 0, 1};
  const ColumnStats sa = fit_normalizer(m, a);
  const ColumnStats sb = fit_normalizer(m, b);
  CHECK(sa.mean[0] == doctest::Approx(sb.mean[0]).epsilon(1e-15));
  CHECK(sa.stddev[0] == doctest::Approx(sb.stddev[0]).epsilon(1e-15));
  CHECK(sa.mean[0] == doctest::Approx(2.0));

  // An unseen row is scaled with the stored statistics.
  const Matrix z = apply_normalizer(m, sa);
  CHECK(z(3, 0) == doctest::Approx((1000.0 - 2.0) / sa.stddev[0]));
}

TEST_CASE("fit_normalizer needs two rows") {
  Matrix m(3, 1);
  m << 1, 2, 3;
  const std::vector<std::size_t> one = {1};
  CHECK_THROWS(fit_normalizer(m, one));
}

TEST_CASE("label normalization") {
  Matrix p(3, 1);
  p << 8, 12, 14;  // train mean 10, std 2 over the first two rows
  const std::vector<std::size_t> train = {0, 1};
  const SpecMatrix s = normalize_labels(p, train, {"GBW"});
  CHECK(s.mean[0] == 10.0);
  CHECK(s.stddev[0] == 2.0);
  CHECK(s.data(2, 0) == 2.0);

  Matrix big(50, 2);
  for (int i = 0; i < 50; ++i) {
    big(i, 0) = 1e7 + 1e5 * std::sin(i * 1.7);
    big(i, 1) = -3e-9 * i * i;
  }
  const SpecMatrix t = normalize_labels(big, iota_rows(50), {"a", "b"});
  for (int c = 0; c < 2; ++c) CHECK(std::abs(t.data.col(c).mean()) < 1e-9);
  const Matrix back = t.denormalize(t.data);
  for (int i = 0; i < 50; ++i) {
    for (int c = 0; c < 2; ++c) {
      const double scale = std::max(std::abs(big(i, c)), t.stddev[c]);
      CHECK(std::abs(back(i, c) - big(i, c)) <= 1e-12 * scale);
    }
  }
}

TEST_CASE("constant label column is rejected by name") {
  Matrix p(4, 2);
  p << 1, 7, 2, 7, 3, 7, 4, 7;
  try {
    normalize_labels(p, iota_rows(4), {"GBW", "VOS"});
    FAIL("expected InvalidDatasetError");
  } catch (const InvalidDatasetError& e) {
    CHECK(std::string(e.what()).find("VOS") != std::string::npos);
  }
}

TEST_CASE("train/test split") {
  const SplitIndex s = split(10, 0.7, 42);
  CHECK(s.train_rows.size() == 7);
  CHECK(s.test_rows.size() == 3);
  CHECK(split(10, 0.7, 42) == s);
  CHECK_FALSE(split(10, 0.7, 43) == s);

  const SplitIndex big = split(1000, 0.7, 9);
  std::set<std::size_t> all(big.train_rows.begin(), big.train_rows.end());
  for (auto r : big.test_rows) CHECK(all.insert(r).second);
  CHECK(all.size() == 1000);
  CHECK(*all.rbegin() == 999);

  CHECK_THROWS_AS(split(10, 1.0, 1), InvalidConfigError);
  CHECK_THROWS_AS(split(5, 0.7, 1), InvalidConfigError);
}

TEST_CASE("row plan carves validation rows out of the training rows") {
  const SplitIndex s = split(100, 0.8, 3);
  const RowPlan plan = plan_rows(s, 0.15);
  CHECK(plan.fit.size() + plan.validation.size() == 80);
  CHECK(plan.validation.size() == 12);
  CHECK(plan.train == s.train_rows);
  CHECK(plan.test == s.test_rows);
  CHECK(std::equal(plan.fit.begin(), plan.fit.end(), s.train_rows.begin()));
}

TEST_CASE("dataset save/load round-trip is bitwise") {
  const fs::path dir = scratch_dir("roundtrip");
  const Dataset ds = tiny_dataset();
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  CHECK(back.master_seed == ds.master_seed);
  CHECK(back.config_hash == ds.config_hash);
  CHECK(back.labels_physical == ds.labels_physical);
  CHECK(back.labels.data == ds.labels.data);
  CHECK(back.labels.mean == ds.labels.mean);
  CHECK(back.labels.stddev == ds.labels.stddev);
  CHECK(back.split == ds.split);
  REQUIRE(back.responses.size() == 1);
  CHECK(back.responses[0].data == ds.responses[0].data);
  CHECK(back.responses[0].col_stats == ds.responses[0].col_stats);
  CHECK(std::signbit(back.responses[0].data(2, 3)));
  fs::remove_all(dir);
}

TEST_CASE("manifest shape mismatch names the file") {
  const fs::path dir = scratch_dir("shape");
  save_dataset(dir, tiny_dataset());
  auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  manifest["files"]["responses_1_1.bin"]["cols"] = 5;
  io::write_text(dir / "manifest.json", manifest.dump(2));
  try {
    load_dataset(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("responses_1_1.bin") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("truncated file fails its checksum") {
  const fs::path dir = scratch_dir("truncated");
  save_dataset(dir, tiny_dataset());
  const fs::path bin = dir / "responses_1_1.bin";
  fs::resize_file(bin, fs::file_size(bin) - 8);
  try {
    load_dataset(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string what = e.what();
    CHECK(what.find("responses_1_1.bin") != std::string::npos);
    CHECK(what.find("checksum") != std::string::npos);
  }
  fs::remove_all(dir);
}
