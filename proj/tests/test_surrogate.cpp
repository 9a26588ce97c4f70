#include "aptest/surrogate.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace aptest;
using namespace aptest::surrogate;

namespace {

DeviceNominals fixed_nominals() {
  DeviceNominals n;
  for (Gaussian* g : {&n.a0_db, &n.gbw_hz, &n.p2_hz, &n.vos_v, &n.sr_rise_vus, &n.sr_fall_vus,
                      &n.ib_a, &n.cmrr_db, &n.psrr_db, &n.vsat_v}) {
    g->stddev = 0.0;
  }
  return n;
}

// Nominal device with every disturbance path switched off.
DeviceSample quiet_device() {
  DeviceSample d = sample_device(1, 0, fixed_nominals());
  d.vos_v = 0.0;
  d.ib_a = 0.0;
  d.cmrr_db = 300.0;
  d.psrr_db = 300.0;
  return d;
}

TestCircuit quiet_circuit(double gain) {
  TestCircuit c = TestCircuit::with_gain(gain, "quiet");
  c.supply_ripple_v = 0.0;
  c.cm_ripple_v = 0.0;
  return c;
}

Stimulus step(double level) {
  Stimulus s;
  s.name = "step";
  s.duration_s = 10e-6;
  s.amplitude_v = level;
  s.params = PulseParams{0.0, 1e-9, 1e-6, 10e-6};
  return s;
}

}  // namespace

TEST_CASE("zero variation reproduces the nominals") {
  const DeviceNominals n = fixed_nominals();
  const DeviceSample d = sample_device(99, 12, n);
  CHECK(d.a0_db == n.a0_db.mean);
  CHECK(d.gbw_hz == n.gbw_hz.mean);
  CHECK(d.p2_hz == n.p2_hz.mean);
  CHECK(d.vos_v == n.vos_v.mean);
  CHECK(d.sr_rise_vus == n.sr_rise_vus.mean);
  CHECK(d.sr_fall_vus == n.sr_fall_vus.mean);
  CHECK(d.ib_a == n.ib_a.mean);
  CHECK(d.cmrr_db == n.cmrr_db.mean);
  CHECK(d.psrr_db == n.psrr_db.mean);
  CHECK(d.vsat_v == n.vsat_v.mean);
}

TEST_CASE("device sampling is deterministic per (seed, index)") {
  const DeviceNominals n;
  CHECK(sample_device(7, 3, n) == sample_device(7, 3, n));
  CHECK_FALSE(sample_device(7, 3, n) == sample_device(7, 4, n));
  CHECK_FALSE(sample_device(7, 3, n) == sample_device(8, 3, n));
}

TEST_CASE("offset draws follow the configured distribution") {
  const DeviceNominals n;
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(sample_device(2024, i, n).vos_v);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / v.size());
  CHECK(std::abs(mean) < 0.1e-3);
  CHECK(std::abs(sd - 2e-3) < 0.05 * 2e-3);
}

TEST_CASE("negative device index is rejected") {
  CHECK_THROWS_AS(sample_device(1, -1, DeviceNominals{}), InvalidConfigError);
}

TEST_CASE("spec labels") {
  DeviceSample d = quiet_device();
  SUBCASE("second pole at the unity-gain frequency gives 45 degrees") {
    d.p2_hz = d.gbw_hz;
    CHECK(true_specs(d)[kPm] == doctest::Approx(45.0).epsilon(1e-12));
  }
  SUBCASE("open-loop corner is gbw over dc gain") {
    d.a0_db = 100.0;
    d.gbw_hz = 10e6;
    CHECK(true_specs(d)[kAol3dB] == doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("offset passes through unchanged") {
    d.vos_v = 1.234e-3;
    CHECK(true_specs(d)[kVos] == d.vos_v);
  }
}

TEST_CASE("zero input and zero offset give a zero response") {
  Stimulus s = step(0.0);
  const auto y = simulate_response(quiet_device(), quiet_circuit(3.0), s, 500, 20e-9);
  CHECK(std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("small step settles to the closed-loop gain") {
  const double level = 0.01;
  for (double gain : {3.0, 10.0}) {
    DeviceSample d = quiet_device();
    d.a0_db = 100.0;
    const auto y = simulate_response(d, quiet_circuit(gain), step(level), 2000, 5e-9);
    const double expected = gain * level;
    CHECK(std::abs(y.back() - expected) < 0.01 * expected);
    CHECK(std::abs(y.front()) < 1e-12);

    // Finite open-loop gain: A0 G / (A0 + G).
    d.a0_db = 50.0;
    const double a0 = std::pow(10.0, 2.5);
    const auto z = simulate_response(d, quiet_circuit(gain), step(level), 2000, 5e-9);
    CHECK(z.back() == doctest::Approx(a0 * gain / (a0 + gain) * level).epsilon(1e-4));
  }
}

TEST_CASE("small-signal response scales linearly with the input") {
  Stimulus s;
  s.name = "chirp";
  s.amplitude_v = 0.01;
  s.params = ChirpParams{};
  Stimulus half = s;
  half.amplitude_v = 0.005;
  const auto a = simulate_response(quiet_device(), quiet_circuit(10.0), s, 1000, 10e-9);
  const auto b = simulate_response(quiet_device(), quiet_circuit(10.0), half, 1000, 10e-9);
  double peak = 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    peak = std::max(peak, std::abs(a[k]));
    worst = std::max(worst, std::abs(a[k] - 2.0 * b[k]));
  }
  CHECK(peak > 0.05);
  CHECK(worst <= 0.01 * peak);
}

TEST_CASE("large steps are slew limited") {
  DeviceSample d = quiet_device();
  const double tau = 1e-9;
  Stimulus s = step(0.5);
  s.params = PulseParams{0.0, 1e-9, 1e-6, 4e-6};
  const auto y = simulate_response(d, quiet_circuit(3.0), s, 8000, tau);
  double max_up = 0.0;
  double max_down = 0.0;
  for (std::size_t k = 1; k < y.size(); ++k) {
    const double slope = (y[k] - y[k - 1]) / tau * 1e-6;  // V/us
    max_up = std::max(max_up, slope);
    max_down = std::max(max_down, -slope);
  }
  CHECK(max_up <= d.sr_rise_vus * 1.02);
  CHECK(max_down <= d.sr_fall_vus * 1.02);
  // The limit is actually reached, not merely respected.
  CHECK(max_up > d.sr_rise_vus * 0.9);
  CHECK(max_down > d.sr_fall_vus * 0.9);
}

TEST_CASE("simulation is deterministic and offset shifts the output") {
  const DeviceNominals n;
  const TestCircuit c = TestCircuit::with_gain(3.0, "x3");
  Stimulus s;
  s.name = "tones";
  s.amplitude_v = 0.1;
  s.params = TwoToneParams{};
  const DeviceSample d = sample_device(5, 1, n);
  CHECK(simulate_response(d, c, s, 300, 5e-9) == simulate_response(d, c, s, 300, 5e-9));

  DeviceSample q = quiet_device();
  DeviceSample shifted = q;
  shifted.vos_v = 1e-3;
  const auto a = simulate_response(q, quiet_circuit(3.0), step(0.0), 400, 20e-9);
  const auto b = simulate_response(shifted, quiet_circuit(3.0), step(0.0), 400, 20e-9);
  CHECK(b.back() - a.back() == doctest::Approx(3e-3).epsilon(1e-3));
}

TEST_CASE("a sub-step too coarse for the device dynamics is refused") {
  SimOptions opt;
  opt.max_substep_s = 5e-9;
  CHECK_THROWS_AS(simulate_response(quiet_device(), quiet_circuit(3.0), step(0.01), 100, 5e-9, opt),
                  SimulationError);
}

TEST_CASE("stimulus validation") {
  Stimulus s;
  s.name = "bad";
  s.params = ChirpParams{1e6, 1e5};
  CHECK_THROWS_AS(s.validate(), InvalidConfigError);
  s.params = PulseParams{0.0, 5e-9, 5e-6, 1e-6};
  CHECK_THROWS_AS(s.validate(), InvalidConfigError);
  CHECK_THROWS_AS(simulate_response(quiet_device(), quiet_circuit(3.0), step(0.1), 3000, 5e-9),
                  InvalidConfigError);
}

TEST_CASE("random stimulus interpolates between held levels") {
  Stimulus s;
  s.name = "random";
  s.amplitude_v = 0.1;
  s.params = RandomParams{12345, 40e-9};
  const double a = s.value(40e-9);
  const double b = s.value(80e-9);
  CHECK(s.value(60e-9) == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  for (int i = 0; i < 200; ++i) CHECK(std::abs(s.value(i * 13e-9)) <= 0.1);
}
