#pragma once

// Behavioral stand-in for a transistor-level op-amp: Monte-Carlo device
// instances, stimuli, closed-loop test circuits and the time-domain simulator
// that produces sampled responses.

#include "aptest/types.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aptest::surrogate {

inline constexpr std::size_t kNumSpecs = 10;

// Label order used everywhere (label matrices, MSE grids, reports).
inline constexpr std::array<std::string_view, kNumSpecs> kSpecNames = {
    "AOL-3dB", "AOL", "IB", "CMRR", "PM", "GBW", "PSRR", "SR-R", "SR-D", "VOS"};

enum SpecIndex : std::size_t {
  kAol3dB = 0,
  kAol,
  kIb,
  kCmrr,
  kPm,
  kGbw,
  kPsrr,
  kSrRise,
  kSrFall,
  kVos,
};

// Physical units: Hz, dB, A, dB, degrees, Hz, dB, V/us, V/us, V.
using SpecVector = std::array<double, kNumSpecs>;

struct Gaussian {
  double mean = 0.0;
  double stddev = 0.0;
};

struct DeviceNominals {
  Gaussian a0_db{50.0, 3.0};
  Gaussian gbw_hz{10e6, 0.8e6};
  Gaussian p2_hz{25e6, 2.5e6};
  Gaussian vos_v{0.0, 2e-3};
  Gaussian sr_rise_vus{10.0, 0.8};
  Gaussian sr_fall_vus{12.0, 1.0};
  Gaussian ib_a{100e-9, 15e-9};
  Gaussian cmrr_db{60.0, 4.0};
  Gaussian psrr_db{55.0, 4.0};
  Gaussian vsat_v{2.4, 0.05};
  int max_retries = 1000;

  // Throws InvalidConfigError.
  void validate() const;
};

struct DeviceSample {
  double a0_db = 0.0;
  double gbw_hz = 0.0;
  double p2_hz = 0.0;
  double vos_v = 0.0;
  double sr_rise_vus = 0.0;
  double sr_fall_vus = 0.0;
  double ib_a = 0.0;
  double cmrr_db = 0.0;
  double psrr_db = 0.0;
  double vsat_v = 0.0;

  bool valid() const;
  friend bool operator==(const DeviceSample&, const DeviceSample&) = default;
};

DeviceSample sample_device(std::uint64_t master_seed, std::int64_t index,
                           const DeviceNominals& nominals);

// Ground-truth labels of the conventional measurement flow.
SpecVector true_specs(const DeviceSample& device);

// -- stimuli ---------------------------------------------------------------

enum class StimulusKind { chirp, random, two_tone, pulse };

std::string_view to_string(StimulusKind kind);
StimulusKind stimulus_kind_from_string(std::string_view name);

struct ChirpParams {
  double f0_hz = 50e3;
  double f1_hz = 20e6;
};

// Piecewise-linear interpolation between uniform random levels in
// [-amplitude, amplitude], one level every hold_s seconds.
struct RandomParams {
  std::uint64_t seed = 1;
  double hold_s = 40e-9;
};

// amplitude_v drives the first tone, amplitude2_v the second.
struct TwoToneParams {
  double f1_hz = 1.0e6;
  double f2_hz = 1.2e6;
  double amplitude2_v = 0.1;
};

// Single pulse: low level, edge to amplitude_v at rise_at_s, back down at fall_at_s.
struct PulseParams {
  double low_v = 0.0;
  double edge_s = 5e-9;
  double rise_at_s = 1e-6;
  double fall_at_s = 5.5e-6;
};

using StimulusParams = std::variant<ChirpParams, RandomParams, TwoToneParams, PulseParams>;

struct Stimulus {
  std::string name;
  double duration_s = 10e-6;
  double amplitude_v = 0.05;
  StimulusParams params = ChirpParams{};

  StimulusKind kind() const;
  void validate() const;
  // Input voltage at time t (seconds). Pure function of (params, t).
  double value(double t) const;
};

// -- test circuits ---------------------------------------------------------

// Non-inverting amplifier around the CUT. Gain is set by the feedback divider;
// the disturbance terms make CMRR, PSRR and IB observable at the output.
struct TestCircuit {
  std::string name;
  double feedback_ohm = 20e3;
  double ground_ohm = 10e3;
  double source_ohm = 10e3;
  double supply_ripple_v = 0.5;
  double supply_ripple_hz = 2.0e6;
  double cm_ripple_v = 0.5;
  double cm_ripple_hz = 3.1e6;

  static TestCircuit with_gain(double gain, std::string name = {});
  double closed_loop_gain() const { return 1.0 + feedback_ohm / ground_ohm; }
  std::string feedback_description() const;
  void validate() const;
};

// -- simulation ------------------------------------------------------------

struct SimOptions {
  // Internal integration step upper bound; the step actually used divides tau evenly.
  double max_substep_s = 0.1e-9;
  // Required sub-steps per fastest closed-loop time constant.
  double min_steps_per_time_constant = 20.0;
};

// Spectral radius (rad/s) of the closed-loop small-signal dynamics.
double fastest_rate(const DeviceSample& device, const TestCircuit& circuit);

// Shares the stimulus-dependent work across many devices for one
// (circuit, stimulus, K, tau) test module.
class ResponseSimulator {
 public:
  ResponseSimulator(const TestCircuit& circuit, const Stimulus& stimulus, std::size_t k_points,
                    double tau_s, const SimOptions& options = {});

  std::size_t k_points() const { return k_points_; }
  double substep() const { return h_; }

  // Response at t = tau, 2 tau, ..., K tau; throws SimulationError when the
  // device's dynamics are too fast for the configured sub-step.
  void run(const DeviceSample& device, std::span<double> out) const;
  std::vector<double> run(const DeviceSample& device) const;

 private:
  TestCircuit circuit_;
  std::size_t k_points_;
  std::size_t substeps_;
  double h_;
  double min_steps_;
  // Sampled on the integration grid t_j = j h, j = 0 .. K * substeps.
  std::vector<double> input_;
  std::vector<double> common_mode_;
  std::vector<double> supply_;
};

std::vector<double> simulate_response(const DeviceSample& device, const TestCircuit& circuit,
                                      const Stimulus& stimulus, std::size_t k_points,
                                      double tau_s, const SimOptions& options = {});

}  // namespace aptest::surrogate
