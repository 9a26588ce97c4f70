#include "aptest/surrogate.hpp"

#include "aptest/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace aptest::surrogate {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double db_to_ratio(double db) { return std::pow(10.0, db / 20.0); }

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidConfigError(message);
}

void check_gaussian(const Gaussian& g, const char* name) {
  require(std::isfinite(g.mean) && std::isfinite(g.stddev),
          std::string("nominal ") + name + " must be finite");
  require(g.stddev >= 0.0, std::string("nominal ") + name + " stddev must be >= 0");
}

// Uniform level in [-1, 1] for interval i of a random stimulus.
double random_level(std::uint64_t seed, std::int64_t i) {
  const std::uint64_t bits = mix64(seed ^ mix64(static_cast<std::uint64_t>(i)));
  return 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
}

double ramp(double t, double start, double edge) {
  if (t <= start) return 0.0;
  if (edge <= 0.0 || t >= start + edge) return 1.0;
  return (t - start) / edge;
}

}  // namespace

void DeviceNominals::validate() const {
  check_gaussian(a0_db, "a0_db");
  check_gaussian(gbw_hz, "gbw_hz");
  check_gaussian(p2_hz, "p2_hz");
  check_gaussian(vos_v, "vos_v");
  check_gaussian(sr_rise_vus, "sr_rise_vus");
  check_gaussian(sr_fall_vus, "sr_fall_vus");
  check_gaussian(ib_a, "ib_a");
  check_gaussian(cmrr_db, "cmrr_db");
  check_gaussian(psrr_db, "psrr_db");
  check_gaussian(vsat_v, "vsat_v");
  require(gbw_hz.mean > 0.0, "nominal gbw_hz must be positive");
  require(sr_rise_vus.mean > 0.0, "nominal sr_rise_vus must be positive");
  require(sr_fall_vus.mean > 0.0, "nominal sr_fall_vus must be positive");
  require(p2_hz.mean > gbw_hz.mean / 10.0, "nominal p2_hz must exceed gbw_hz / 10");
  require(vsat_v.mean > 0.0, "nominal vsat_v must be positive");
  require(max_retries >= 1, "max_retries must be >= 1");
}

bool DeviceSample::valid() const {
  const double fields[] = {a0_db, gbw_hz,  p2_hz,   vos_v,   sr_rise_vus,
                           sr_fall_vus, ib_a, cmrr_db, psrr_db, vsat_v};
  for (double f : fields) {
    if (!std::isfinite(f)) return false;
  }
  return gbw_hz > 0.0 && p2_hz > gbw_hz / 10.0 && sr_rise_vus > 0.0 && sr_fall_vus > 0.0 &&
         vsat_v > 0.0;
}

DeviceSample sample_device(std::uint64_t master_seed, std::int64_t index,
                           const DeviceNominals& nominals) {
  if (index < 0) throw InvalidConfigError("device index must be >= 0");
  nominals.validate();

  std::mt19937_64 rng(derive_seed(master_seed, "device", index));
  std::normal_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Gaussian& g) { return g.mean + g.stddev * unit(rng); };

  for (int attempt = 0; attempt < nominals.max_retries; ++attempt) {
    DeviceSample d;
    d.a0_db = draw(nominals.a0_db);
    d.gbw_hz = draw(nominals.gbw_hz);
    d.p2_hz = draw(nominals.p2_hz);
    d.vos_v = draw(nominals.vos_v);
    d.sr_rise_vus = draw(nominals.sr_rise_vus);
    d.sr_fall_vus = draw(nominals.sr_fall_vus);
    d.ib_a = draw(nominals.ib_a);
    d.cmrr_db = draw(nominals.cmrr_db);
    d.psrr_db = draw(nominals.psrr_db);
    d.vsat_v = draw(nominals.vsat_v);
    if (d.valid()) return d;
  }
  throw InvalidConfigError("device " + std::to_string(index) + ": no valid draw after " +
                           std::to_string(nominals.max_retries) +
                           " attempts; variation too wide for the nominals");
}

SpecVector true_specs(const DeviceSample& d) {
  if (!d.valid()) throw InvalidConfigError("true_specs: invalid device sample");
  SpecVector p{};
  p[kAol3dB] = d.gbw_hz / db_to_ratio(d.a0_db);
  p[kAol] = d.a0_db;
  p[kIb] = d.ib_a;
  p[kCmrr] = d.cmrr_db;
  p[kPm] = 90.0 - std::atan(d.gbw_hz / d.p2_hz) * 180.0 / std::numbers::pi;
  p[kGbw] = d.gbw_hz;
  p[kPsrr] = d.psrr_db;
  p[kSrRise] = d.sr_rise_vus;
  p[kSrFall] = d.sr_fall_vus;
  p[kVos] = d.vos_v;
  return p;
}

// -- stimuli ---------------------------------------------------------------

std::string_view to_string(StimulusKind kind) {
  switch (kind) {
    case StimulusKind::chirp: return "chirp";
    case StimulusKind::random: return "random";
    case StimulusKind::two_tone: return "two_tone";
    case StimulusKind::pulse: return "pulse";
  }
  return "unknown";
}

StimulusKind stimulus_kind_from_string(std::string_view name) {
  if (name == "chirp") return StimulusKind::chirp;
  if (name == "random") return StimulusKind::random;
  if (name == "two_tone") return StimulusKind::two_tone;
  if (name == "pulse") return StimulusKind::pulse;
  throw InvalidConfigError("unknown stimulus kind '" + std::string(name) + "'");
}

StimulusKind Stimulus::kind() const { return static_cast<StimulusKind>(params.index()); }

void Stimulus::validate() const {
  const std::string who = "stimulus '" + name + "': ";
  require(std::isfinite(duration_s) && duration_s > 0.0, who + "duration_s must be > 0");
  require(std::isfinite(amplitude_v), who + "amplitude_v must be finite");
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ChirpParams>) {
          require(p.f0_hz > 0.0 && p.f1_hz > p.f0_hz, who + "chirp needs f1 > f0 > 0");
        } else if constexpr (std::is_same_v<P, RandomParams>) {
          require(p.hold_s > 0.0, who + "random hold_s must be > 0");
        } else if constexpr (std::is_same_v<P, TwoToneParams>) {
          require(p.f1_hz > 0.0 && p.f2_hz > 0.0, who + "two-tone frequencies must be > 0");
          require(p.f1_hz != p.f2_hz, who + "two-tone needs f1 != f2");
        } else {
          require(p.edge_s >= 0.0, who + "pulse edge_s must be >= 0");
          require(p.fall_at_s >= p.rise_at_s + p.edge_s, who + "pulse must rise before it falls");
        }
      },
      params);
}

double Stimulus::value(double t) const {
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ChirpParams>) {
          const double rate = (p.f1_hz - p.f0_hz) / duration_s;
          return amplitude_v * std::sin(kTwoPi * (p.f0_hz * t + 0.5 * rate * t * t));
        } else if constexpr (std::is_same_v<P, RandomParams>) {
          const double pos = t / p.hold_s;
          const double base = std::floor(pos);
          const auto i = static_cast<std::int64_t>(base);
          const double frac = pos - base;
          const double a = random_level(p.seed, i);
          const double b = random_level(p.seed, i + 1);
          return amplitude_v * (a + (b - a) * frac);
        } else if constexpr (std::is_same_v<P, TwoToneParams>) {
          return amplitude_v * std::sin(kTwoPi * p.f1_hz * t) +
                 p.amplitude2_v * std::sin(kTwoPi * p.f2_hz * t);
        } else {
          const double up = ramp(t, p.rise_at_s, p.edge_s);
          const double down = ramp(t, p.fall_at_s, p.edge_s);
          return p.low_v + (amplitude_v - p.low_v) * (up - down);
        }
      },
      params);
}

// -- test circuits ---------------------------------------------------------

TestCircuit TestCircuit::with_gain(double gain, std::string name) {
  TestCircuit c;
  c.name = std::move(name);
  c.ground_ohm = 10e3;
  c.feedback_ohm = (gain - 1.0) * c.ground_ohm;
  return c;
}

std::string TestCircuit::feedback_description() const {
  std::ostringstream ss;
  ss << "non-inverting, Rf=" << feedback_ohm << " ohm, Rg=" << ground_ohm << " ohm";
  return ss.str();
}

void TestCircuit::validate() const {
  const std::string who = "circuit '" + name + "': ";
  require(ground_ohm > 0.0 && feedback_ohm > 0.0, who + "resistors must be positive");
  require(closed_loop_gain() > 1.0, who + "closed_loop_gain must be > 1");
  require(source_ohm >= 0.0, who + "source_ohm must be >= 0");
  require(supply_ripple_v >= 0.0 && cm_ripple_v >= 0.0, who + "ripple amplitudes must be >= 0");
  require(supply_ripple_hz >= 0.0 && cm_ripple_hz >= 0.0, who + "ripple frequencies must be >= 0");
}

// -- simulation ------------------------------------------------------------

double fastest_rate(const DeviceSample& d, const TestCircuit& c) {
  const double a0 = db_to_ratio(d.a0_db);
  const double wu = kTwoPi * d.gbw_hz;
  const double w1 = wu / a0;
  const double w2 = kTwoPi * d.p2_hz;
  // Jacobian [[-w1, -wu/G], [w2, -w2]].
  const double trace = -(w1 + w2);
  const double det = w1 * w2 + wu * w2 / c.closed_loop_gain();
  const double disc = trace * trace - 4.0 * det;
  if (disc < 0.0) return std::sqrt(det);
  return (std::abs(trace) + std::sqrt(disc)) / 2.0;
}

ResponseSimulator::ResponseSimulator(const TestCircuit& circuit, const Stimulus& stimulus,
                                     std::size_t k_points, double tau_s,
                                     const SimOptions& options)
    : circuit_(circuit), k_points_(k_points), min_steps_(options.min_steps_per_time_constant) {
  circuit.validate();
  stimulus.validate();
  if (k_points < 2) throw InvalidConfigError("k_points must be >= 2");
  if (!(tau_s > 0.0)) throw InvalidConfigError("tau_s must be > 0");
  // Relative slack so that K * tau == duration passes despite rounding.
  if (static_cast<double>(k_points) * tau_s > stimulus.duration_s * (1.0 + 1e-12)) {
    throw InvalidConfigError("stimulus '" + stimulus.name + "' is shorter than K * tau");
  }
  if (!(options.max_substep_s > 0.0)) throw InvalidConfigError("max_substep_s must be > 0");

  substeps_ = static_cast<std::size_t>(std::ceil(tau_s / options.max_substep_s - 1e-9));
  substeps_ = std::max<std::size_t>(substeps_, 1);
  h_ = tau_s / static_cast<double>(substeps_);

  const std::size_t grid = k_points * substeps_ + 1;
  input_.resize(grid);
  common_mode_.resize(grid);
  supply_.resize(grid);
  for (std::size_t j = 0; j < grid; ++j) {
    const double t = static_cast<double>(j) * h_;
    input_[j] = stimulus.value(t);
    common_mode_[j] = input_[j] + circuit.cm_ripple_v * std::sin(kTwoPi * circuit.cm_ripple_hz * t);
    supply_[j] = circuit.supply_ripple_v * std::sin(kTwoPi * circuit.supply_ripple_hz * t);
  }
}

std::vector<double> ResponseSimulator::run(const DeviceSample& device) const {
  std::vector<double> out(k_points_);
  run(device, out);
  return out;
}

void ResponseSimulator::run(const DeviceSample& d, std::span<double> out) const {
  if (out.size() != k_points_) throw DimensionError("response buffer has wrong length");
  if (!d.valid()) throw SimulationError("invalid device sample");

  const double rate = fastest_rate(d, circuit_);
  if (h_ * rate * min_steps_ > 1.0) {
    std::ostringstream ss;
    ss << "sub-step " << h_ << " s exceeds the stability bound " << 1.0 / (rate * min_steps_)
       << " s; reduce max_substep_s";
    throw SimulationError(ss.str());
  }

  const double gain = circuit_.closed_loop_gain();
  const double a0 = db_to_ratio(d.a0_db);
  const double wu = kTwoPi * d.gbw_hz;
  const double w1 = wu / a0;
  const double w2 = kTwoPi * d.p2_hz;
  const double sr_up = d.sr_rise_vus * 1e6;
  const double sr_down = d.sr_fall_vus * 1e6;
  const double vsat = d.vsat_v;
  const double cm_leak = 1.0 / db_to_ratio(d.cmrr_db);
  const double ps_leak = 1.0 / db_to_ratio(d.psrr_db);
  const double dc_shift = d.vos_v + d.ib_a * circuit_.source_ohm;
  const double inv_gain = 1.0 / gain;

  auto vp_at = [&](std::size_t j) {
    return input_[j] + dc_shift + cm_leak * common_mode_[j] + ps_leak * supply_[j];
  };
  auto clip = [vsat](double v) { return std::clamp(v, -vsat, vsat); };

  // y1: dominant-pole stage, y2: output stage (slew limited, saturating).
  struct Deriv {
    double d1, d2;
  };
  auto deriv = [&](double y1, double y2, double vp) {
    const double err = vp - y2 * inv_gain;
    return Deriv{wu * err - w1 * y1, std::clamp(w2 * (y1 - y2), -sr_down, sr_up)};
  };

  // Start from the DC operating point for the input at t = 0.
  double y2 = clip(a0 * vp_at(0) / (1.0 + a0 * inv_gain));
  double y1 = y2;
  double vp_now = vp_at(0);

  std::size_t j = 0;
  for (std::size_t k = 0; k < k_points_; ++k) {
    for (std::size_t s = 0; s < substeps_; ++s, ++j) {
      const double vp_next = vp_at(j + 1);
      const Deriv k1 = deriv(y1, y2, vp_now);
      const double p1 = clip(y1 + h_ * k1.d1);
      const double p2 = clip(y2 + h_ * k1.d2);
      const Deriv k2 = deriv(p1, p2, vp_next);
      y1 = clip(y1 + 0.5 * h_ * (k1.d1 + k2.d1));
      y2 = clip(y2 + 0.5 * h_ * (k1.d2 + k2.d2));
      vp_now = vp_next;
    }
    out[k] = y2;
  }
}

std::vector<double> simulate_response(const DeviceSample& device, const TestCircuit& circuit,
                                      const Stimulus& stimulus, std::size_t k_points,
                                      double tau_s, const SimOptions& options) {
  return ResponseSimulator(circuit, stimulus, k_points, tau_s, options).run(device);
}

}  // namespace aptest::surrogate
