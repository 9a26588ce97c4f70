#include "aptest/config.hpp"

#include "aptest/io.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace aptest {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<double> desk_thresholds() {
  return {0.12, 0.11, 0.087, 0.21, 0.12, 0.082, 0.10, 0.094, 0.089, 0.047};
}

std::vector<double> reference_thresholds() {
  return {1.1e-3, 4.2e-3, 9.7e-3, 7.5e-3, 6.9e-3, 4.8e-3, 1.1e-3, 3.7e-3, 3.6e-3, 2.7e-3};
}

namespace {

json gaussian(double mean, double sd) { return {{"mean", mean}, {"std", sd}}; }

json default_nominals() {
  const surrogate::DeviceNominals n;
  return {
      {"a0_db", gaussian(n.a0_db.mean, n.a0_db.stddev)},
      {"gbw_hz", gaussian(n.gbw_hz.mean, n.gbw_hz.stddev)},
      {"p2_hz", gaussian(n.p2_hz.mean, n.p2_hz.stddev)},
      {"vos_v", gaussian(n.vos_v.mean, n.vos_v.stddev)},
      {"sr_rise_vus", gaussian(n.sr_rise_vus.mean, n.sr_rise_vus.stddev)},
      {"sr_fall_vus", gaussian(n.sr_fall_vus.mean, n.sr_fall_vus.stddev)},
      {"ib_a", gaussian(n.ib_a.mean, n.ib_a.stddev)},
      {"cmrr_db", gaussian(n.cmrr_db.mean, n.cmrr_db.stddev)},
      {"psrr_db", gaussian(n.psrr_db.mean, n.psrr_db.stddev)},
      {"vsat_v", gaussian(n.vsat_v.mean, n.vsat_v.stddev)},
      {"max_retries", n.max_retries},
  };
}

json default_stimuli(double duration) {
  return json::array({
      {{"name", "chirp"}, {"kind", "chirp"}, {"duration_s", duration}, {"amplitude_v", 0.05},
       {"f0_hz", 50e3}, {"f1_hz", 20e6}},
      {{"name", "random"}, {"kind", "random"}, {"duration_s", duration}, {"amplitude_v", 0.1},
       {"seed", 12345}, {"hold_s", 40e-9}},
      {{"name", "two_tone"}, {"kind", "two_tone"}, {"duration_s", duration}, {"amplitude_v", 0.1},
       {"f1_hz", 1.0e6}, {"f2_hz", 1.2e6}, {"amplitude2_v", 0.1}},
      {{"name", "pulse"}, {"kind", "pulse"}, {"duration_s", duration}, {"amplitude_v", 0.4},
       {"low_v", 0.0}, {"edge_s", 5e-9}, {"rise_at_s", 1e-6}, {"fall_at_s", 5.5e-6}},
  });
}

json circuit(const std::string& name, double gain, double source_ohm) {
  const surrogate::TestCircuit c;
  return {{"name", name},
          {"gain", gain},
          {"source_ohm", source_ohm},
          {"supply_ripple_v", c.supply_ripple_v},
          {"supply_ripple_hz", c.supply_ripple_hz},
          {"cm_ripple_v", c.cm_ripple_v},
          {"cm_ripple_hz", c.cm_ripple_hz}};
}

json thresholds_json(const std::vector<double>& values) {
  json out = json::object();
  for (std::size_t l = 0; l < surrogate::kNumSpecs; ++l) {
    out[std::string(surrogate::kSpecNames[l])] = values[l];
  }
  return out;
}

json bound_sides_json() {
  json out = json::object();
  const auto sides = report::default_bound_sides();
  for (std::size_t l = 0; l < surrogate::kNumSpecs; ++l) {
    out[std::string(surrogate::kSpecNames[l])] = std::string(report::to_string(sides[l]));
  }
  return out;
}

json train_json(std::vector<int> hidden, int batch, int epochs) {
  const nn::TrainConfig t;
  return {{"hidden", std::move(hidden)},     {"learning_rate", t.learning_rate},
          {"batch_size", batch},             {"epochs", epochs},
          {"beta1", t.beta1},                {"beta2", t.beta2},
          {"epsilon", t.epsilon},            {"validation_fraction", t.validation_fraction}};
}

json base_profile() {
  return {
      {"profile", "desk"},
      {"master_seed", 20240917},
      {"output_dir", "run-desk"},
      {"threads", 0},
      {"devices", 1000},
      {"split_ratio", 0.7},
      {"k_points", 2000},
      {"tau_s", 5e-9},
      {"simulation", {{"max_substep_s", 0.1e-9}, {"min_steps_per_time_constant", 20.0}}},
      {"nominals", default_nominals()},
      {"stimuli", default_stimuli(10e-6)},
      {"circuits", json::array({circuit("x3", 3.0, 1e6), circuit("x10", 10.0, 0.0)})},
      {"thresholds", thresholds_json(desk_thresholds())},
      {"module_costs", 1.0},
      {"phi", train_json({256, 128, 64, 32, 16}, 32, 100)},
      {"rho", train_json({512, 256, 128}, 16, 75)},
      {"sweep", {{"enabled", true}, {"max_modules", 0}}},
      {"fault_bounds", bound_sides_json()},
  };
}

// -- strict reader ---------------------------------------------------------

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg, const std::string& key = {}) const {
    throw InvalidConfigError((key.empty() ? path_ : sub(key)) + ": " + msg);
  }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail("missing key", key);
    return j_.at(key);
  }
  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) fail("expected a number", key);
    return v.get<double>();
  }
  double positive(const std::string& key) {
    const double v = number(key);
    if (!(v > 0.0) || !std::isfinite(v)) fail("must be a finite number > 0", key);
    return v;
  }
  double nonneg(const std::string& key) {
    const double v = number(key);
    if (!(v >= 0.0) || !std::isfinite(v)) fail("must be a finite number >= 0", key);
    return v;
  }
  std::int64_t integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) fail("expected an integer", key);
    return v.get<std::int64_t>();
  }
  std::uint64_t uinteger(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail("expected a non-negative integer", key);
    }
    return v.get<std::uint64_t>();
  }
  std::string string(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) fail("expected a string", key);
    return v.get<std::string>();
  }
  bool boolean(const std::string& key) {
    const json& v = at(key);
    if (!v.is_boolean()) fail("expected true or false", key);
    return v.get<bool>();
  }
  Reader object(const std::string& key) { return Reader(at(key), sub(key)); }

  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) fail("unknown key", key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

surrogate::Gaussian read_gaussian(Reader r) {
  surrogate::Gaussian g{r.number("mean"), r.nonneg("std")};
  r.done();
  return g;
}

surrogate::Stimulus read_stimulus(Reader r) {
  surrogate::Stimulus s;
  s.name = r.string("name");
  s.duration_s = r.positive("duration_s");
  s.amplitude_v = r.number("amplitude_v");
  const std::string kind = r.string("kind");
  switch (surrogate::stimulus_kind_from_string(kind)) {
    case surrogate::StimulusKind::chirp:
      s.params = surrogate::ChirpParams{r.positive("f0_hz"), r.positive("f1_hz")};
      break;
    case surrogate::StimulusKind::random:
      s.params = surrogate::RandomParams{r.uinteger("seed"), r.positive("hold_s")};
      break;
    case surrogate::StimulusKind::two_tone:
      s.params = surrogate::TwoToneParams{r.positive("f1_hz"), r.positive("f2_hz"),
                                          r.number("amplitude2_v")};
      break;
    case surrogate::StimulusKind::pulse:
      s.params = surrogate::PulseParams{r.number("low_v"), r.nonneg("edge_s"), r.nonneg("rise_at_s"),
                                        r.nonneg("fall_at_s")};
      break;
  }
  r.done();
  try {
    s.validate();
  } catch (const InvalidConfigError& e) {
    r.fail(e.what());
  }
  return s;
}

surrogate::TestCircuit read_circuit(Reader r) {
  const std::string name = r.string("name");
  const double gain = r.number("gain");
  if (!(gain > 1.0)) r.fail("must be > 1", "gain");
  surrogate::TestCircuit c = surrogate::TestCircuit::with_gain(gain, name);
  c.source_ohm = r.nonneg("source_ohm");
  c.supply_ripple_v = r.nonneg("supply_ripple_v");
  c.supply_ripple_hz = r.nonneg("supply_ripple_hz");
  c.cm_ripple_v = r.nonneg("cm_ripple_v");
  c.cm_ripple_hz = r.nonneg("cm_ripple_hz");
  r.done();
  return c;
}

StageTrainConfig read_stage(Reader r) {
  StageTrainConfig s;
  const json& hidden = r.at("hidden");
  if (!hidden.is_array()) r.fail("expected an array of widths", "hidden");
  for (const auto& h : hidden) {
    if (!h.is_number_integer() || h.get<int>() <= 0) r.fail("widths must be positive integers", "hidden");
    s.hidden.push_back(h.get<int>());
  }
  s.train.learning_rate = r.nonneg("learning_rate");
  s.train.batch_size = static_cast<int>(r.integer("batch_size"));
  s.train.epochs = static_cast<int>(r.integer("epochs"));
  s.train.beta1 = r.nonneg("beta1");
  s.train.beta2 = r.nonneg("beta2");
  s.train.epsilon = r.positive("epsilon");
  s.train.validation_fraction = r.positive("validation_fraction");
  r.done();
  try {
    s.train.validate();
  } catch (const InvalidConfigError& e) {
    r.fail(e.what());
  }
  return s;
}

PipelineConfig parse(const json& doc) {
  Reader r(doc, "");
  PipelineConfig cfg;
  cfg.profile = r.string("profile");
  cfg.master_seed = r.uinteger("master_seed");
  cfg.output_dir = r.string("output_dir");
  cfg.threads = static_cast<int>(r.integer("threads"));
  if (cfg.threads < 0) r.fail("must be >= 0", "threads");
  const auto devices = r.integer("devices");
  if (devices < 10) r.fail("must be >= 10", "devices");
  cfg.devices = static_cast<std::size_t>(devices);
  cfg.split_ratio = r.number("split_ratio");
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) r.fail("must be in (0, 1)", "split_ratio");
  const auto k = r.integer("k_points");
  if (k < 2) r.fail("must be >= 2", "k_points");
  cfg.k_points = static_cast<std::size_t>(k);
  cfg.tau_s = r.positive("tau_s");
  {
    Reader s = r.object("simulation");
    cfg.simulation.max_substep_s = s.positive("max_substep_s");
    cfg.simulation.min_steps_per_time_constant = s.positive("min_steps_per_time_constant");
    s.done();
  }
  {
    Reader n = r.object("nominals");
    auto& nom = cfg.nominals;
    nom.a0_db = read_gaussian(n.object("a0_db"));
    nom.gbw_hz = read_gaussian(n.object("gbw_hz"));
    nom.p2_hz = read_gaussian(n.object("p2_hz"));
    nom.vos_v = read_gaussian(n.object("vos_v"));
    nom.sr_rise_vus = read_gaussian(n.object("sr_rise_vus"));
    nom.sr_fall_vus = read_gaussian(n.object("sr_fall_vus"));
    nom.ib_a = read_gaussian(n.object("ib_a"));
    nom.cmrr_db = read_gaussian(n.object("cmrr_db"));
    nom.psrr_db = read_gaussian(n.object("psrr_db"));
    nom.vsat_v = read_gaussian(n.object("vsat_v"));
    nom.max_retries = static_cast<int>(n.integer("max_retries"));
    n.done();
    try {
      nom.validate();
    } catch (const InvalidConfigError& e) {
      n.fail(e.what());
    }
  }
  {
    const json& list = r.at("stimuli");
    if (!list.is_array() || list.empty()) r.fail("expected a non-empty array", "stimuli");
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.stimuli.push_back(read_stimulus(Reader(list[i], "stimuli[" + std::to_string(i) + "]")));
      if (static_cast<double>(cfg.k_points) * cfg.tau_s > cfg.stimuli.back().duration_s * (1 + 1e-12)) {
        r.fail("k_points * tau_s exceeds the stimulus duration",
               "stimuli[" + std::to_string(i) + "].duration_s");
      }
    }
  }
  {
    const json& list = r.at("circuits");
    if (!list.is_array() || list.empty()) r.fail("expected a non-empty array", "circuits");
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.circuits.push_back(read_circuit(Reader(list[i], "circuits[" + std::to_string(i) + "]")));
    }
  }
  {
    Reader t = r.object("thresholds");
    for (std::size_t l = 0; l < surrogate::kNumSpecs; ++l) {
      const std::string name(surrogate::kSpecNames[l]);
      cfg.spec_names.push_back(name);
      const json& v = t.at(name);
      if (v.is_null()) {
        cfg.thresholds.push_back(std::numeric_limits<double>::infinity());
      } else {
        cfg.thresholds.push_back(t.positive(name));
      }
    }
    t.done();
  }
  {
    const json& costs = r.at("module_costs");
    const std::size_t count = cfg.num_modules();
    if (costs.is_number()) {
      cfg.module_costs.assign(count, costs.get<double>());
    } else if (costs.is_array() && costs.size() == count) {
      for (const auto& c : costs) {
        if (!c.is_number()) r.fail("costs must be numbers", "module_costs");
        cfg.module_costs.push_back(c.get<double>());
      }
    } else {
      r.fail("expected a number or an array of " + std::to_string(count) + " numbers",
             "module_costs");
    }
    for (double c : cfg.module_costs) {
      if (!(c > 0.0) || !std::isfinite(c)) r.fail("costs must be finite and > 0", "module_costs");
    }
  }
  cfg.phi = read_stage(r.object("phi"));
  cfg.rho = read_stage(r.object("rho"));
  {
    Reader s = r.object("sweep");
    cfg.sweep.enabled = s.boolean("enabled");
    const auto max = s.integer("max_modules");
    if (max < 0 || static_cast<std::size_t>(max) > cfg.num_modules()) {
      s.fail("must be in [0, " + std::to_string(cfg.num_modules()) + "]", "max_modules");
    }
    cfg.sweep.max_modules = max == 0 ? cfg.num_modules() : static_cast<std::size_t>(max);
    s.done();
  }
  {
    Reader b = r.object("fault_bounds");
    for (std::size_t l = 0; l < surrogate::kNumSpecs; ++l) {
      const std::string name(surrogate::kSpecNames[l]);
      try {
        cfg.bound_sides.push_back(report::bound_side_from_string(b.string(name)));
      } catch (const InvalidConfigError& e) {
        b.fail(e.what(), name);
      }
    }
    b.done();
  }
  r.done();
  return cfg;
}

std::string hash_of(const json& doc, std::initializer_list<const char*> keys) {
  json subset = json::object();
  for (const char* k : keys) subset[k] = doc.at(k);
  return io::crc32_hex(io::crc32(subset.dump()));
}

// Objects merge key by key; any other value, null included, replaces.
void overlay(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) overlay(base[it.key()], it.value());
}

}  // namespace

json profile_json(std::string_view profile) {
  json doc = base_profile();
  if (profile == "desk") return doc;
  if (profile == "paper") {
    doc["profile"] = "paper";
    doc["thresholds"] = thresholds_json(reference_thresholds());
    doc["output_dir"] = "run-paper";
    doc["devices"] = 5000;
    doc["k_points"] = 10001;
    doc["tau_s"] = 10e-6 / 10001.0;
    return doc;
  }
  if (profile == "smoke") {
    doc["profile"] = "smoke";
    doc["output_dir"] = "run-smoke";
    doc["devices"] = 40;
    doc["k_points"] = 200;
    doc["tau_s"] = 50e-9;
    json unbounded = json::object();
    for (auto name : surrogate::kSpecNames) unbounded[std::string(name)] = nullptr;
    doc["thresholds"] = unbounded;
    doc["phi"] = train_json({32, 16}, 8, 5);
    doc["rho"] = train_json({16}, 8, 5);
    doc["sweep"]["max_modules"] = 3;
    return doc;
  }
  throw InvalidConfigError("profile: unknown profile '" + std::string(profile) +
                           "' (expected desk, paper or smoke)");
}

PipelineConfig resolve_config(std::string_view profile, const json& overrides) {
  json doc = profile_json(profile);
  if (!overrides.is_null()) {
    if (!overrides.is_object()) throw InvalidConfigError("config: top level must be an object");
    overlay(doc, overrides);
  }
  doc["profile"] = std::string(profile);
  return parse(doc);
}

PipelineConfig load_config(const std::optional<fs::path>& path, std::string_view profile,
                           const json& cli_overrides) {
  json file = json::object();
  if (path) {
    try {
      file = json::parse(io::read_text(*path));
    } catch (const json::exception& e) {
      throw InvalidConfigError(path->string() + ": not valid JSON: " + e.what());
    } catch (const IoError& e) {
      throw InvalidConfigError(e.what());
    }
    if (!file.is_object()) throw InvalidConfigError(path->string() + ": top level must be an object");
  }
  std::string base(profile);
  if (base.empty()) base = file.contains("profile") ? file["profile"].get<std::string>() : "desk";
  file.erase("profile");
  if (!cli_overrides.is_null()) overlay(file, cli_overrides);
  return resolve_config(base, file);
}

json to_json(const PipelineConfig& cfg) {
  json doc = profile_json(cfg.profile);
  doc["master_seed"] = cfg.master_seed;
  doc["output_dir"] = cfg.output_dir.string();
  doc["threads"] = cfg.threads;
  doc["devices"] = cfg.devices;
  doc["split_ratio"] = cfg.split_ratio;
  doc["k_points"] = cfg.k_points;
  doc["tau_s"] = cfg.tau_s;
  doc["simulation"] = {{"max_substep_s", cfg.simulation.max_substep_s},
                       {"min_steps_per_time_constant", cfg.simulation.min_steps_per_time_constant}};
  const auto& n = cfg.nominals;
  doc["nominals"] = {
      {"a0_db", gaussian(n.a0_db.mean, n.a0_db.stddev)},
      {"gbw_hz", gaussian(n.gbw_hz.mean, n.gbw_hz.stddev)},
      {"p2_hz", gaussian(n.p2_hz.mean, n.p2_hz.stddev)},
      {"vos_v", gaussian(n.vos_v.mean, n.vos_v.stddev)},
      {"sr_rise_vus", gaussian(n.sr_rise_vus.mean, n.sr_rise_vus.stddev)},
      {"sr_fall_vus", gaussian(n.sr_fall_vus.mean, n.sr_fall_vus.stddev)},
      {"ib_a", gaussian(n.ib_a.mean, n.ib_a.stddev)},
      {"cmrr_db", gaussian(n.cmrr_db.mean, n.cmrr_db.stddev)},
      {"psrr_db", gaussian(n.psrr_db.mean, n.psrr_db.stddev)},
      {"vsat_v", gaussian(n.vsat_v.mean, n.vsat_v.stddev)},
      {"max_retries", n.max_retries},
  };
  json stimuli = json::array();
  for (const auto& s : cfg.stimuli) {
    json j = {{"name", s.name},
              {"kind", std::string(surrogate::to_string(s.kind()))},
              {"duration_s", s.duration_s},
              {"amplitude_v", s.amplitude_v}};
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, surrogate::ChirpParams>) {
            j["f0_hz"] = p.f0_hz;
            j["f1_hz"] = p.f1_hz;
          } else if constexpr (std::is_same_v<P, surrogate::RandomParams>) {
            j["seed"] = p.seed;
            j["hold_s"] = p.hold_s;
          } else if constexpr (std::is_same_v<P, surrogate::TwoToneParams>) {
            j["f1_hz"] = p.f1_hz;
            j["f2_hz"] = p.f2_hz;
            j["amplitude2_v"] = p.amplitude2_v;
          } else {
            j["low_v"] = p.low_v;
            j["edge_s"] = p.edge_s;
            j["rise_at_s"] = p.rise_at_s;
            j["fall_at_s"] = p.fall_at_s;
          }
        },
        s.params);
    stimuli.push_back(std::move(j));
  }
  doc["stimuli"] = stimuli;
  json circuits = json::array();
  for (const auto& c : cfg.circuits) {
    circuits.push_back({{"name", c.name},
                        {"gain", c.closed_loop_gain()},
                        {"source_ohm", c.source_ohm},
                        {"supply_ripple_v", c.supply_ripple_v},
                        {"supply_ripple_hz", c.supply_ripple_hz},
                        {"cm_ripple_v", c.cm_ripple_v},
                        {"cm_ripple_hz", c.cm_ripple_hz}});
  }
  doc["circuits"] = circuits;
  json thresholds = json::object();
  for (std::size_t l = 0; l < cfg.spec_names.size(); ++l) {
    thresholds[cfg.spec_names[l]] =
        std::isinf(cfg.thresholds[l]) ? json(nullptr) : json(cfg.thresholds[l]);
  }
  doc["thresholds"] = thresholds;
  doc["module_costs"] = cfg.module_costs;
  auto stage = [](const StageTrainConfig& s) {
    return json{{"hidden", s.hidden},
                {"learning_rate", s.train.learning_rate},
                {"batch_size", s.train.batch_size},
                {"epochs", s.train.epochs},
                {"beta1", s.train.beta1},
                {"beta2", s.train.beta2},
                {"epsilon", s.train.epsilon},
                {"validation_fraction", s.train.validation_fraction}};
  };
  doc["phi"] = stage(cfg.phi);
  doc["rho"] = stage(cfg.rho);
  doc["sweep"] = {{"enabled", cfg.sweep.enabled}, {"max_modules", cfg.sweep.max_modules}};
  json sides = json::object();
  for (std::size_t l = 0; l < cfg.spec_names.size(); ++l) {
    sides[cfg.spec_names[l]] = std::string(report::to_string(cfg.bound_sides[l]));
  }
  doc["fault_bounds"] = sides;
  return doc;
}

std::string PipelineConfig::data_hash() const {
  return hash_of(to_json(*this), {"master_seed", "devices", "split_ratio", "k_points", "tau_s",
                                  "simulation", "nominals", "stimuli", "circuits"});
}

std::string PipelineConfig::train_hash() const {
  return hash_of(to_json(*this), {"master_seed", "devices", "split_ratio", "k_points", "tau_s",
                                  "simulation", "nominals", "stimuli", "circuits", "phi"});
}

std::string PipelineConfig::select_hash() const {
  return hash_of(to_json(*this), {"master_seed", "devices", "split_ratio", "k_points", "tau_s",
                                  "simulation", "nominals", "stimuli", "circuits", "phi",
                                  "thresholds", "module_costs"});
}

std::string PipelineConfig::combine_hash() const {
  return hash_of(to_json(*this), {"master_seed", "devices", "split_ratio", "k_points", "tau_s",
                                  "simulation", "nominals", "stimuli", "circuits", "phi",
                                  "thresholds", "module_costs", "rho"});
}

std::string PipelineConfig::report_hash() const {
  return hash_of(to_json(*this), {"master_seed", "devices", "split_ratio", "k_points", "tau_s",
                                  "simulation", "nominals", "stimuli", "circuits", "phi",
                                  "thresholds", "module_costs", "rho", "sweep", "fault_bounds"});
}

}  // namespace aptest
