#pragma once

// Run configuration: a flat key-value text format
//
//   # comment
//   command = scatter
//   [profile]
//   delta_e = 0.2          # same as profile.delta_e = 0.2
//   wave.theta = 55
//
// Every key is registered below with its default; unknown keys and
// out-of-range values are errors naming the key. Manifest JSON files written
// by a previous run are accepted as input too (their "config" object).

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stmsim/dispersion.hpp"
#include "stmsim/error.hpp"
#include "stmsim/fdtd.hpp"
#include "stmsim/medium.hpp"
#include "stmsim/output.hpp"

namespace stmsim {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Command { Band, Isofreq, Scatter, Fdtd, Nonrecip, Sweep };

inline const char* to_string(Command c) noexcept {
  switch (c) {
    case Command::Band: return "band";
    case Command::Isofreq: return "isofreq";
    case Command::Scatter: return "scatter";
    case Command::Fdtd: return "fdtd";
    case Command::Nonrecip: return "nonrecip";
    case Command::Sweep: return "sweep";
  }
  return "?";
}

inline std::optional<Command> parse_command(const std::string& s) {
  for (Command c : {Command::Band, Command::Isofreq, Command::Scatter, Command::Fdtd,
                    Command::Nonrecip, Command::Sweep}) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

struct BandSettings {
  double omega_min = 0.05;  // units of omega_s
  double omega_max = 2.0;
  int omega_steps = 200;
  double k_x = 0.0;         // units of omega_s / c
  int ladder = 2;           // exported harmonic shifts |n| <= ladder
  double gap_im_tol = 1e-7;
  int gap_samples = 801;
};

struct IsofreqSettings {
  double omega = 0.0;  // 0 => wave.omega_0
  double kx_min = -1.0;
  double kx_max = 1.0;
  int kx_steps = 101;
  int ladder = 2;
  double fd_step = 1e-4;
};

struct SweepSettings {
  std::string command = "scatter";
  std::string parameter = "wave.theta";
  double start = 5.0;
  double stop = 175.0;
  int steps = 35;
};

struct RunSpec {
  Command command = Command::Scatter;
  ModulationProfile profile{2.0, 2.0, 0.2, 0.2, 1.0, 2.6, 0.0};
  double thickness_wavelengths = 3.0;  // slab thickness in free-space wavelengths of omega_0
  double exterior_eps = 1.0;
  double exterior_mu = 1.0;
  IncidentWave wave{1.0, 55.0, 1.0, Polarization::TE};
  TruncationPolicy solver;
  int harmonic_center = 0;
  BandSettings band;
  IsofreqSettings isofreq;
  fdtd::SimConfig fdtd;
  bool fdtd_reference = true;  // also run the slab-free reference and reduce to R/T/A
  SweepSettings sweep;
  std::string output_dir;      // empty => out/<command>

  SlabGeometry geometry() const {
    const double lambda = 2.0 * std::numbers::pi / wave.omega_0;
    return SlabGeometry{thickness_wavelengths * lambda, exterior_eps, exterior_mu};
  }
};

namespace config {

/// One registered key: how to print its current value and how to set it.
struct Key {
  std::string name;
  std::string help;
  std::function<std::string(const RunSpec&)> get;
  std::function<void(RunSpec&, const std::string&)> set;
};

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  double out = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || t.empty()) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  if (!std::isfinite(out)) throw ConfigError(key, "value must be finite");
  return out;
}

inline long to_long(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  long out = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

inline std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class T>
Key real_key(std::string name, std::string help, T RunSpec::*group, double T::*field) {
  return {name, std::move(help),
          [group, field](const RunSpec& r) { return output::num(r.*group.*field); },
          [group, field, name](RunSpec& r, const std::string& v) { r.*group.*field = to_double(name, v); }};
}

inline Key real_field(std::string name, std::string help, double RunSpec::*field) {
  return {name, std::move(help), [field](const RunSpec& r) { return output::num(r.*field); },
          [field, name](RunSpec& r, const std::string& v) { r.*field = to_double(name, v); }};
}

template <class T>
Key int_key(std::string name, std::string help, T RunSpec::*group, int T::*field) {
  return {name, std::move(help),
          [group, field](const RunSpec& r) { return std::to_string(r.*group.*field); },
          [group, field, name](RunSpec& r, const std::string& v) {
            const long x = to_long(name, v);
            if (x < -1000000000L || x > 1000000000L) throw ConfigError(name, "integer out of range");
            r.*group.*field = static_cast<int>(x);
          }};
}

/// The complete schema, in manifest order.
inline const std::vector<Key>& registry() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"command", "band | isofreq | scatter | fdtd | nonrecip | sweep",
                 [](const RunSpec& r) { return std::string(to_string(r.command)); },
                 [](RunSpec& r, const std::string& v) {
                   auto c = parse_command(trim(v));
                   if (!c) throw ConfigError("command", "unknown command '" + v + "'");
                   r.command = *c;
                 }});
    k.push_back(real_key("profile.eps_avg", "average relative permittivity", &RunSpec::profile, &ModulationProfile::eps_avg));
    k.push_back(real_key("profile.mu_avg", "average relative permeability", &RunSpec::profile, &ModulationProfile::mu_avg));
    k.push_back(real_key("profile.delta_e", "permittivity modulation depth", &RunSpec::profile, &ModulationProfile::delta_e));
    k.push_back(real_key("profile.delta_m", "permeability modulation depth", &RunSpec::profile, &ModulationProfile::delta_m));
    k.push_back(real_key("profile.omega_s", "modulation angular frequency", &RunSpec::profile, &ModulationProfile::omega_s));
    k.push_back(real_key("profile.kappa_s", "modulation wavenumber (c = 1)", &RunSpec::profile, &ModulationProfile::kappa_s));
    k.push_back(real_key("profile.phi", "modulation phase, radians", &RunSpec::profile, &ModulationProfile::phi));
    k.push_back(real_field("geometry.thickness", "slab thickness, free-space wavelengths of omega_0", &RunSpec::thickness_wavelengths));
    k.push_back(real_field("geometry.exterior_eps", "exterior relative permittivity", &RunSpec::exterior_eps));
    k.push_back(real_field("geometry.exterior_mu", "exterior relative permeability", &RunSpec::exterior_mu));
    k.push_back(real_key("wave.omega_0", "incident angular frequency", &RunSpec::wave, &IncidentWave::omega_0));
    k.push_back(real_key("wave.theta", "incidence angle from +z, degrees", &RunSpec::wave, &IncidentWave::theta_deg));
    k.push_back(real_key("wave.amplitude", "incident E_y amplitude", &RunSpec::wave, &IncidentWave::amplitude));
    k.push_back(int_key("solver.N", "initial truncation order", &RunSpec::solver, &TruncationPolicy::truncation));
    k.push_back({"solver.auto_escalate", "double N until converged",
                 [](const RunSpec& r) { return from_bool(r.solver.auto_escalate); },
                 [](RunSpec& r, const std::string& v) { r.solver.auto_escalate = to_bool("solver.auto_escalate", v); }});
    k.push_back(int_key("solver.max_N", "truncation cap", &RunSpec::solver, &TruncationPolicy::max_truncation));
    k.push_back(real_key("solver.convergence_tol", "escalation stops below this change", &RunSpec::solver, &TruncationPolicy::convergence_tol));
    k.push_back(int_key("solver.sonic_floor", "minimum N near the sonic regime", &RunSpec::solver, &TruncationPolicy::sonic_floor));
    k.push_back({"solver.harmonic_center", "center of the harmonic window",
                 [](const RunSpec& r) { return std::to_string(r.harmonic_center); },
                 [](RunSpec& r, const std::string& v) { r.harmonic_center = static_cast<int>(to_long("solver.harmonic_center", v)); }});
    k.push_back(real_key("band.omega_min", "lowest frequency, units of omega_s", &RunSpec::band, &BandSettings::omega_min));
    k.push_back(real_key("band.omega_max", "highest frequency, units of omega_s", &RunSpec::band, &BandSettings::omega_max));
    k.push_back(int_key("band.omega_steps", "frequency samples", &RunSpec::band, &BandSettings::omega_steps));
    k.push_back(real_key("band.k_x", "fixed transverse wavenumber", &RunSpec::band, &BandSettings::k_x));
    k.push_back(int_key("band.ladder", "exported harmonic shifts |n| <= ladder", &RunSpec::band, &BandSettings::ladder));
    k.push_back(real_key("band.gap_im_tol", "|Im kappa| marking a band gap", &RunSpec::band, &BandSettings::gap_im_tol));
    k.push_back(int_key("band.gap_samples", "frequency samples of the gap search", &RunSpec::band, &BandSettings::gap_samples));
    k.push_back(real_key("isofreq.omega", "frequency, units of omega_s (0 => wave.omega_0)", &RunSpec::isofreq, &IsofreqSettings::omega));
    k.push_back(real_key("isofreq.kx_min", "lowest k_x", &RunSpec::isofreq, &IsofreqSettings::kx_min));
    k.push_back(real_key("isofreq.kx_max", "highest k_x", &RunSpec::isofreq, &IsofreqSettings::kx_max));
    k.push_back(int_key("isofreq.kx_steps", "k_x samples", &RunSpec::isofreq, &IsofreqSettings::kx_steps));
    k.push_back(int_key("isofreq.ladder", "exported harmonic shifts |n| <= ladder", &RunSpec::isofreq, &IsofreqSettings::ladder));
    k.push_back(real_key("isofreq.fd_step", "finite-difference step for group velocity", &RunSpec::isofreq, &IsofreqSettings::fd_step));
    k.push_back(int_key("fdtd.cells_per_wavelength", "cells per shortest retained wavelength", &RunSpec::fdtd, &fdtd::SimConfig::cells_per_wavelength));
    k.push_back(real_key("fdtd.courant", "fraction of the stability limit", &RunSpec::fdtd, &fdtd::SimConfig::courant));
    k.push_back(real_key("fdtd.domain_x", "x extent in wavelengths (0 => thickness + 2)", &RunSpec::fdtd, &fdtd::SimConfig::domain_x));
    k.push_back(real_key("fdtd.domain_z", "z extent in wavelengths (beam source)", &RunSpec::fdtd, &fdtd::SimConfig::domain_z));
    k.push_back(int_key("fdtd.pml_cells", "absorbing layer thickness in cells", &RunSpec::fdtd, &fdtd::SimConfig::pml_cells));
    k.push_back(int_key("fdtd.pml_order", "absorbing layer grading order", &RunSpec::fdtd, &fdtd::SimConfig::pml_order));
    k.push_back(int_key("fdtd.max_harmonic", "resolution covers harmonics |n| <= this", &RunSpec::fdtd, &fdtd::SimConfig::max_harmonic));
    k.push_back({"fdtd.source", "plane | beam",
                 [](const RunSpec& r) { return std::string(fdtd::to_string(r.fdtd.source.kind)); },
                 [](RunSpec& r, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "plane") r.fdtd.source.kind = fdtd::SourceKind::PlaneWave;
                   else if (t == "beam") r.fdtd.source.kind = fdtd::SourceKind::GaussianBeam;
                   else throw ConfigError("fdtd.source", "expected plane or beam, got '" + v + "'");
                 }});
    auto src = [](const char* name, const char* help, double fdtd::SourceConfig::*field) {
      std::string n = name;
      return Key{n, help, [field](const RunSpec& r) { return output::num(r.fdtd.source.*field); },
                 [field, n](RunSpec& r, const std::string& v) { r.fdtd.source.*field = to_double(n, v); }};
    };
    k.push_back(src("fdtd.waist", "beam waist, wavelengths", &fdtd::SourceConfig::waist));
    k.push_back(src("fdtd.center_z", "beam axis crossing, fraction of domain_z", &fdtd::SourceConfig::center_z));
    k.push_back(src("fdtd.ramp_cycles", "raised-cosine turn-on, cycles", &fdtd::SourceConfig::ramp_cycles));
    k.push_back(src("fdtd.total_cycles", "simulated cycles of omega_0", &fdtd::SourceConfig::total_cycles));
    k.push_back(src("fdtd.source_x", "injection line, wavelengths from the slab face", &fdtd::SourceConfig::x));
    k.push_back(int_key("fdtd.frame_stride", "steps between snapshots (0 => period / 20)", &RunSpec::fdtd, &fdtd::SimConfig::frame_stride));
    k.push_back(int_key("fdtd.max_frames", "snapshots kept", &RunSpec::fdtd, &fdtd::SimConfig::max_frames));
    k.push_back(real_key("fdtd.window_periods", "analysis window, modulation periods", &RunSpec::fdtd, &fdtd::SimConfig::window_periods));
    k.push_back({"fdtd.reference", "run the slab-free reference for R/T/A",
                 [](const RunSpec& r) { return from_bool(r.fdtd_reference); },
                 [](RunSpec& r, const std::string& v) { r.fdtd_reference = to_bool("fdtd.reference", v); }});
    k.push_back({"sweep.command", "command run for every sweep value",
                 [](const RunSpec& r) { return r.sweep.command; },
                 [](RunSpec& r, const std::string& v) { r.sweep.command = trim(v); }});
    k.push_back({"sweep.parameter", "numeric key varied by the sweep",
                 [](const RunSpec& r) { return r.sweep.parameter; },
                 [](RunSpec& r, const std::string& v) { r.sweep.parameter = trim(v); }});
    k.push_back(real_key("sweep.start", "first value", &RunSpec::sweep, &SweepSettings::start));
    k.push_back(real_key("sweep.stop", "last value", &RunSpec::sweep, &SweepSettings::stop));
    k.push_back(int_key("sweep.steps", "number of values (inclusive linspace)", &RunSpec::sweep, &SweepSettings::steps));
    k.push_back({"output.dir", "output directory (overridden by STM_SIM_OUT and --out)",
                 [](const RunSpec& r) { return r.output_dir; },
                 [](RunSpec& r, const std::string& v) { r.output_dir = trim(v); }});
    return k;
  }();
  return keys;
}

inline const Key* find_key(const std::string& name) {
  for (const Key& k : registry()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_value(RunSpec& r, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError(key, "unknown configuration key");
  k->set(r, value);
}

inline std::string get_value(const RunSpec& r, const std::string& key) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError(key, "unknown configuration key");
  return k->get(r);
}

/// Resolved key-value pairs in registry order.
inline std::vector<std::pair<std::string, std::string>> resolved(const RunSpec& r) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : registry()) out.emplace_back(k.name, k.get(r));
  return out;
}

/// Text form accepted back by parse_text.
inline std::string to_text(const RunSpec& r) {
  std::string out;
  for (const auto& [k, v] : resolved(r)) out += k + " = " + v + "\n";
  return out;
}

inline nlohmann::json to_json(const RunSpec& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : resolved(r)) j[k] = v;
  return j;
}

}  // namespace config

/// "default" when the medium, slab and frequency keys all hold their
/// default values, else "custom". The incidence angle is not part of it.
inline std::string profile_preset(const RunSpec& r) {
  const RunSpec d;
  for (const config::Key& k : config::registry()) {
    const bool medium = k.name.rfind("profile.", 0) == 0 || k.name.rfind("geometry.", 0) == 0 ||
                        k.name == "wave.omega_0";
    if (medium && k.get(r) != k.get(d)) return "custom";
  }
  return "default";
}

/// Range checks that need more than one key, reported with the key path.
inline void validate(const RunSpec& r) {
  // messages lead with the offending field; report its full key when known
  auto wrap = [](const std::string& section, auto&& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      const std::string field = section + "." + what.substr(0, what.find(' '));
      throw ConfigError(config::find_key(field) ? field : section, what);
    }
  };
  wrap("profile", [&] { validate(r.profile); });
  wrap("geometry", [&] { validate(r.geometry()); });
  wrap("wave", [&] { validate(r.wave); });
  if (r.solver.truncation < 1) throw ConfigError("solver.N", "must be >= 1");
  if (r.solver.max_truncation < 1) throw ConfigError("solver.max_N", "must be >= 1");
  if (r.solver.sonic_floor < 1) throw ConfigError("solver.sonic_floor", "must be >= 1");
  if (!(r.solver.convergence_tol > 0.0)) throw ConfigError("solver.convergence_tol", "must be > 0");
  if (!(r.band.omega_max > r.band.omega_min)) throw ConfigError("band.omega_max", "must exceed band.omega_min");
  if (r.band.omega_steps < 2) throw ConfigError("band.omega_steps", "must be >= 2");
  if (r.band.ladder < 0) throw ConfigError("band.ladder", "must be >= 0");
  if (r.band.gap_samples < 3) throw ConfigError("band.gap_samples", "must be >= 3");
  if (!(r.isofreq.kx_max > r.isofreq.kx_min)) throw ConfigError("isofreq.kx_max", "must exceed isofreq.kx_min");
  if (r.isofreq.kx_steps < 3) throw ConfigError("isofreq.kx_steps", "must be >= 3");
  if (r.isofreq.omega < 0.0) throw ConfigError("isofreq.omega", "must be >= 0");
  if (!(r.isofreq.fd_step > 0.0)) throw ConfigError("isofreq.fd_step", "must be > 0");
  wrap("fdtd", [&] { fdtd::validate(r.fdtd); });
  if (r.command == Command::Sweep) {
    auto c = parse_command(r.sweep.command);
    if (!c || *c == Command::Sweep) throw ConfigError("sweep.command", "must name a non-sweep command");
    const config::Key* k = config::find_key(r.sweep.parameter);
    if (!k || r.sweep.parameter == "command" || r.sweep.parameter.rfind("sweep.", 0) == 0 ||
        r.sweep.parameter == "output.dir") {
      throw ConfigError("sweep.parameter", "'" + r.sweep.parameter + "' is not a sweepable key");
    }
    if (r.sweep.steps < 1) throw ConfigError("sweep.steps", "must be >= 1");
  }
}

/// Parse the key-value text format. `origin` labels error messages.
inline RunSpec parse_text(const std::string& text, const std::string& origin = "config") {
  RunSpec r;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("", origin + ":" + std::to_string(lineno) + ": malformed section header");
      }
      section = config::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = config::trim(line.substr(0, eq));
    const std::string value = config::trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
    config::set_value(r, key, value);
  }
  validate(r);
  return r;
}

/// Read a config file; JSON manifests are recognized by a leading '{'.
inline RunSpec parse_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("", "cannot read configuration file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("", "malformed JSON in '" + path + "': " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) {
      throw ConfigError("", "'" + path + "' is JSON but has no \"config\" object");
    }
    RunSpec r;
    for (auto it = j["config"].begin(); it != j["config"].end(); ++it) {
      if (!it.value().is_string()) throw ConfigError(it.key(), "manifest values must be strings");
      config::set_value(r, it.key(), it.value().get<std::string>());
    }
    validate(r);
    return r;
  }
  return parse_text(text, path);
}

/// Child specs of a sweep: the parameter takes steps values spaced evenly
/// from start to stop inclusive.
inline std::vector<RunSpec> expand_sweep(const RunSpec& r) {
  if (r.command != Command::Sweep) throw ConfigError("command", "not a sweep");
  std::vector<RunSpec> out;
  const int n = r.sweep.steps;
  for (int j = 0; j < n; ++j) {
    const double v = n == 1 ? r.sweep.start
                            : r.sweep.start + (r.sweep.stop - r.sweep.start) * j / (n - 1);
    RunSpec child = r;
    child.command = *parse_command(r.sweep.command);
    config::set_value(child, r.sweep.parameter, output::num(v));
    out.push_back(std::move(child));
  }
  return out;
}

inline std::vector<double> sweep_values(const RunSpec& r) {
  std::vector<double> v;
  for (const RunSpec& c : expand_sweep(r)) v.push_back(config::to_double(r.sweep.parameter, config::get_value(c, r.sweep.parameter)));
  return v;
}

}  // namespace stmsim
