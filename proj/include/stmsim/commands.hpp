#pragma once

// Command dispatch: each command runs one solver and writes its artifacts
// plus manifest.json and resolved.cfg into the output directory.
//
// Exit codes: 0 success, 1 configuration/validation error, 2 solver error.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stmsim/config.hpp"
#include "stmsim/dispersion.hpp"
#include "stmsim/fdtd.hpp"
#include "stmsim/output.hpp"
#include "stmsim/scattering.hpp"

namespace stmsim {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitSolver = 2 };

struct RunOptions {
  fs::path out;                       // resolved output directory
  int jobs = 1;                       // sweep concurrency cap
  std::optional<std::uint64_t> seed;  // recorded only; no command is stochastic
};

struct CommandResult {
  int exit_code = kExitOk;
  std::string error;
  std::vector<std::pair<std::string, double>> metrics;  // per-command headline numbers
  std::vector<std::string> warnings;
};

/// --out, then STM_SIM_OUT, then output.dir, then out/<command>.
inline fs::path resolve_output_dir(const RunSpec& spec, const std::optional<std::string>& cli_out) {
  if (cli_out && !cli_out->empty()) return *cli_out;
  if (const char* env = std::getenv("STM_SIM_OUT"); env && *env) return env;
  if (!spec.output_dir.empty()) return spec.output_dir;
  return fs::path("out") / to_string(spec.command);
}

namespace detail {

inline json cjson(cplx v) { return json::array({v.real(), v.imag()}); }

/// JSON numbers must be finite; non-finite values become strings.
inline json jnum(double v) {
  if (std::isfinite(v)) return v;
  return output::num(v);
}

inline void write_json(const fs::path& path, const json& j) {
  output::write_atomic(path, j.dump(2) + "\n");
}

inline HarmonicIndexSet harmonics_of(const RunSpec& s) {
  return HarmonicIndexSet{s.solver.truncation, s.harmonic_center};
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return v;
}

/// Branches whose dominant harmonic sits at the truncation edge are artefacts.
inline bool interior_branch(const HarmonicIndexSet& h, int dominant) {
  return std::abs(dominant - h.center) <= h.truncation_order - 2;
}

inline const char* palette(int j) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                 "#8c564b", "#e377c2", "#17becf", "#7f7f7f"};
  return colors[static_cast<std::size_t>(std::abs(j)) % 9];
}

// ---------------------------------------------------------------------------
// band

inline CommandResult cmd_band(const RunSpec& s, const fs::path& out, json& extra) {
  CommandResult res;
  const ModulationProfile& p = s.profile;
  const HarmonicIndexSet h = harmonics_of(s);
  const auto grid = linspace(s.band.omega_min * p.omega_s, s.band.omega_max * p.omega_s,
                             s.band.omega_steps);
  const BandDiagram d = band_structure(p, grid, h, s.band.k_x);
  res.warnings = d.warnings;
  const bool by_kappa = p.kappa_s > 0.0;
  const double kunit = by_kappa ? p.kappa_s : p.omega_s;
  const int ladder = by_kappa ? s.band.ladder : 0;

  output::Csv csv({"omega_over_omega_s", "kappa_over_kappa_s", "branch_id", "harmonic_n",
                   "im_kappa", "vg_x", "vg_z"});
  std::map<int, output::Series> by_shift;
  int failed = 0;
  for (const SweepPoint& pt : d.points) {
    if (!pt.ok) {
      ++failed;
      continue;
    }
    for (std::size_t b = 0; b < pt.branches.size(); ++b) {
      const BranchPoint& bp = pt.branches[b];
      if (!interior_branch(h, bp.dominant_harmonic)) continue;
      for (int n = -ladder; n <= ladder; ++n) {
        const double k = (bp.kappa.real() + n * p.kappa_s) / kunit;
        csv.row({output::num(pt.parameter / p.omega_s), output::num(k), std::to_string(b),
                 std::to_string(n), output::num(bp.kappa.imag() / kunit),
                 bp.has_group_velocity ? output::num(bp.group_velocity.v_x) : "nan",
                 bp.has_group_velocity ? output::num(bp.group_velocity.v_z) : "nan"});
        if (bp.classification != ModeClass::Evanescent) {
          auto& ser = by_shift[n];
          ser.x.push_back(k);
          ser.y.push_back(pt.parameter / p.omega_s);
        }
      }
    }
  }
  output::write_atomic(out / "band.csv", csv.str());

  std::vector<output::Series> series;
  for (auto& [n, ser] : by_shift) {
    ser.label = ladder > 0 ? "shift n = " + std::to_string(n) : "";
    ser.color = palette(n + ladder);
    series.push_back(std::move(ser));
  }
  output::write_atomic(out / "band.svg",
                       output::svg_plot(series, "Band structure (propagating branches)",
                                        by_kappa ? "kappa / kappa_s" : "kappa / (omega_s / c)",
                                        "omega / omega_s"));

  json summary;
  summary["kappa_unit"] = by_kappa ? "kappa_s" : "omega_s/c";
  summary["k_x"] = s.band.k_x;
  summary["truncation"] = h.truncation_order;
  summary["points"] = d.points.size();
  summary["failed_points"] = failed;
  const BandGap gap = first_band_gap(p, grid.front(), grid.back(), h, s.band.gap_samples,
                                     s.band.gap_im_tol, 1, s.band.k_x);
  summary["gap"] = {{"found", gap.found},
                    {"lower_over_omega_s", gap.lower / p.omega_s},
                    {"upper_over_omega_s", gap.upper / p.omega_s},
                    {"width_over_omega_s", gap.width() / p.omega_s}};
  res.metrics.emplace_back("gap_width", gap.width() / p.omega_s);
  double fwd = std::numeric_limits<double>::quiet_NaN(), bwd = fwd;
  if (by_kappa) {
    const BlochSolution at = eigen_kappa(p, s.wave.omega_0, s.band.k_x, h);
    const LadderSpread ls = ladder_spread(at, p.kappa_s);
    fwd = ls.forward_min_gap;
    bwd = ls.backward_min_gap;
    summary["ladder"] = {{"omega_over_omega_s", s.wave.omega_0 / p.omega_s},
                         {"forward", ls.forward},
                         {"backward", ls.backward},
                         {"forward_min_gap", jnum(ls.forward_min_gap)},
                         {"backward_min_gap", jnum(ls.backward_min_gap)},
                         {"forward_center", jnum(ls.forward_center)}};
  }
  res.metrics.emplace_back("forward_min_gap", fwd);
  res.metrics.emplace_back("backward_min_gap", bwd);
  write_json(out / "summary.json", summary);
  extra["artifacts"] = {"band.csv", "band.svg", "summary.json"};
  return res;
}

// ---------------------------------------------------------------------------
// isofreq

inline CommandResult cmd_isofreq(const RunSpec& s, const fs::path& out, json& extra) {
  CommandResult res;
  const ModulationProfile& p = s.profile;
  const HarmonicIndexSet h = harmonics_of(s);
  const double omega = (s.isofreq.omega > 0.0 ? s.isofreq.omega * p.omega_s : s.wave.omega_0);
  const auto grid = linspace(s.isofreq.kx_min, s.isofreq.kx_max, s.isofreq.kx_steps);
  const IsofrequencyDiagram d = isofrequency(p, omega, grid, h, s.isofreq.fd_step);
  res.warnings = d.warnings;
  const bool by_kappa = p.kappa_s > 0.0;
  const double kunit = by_kappa ? p.kappa_s : p.omega_s;
  const int ladder = by_kappa ? s.isofreq.ladder : 0;

  output::Csv csv({"omega_over_omega_s", "k_x", "kappa_over_kappa_s", "branch_id", "harmonic_n",
                   "im_kappa", "class", "vg_x", "vg_z"});
  std::map<int, output::Series> by_shift;
  int rows = 0;
  for (const SweepPoint& pt : d.points) {
    if (!pt.ok) continue;
    for (std::size_t b = 0; b < pt.branches.size(); ++b) {
      const BranchPoint& bp = pt.branches[b];
      if (!interior_branch(h, bp.dominant_harmonic)) continue;
      for (int n = -ladder; n <= ladder; ++n) {
        const double k = (bp.kappa.real() + n * p.kappa_s) / kunit;
        csv.row({output::num(omega / p.omega_s), output::num(pt.parameter), output::num(k),
                 std::to_string(b), std::to_string(n), output::num(bp.kappa.imag() / kunit),
                 to_string(bp.classification),
                 bp.has_group_velocity ? output::num(bp.group_velocity.v_x) : "nan",
                 bp.has_group_velocity ? output::num(bp.group_velocity.v_z) : "nan"});
        ++rows;
        if (bp.classification != ModeClass::Evanescent) {
          auto& ser = by_shift[n];
          ser.x.push_back(k);
          ser.y.push_back(pt.parameter);
        }
      }
    }
  }
  output::write_atomic(out / "isofreq.csv", csv.str());
  std::vector<output::Series> series;
  for (auto& [n, ser] : by_shift) {
    ser.label = ladder > 0 ? "shift n = " + std::to_string(n) : "";
    ser.color = palette(n + ladder);
    series.push_back(std::move(ser));
  }
  output::write_atomic(out / "isofreq.svg",
                       output::svg_plot(series, "Isofrequency contour, omega / omega_s = " +
                                                    output::num(omega / p.omega_s),
                                        by_kappa ? "kappa / kappa_s" : "kappa / (omega_s / c)",
                                        "k_x"));
  res.metrics.emplace_back("rows", rows);
  extra["artifacts"] = {"isofreq.csv", "isofreq.svg"};
  return res;
}

// ---------------------------------------------------------------------------
// scatter / nonrecip

inline std::string power_table(const ScatteringResult& r) {
  output::Csv csv({"n", "omega_n", "k_z_n", "propagating", "P_refl_n", "P_trans_n"});
  for (int i = 0; i < r.lattice.size(); ++i) {
    const LatticeEntry& e = r.lattice.entries[i];
    csv.row({std::to_string(e.n), output::num(e.omega), output::num(e.k_z),
             e.propagating ? "1" : "0", output::num(r.p_refl[i] / r.p_inc),
             output::num(r.p_trans[i] / r.p_inc)});
  }
  return csv.str();
}

inline json scattering_json(const ScatteringResult& r) {
  json j;
  j["truncation"] = r.truncation;
  j["p_inc"] = r.p_inc;
  j["reflected"] = r.reflected_total() / r.p_inc;
  j["transmitted"] = r.transmitted_total() / r.p_inc;
  j["absorption"] = r.absorption;
  j["photon_number_balance"] = photon_number_balance(r);
  j["condition"] = jnum(r.condition);
  j["residual"] = jnum(r.residual);
  json harm = json::array();
  for (int i = 0; i < r.lattice.size(); ++i) {
    const LatticeEntry& e = r.lattice.entries[i];
    harm.push_back({{"n", e.n},
                    {"omega_n", e.omega},
                    {"k_z_n", e.k_z},
                    {"k_x_n", cjson(e.k_x_exterior)},
                    {"propagating", e.propagating},
                    {"static", e.is_static},
                    {"R_n", cjson(r.reflection[i])},
                    {"T_n", cjson(r.transmission[i])}});
  }
  j["harmonics"] = harm;
  return j;
}

inline CommandResult cmd_scatter(const RunSpec& s, const fs::path& out, json& extra) {
  CommandResult res;
  const ScatteringResult r = scatter(s.profile, s.geometry(), s.wave, s.solver);
  res.warnings = r.warnings;
  json j = scattering_json(r);
  j["theta"] = s.wave.theta_deg;
  j["omega_0"] = s.wave.omega_0;
  write_json(out / "scatter.json", j);
  output::write_atomic(out / "power.csv", power_table(r));
  res.metrics = {{"reflected", r.reflected_total() / r.p_inc},
                 {"transmitted", r.transmitted_total() / r.p_inc},
                 {"absorption", r.absorption},
                 {"truncation", r.truncation},
                 {"condition", r.condition}};
  extra["artifacts"] = {"scatter.json", "power.csv"};
  return res;
}

inline CommandResult cmd_nonrecip(const RunSpec& s, const fs::path& out, json& extra) {
  CommandResult res;
  const NonreciprocityReport rep =
      nonreciprocity(s.profile, s.geometry(), s.wave.omega_0, s.wave.theta_deg, s.solver);
  for (const auto& w : rep.forward.warnings) res.warnings.push_back("forward: " + w);
  for (const auto& w : rep.backward.warnings) res.warnings.push_back("backward: " + w);
  json j;
  j["config"] = config::to_json(s);
  j["theta_forward"] = rep.theta;
  j["theta_backward"] = 180.0 - rep.theta;
  j["truncation"] = rep.truncation;
  j["T_forward"] = rep.t_forward;
  j["T_backward"] = rep.t_backward;
  j["R_forward"] = rep.r_forward;
  j["R_backward"] = rep.r_backward;
  j["A_forward"] = rep.a_forward;
  j["A_backward"] = rep.a_backward;
  j["contrast"] = rep.contrast;
  j["forward"] = scattering_json(rep.forward);
  j["backward"] = scattering_json(rep.backward);
  write_json(out / "nonrecip.json", j);
  output::write_atomic(out / "power_forward.csv", power_table(rep.forward));
  output::write_atomic(out / "power_backward.csv", power_table(rep.backward));
  output::write_atomic(
      out / "absorption.svg",
      output::svg_bars({{"A forward", rep.a_forward, "#d62728"},
                        {"A backward", rep.a_backward, "#1f77b4"},
                        {"T forward", rep.t_forward, "#ff9896"},
                        {"T backward", rep.t_backward, "#aec7e8"}},
                       "theta = " + output::num(rep.theta) + " deg vs " +
                           output::num(180.0 - rep.theta) + " deg",
                       "fraction of incident power"));
  res.metrics = {{"t_forward", rep.t_forward},   {"t_backward", rep.t_backward},
                 {"a_forward", rep.a_forward},   {"a_backward", rep.a_backward},
                 {"contrast", rep.contrast},     {"truncation", rep.truncation}};
  extra["artifacts"] = {"nonrecip.json", "power_forward.csv", "power_backward.csv",
                        "absorption.svg"};
  return res;
}

// ---------------------------------------------------------------------------
// fdtd

inline fdtd::SimConfig fdtd_config(const RunSpec& s) {
  fdtd::SimConfig c = s.fdtd;
  c.source.omega_0 = s.wave.omega_0;
  c.source.theta_deg = s.wave.theta_deg;
  c.source.amplitude = s.wave.amplitude;
  return c;
}

inline std::string probes_csv(const fdtd::FieldRecord& r) {
  std::vector<std::string> header{"step", "time"};
  for (const auto& p : r.probes) {
    if (p.kind == fdtd::ProbeKind::Point) {
      for (const char* c : {"_e_re", "_e_im", "_h_re", "_h_im"}) header.push_back(p.name + c);
    } else {
      header.push_back(p.name + "_flux");
    }
  }
  output::Csv csv(header);
  for (long j = 0; j < r.steps; ++j) {
    std::vector<std::string> row{std::to_string(j + 1), output::num((j + 1) * r.dt)};
    for (const auto& p : r.probes) {
      if (p.kind == fdtd::ProbeKind::Point) {
        row.push_back(output::num(p.e[j].real()));
        row.push_back(output::num(p.e[j].imag()));
        row.push_back(output::num(p.h[j].real()));
        row.push_back(output::num(p.h[j].imag()));
      } else {
        row.push_back(output::num(p.flux[j]));
      }
    }
    csv.row(row);
  }
  return csv.str();
}

inline CommandResult cmd_fdtd(const RunSpec& s, const fs::path& out, json& extra) {
  CommandResult res;
  const fdtd::SimConfig cfg = fdtd_config(s);
  const SlabGeometry g = s.geometry();
  const ModulationProfile& p = s.profile;
  const int report = std::max(2, cfg.max_harmonic);

  fdtd::SimState state = fdtd::build_sim(p, g, cfg, true);
  fdtd::FieldRecord slab = fdtd::run(state);
  res.warnings = slab.warnings;
  std::optional<fdtd::FieldRecord> ref;
  if (s.fdtd_reference && slab.steps > 0) {
    fdtd::SimState rs = fdtd::build_sim(p, g, cfg, false);
    ref = fdtd::run(rs);
    for (const auto& w : ref->warnings) res.warnings.push_back("reference: " + w);
  }

  output::write_atomic(out / "probes.csv", probes_csv(slab));

  json j;
  j["grid"] = {{"nx", state.nx + 1}, {"nz", state.nze}, {"dx", state.dx}, {"dz", state.dz},
               {"dt", state.dt}, {"steps", slab.steps},
               {"steps_per_period", fdtd::steps_per_period(state)},
               {"periodic_z", state.periodic_z}};
  j["max_abs_e"] = slab.max_abs_e;

  std::vector<int> harmonics;
  std::vector<double> freqs;
  for (int n = -report; n <= report; ++n) {
    const double w = s.wave.omega_0 + n * p.omega_s;
    if (w <= 0.0) continue;
    harmonics.push_back(n);
    freqs.push_back(w);
  }
  if (slab.steps > 0) {
    output::Csv spec({"probe", "harmonic_n", "omega", "e_re", "e_im", "e_abs", "h_re", "h_im"});
    for (const auto& pr : slab.probes) {
      if (pr.kind != fdtd::ProbeKind::Point) continue;
      const auto e = fdtd::spectrum(slab, pr.name, freqs);
      const auto hz = fdtd::spectrum_h(slab, pr.name, freqs);
      for (std::size_t k = 0; k < freqs.size(); ++k) {
        spec.row({pr.name, std::to_string(harmonics[k]), output::num(freqs[k]),
                  output::num(e[k].real()), output::num(e[k].imag()), output::num(std::abs(e[k])),
                  output::num(hz[k].real()), output::num(hz[k].imag())});
      }
    }
    output::write_atomic(out / "spectrum.csv", spec.str());

    output::Csv fl({"plane", "x_wavelengths", "flux", "flux_reference"});
    double p_inc = std::numeric_limits<double>::quiet_NaN();
    if (ref) p_inc = fdtd::flux(*ref, "transmission");
    for (const auto& pr : slab.probes) {
      if (pr.kind != fdtd::ProbeKind::Plane) continue;
      const double f = fdtd::flux(slab, pr.name);
      const double fr = ref ? fdtd::flux(*ref, pr.name) : std::numeric_limits<double>::quiet_NaN();
      fl.row({pr.name, output::num(pr.x), output::num(f), output::num(fr)});
    }
    output::write_atomic(out / "flux.csv", fl.str());
    if (ref) {
      const double r = -fdtd::flux(slab, "reflection") / p_inc;
      const double t = fdtd::flux(slab, "transmission") / p_inc;
      j["p_inc"] = p_inc;
      j["reflected"] = r;
      j["transmitted"] = t;
      j["absorption"] = 1.0 - r - t;
      res.metrics = {{"reflected", r}, {"transmitted", t}, {"absorption", 1.0 - r - t},
                     {"max_abs_e", slab.max_abs_e}};
    } else {
      res.metrics = {{"reflected", std::numeric_limits<double>::quiet_NaN()},
                     {"transmitted", std::numeric_limits<double>::quiet_NaN()},
                     {"absorption", std::numeric_limits<double>::quiet_NaN()},
                     {"max_abs_e", slab.max_abs_e}};
    }
  } else {
    res.metrics = {{"reflected", std::numeric_limits<double>::quiet_NaN()},
                   {"transmitted", std::numeric_limits<double>::quiet_NaN()},
                   {"absorption", std::numeric_limits<double>::quiet_NaN()},
                   {"max_abs_e", 0.0}};
  }
  for (auto& [k, v] : res.metrics) j["metrics"][k] = jnum(v);

  output::PgmMapping map{2.0 * std::max(std::abs(s.wave.amplitude), 1e-300)};
  json frames = json::array();
  for (std::size_t k = 0; k < slab.frames.size(); ++k) {
    const auto& f = slab.frames[k];
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.pgm", k);
    output::write_atomic(out / "frames" / name, output::pgm16(f.values, f.rows, f.cols, map));
    frames.push_back({{"file", std::string("frames/") + name}, {"step", f.step}, {"time", f.time}});
  }
  j["frames"] = frames;
  j["pgm_mapping"] = {{"format", "P5 16-bit big-endian, rows = x nodes, columns = z nodes"},
                      {"quantity", "Re(E_y)"},
                      {"rule", "level = round(32767.5 + 32767.5 * clamp(value / scale, -1, 1))"},
                      {"scale", map.scale}};
  write_json(out / "fdtd.json", j);
  extra["grid"] = j["grid"];
  extra["pgm_mapping"] = j["pgm_mapping"];
  extra["artifacts"] = {"probes.csv", "spectrum.csv", "flux.csv", "fdtd.json", "frames/"};
  return res;
}

inline std::vector<std::string> metric_names(Command c) {
  switch (c) {
    case Command::Band: return {"gap_width", "forward_min_gap", "backward_min_gap"};
    case Command::Isofreq: return {"rows"};
    case Command::Scatter: return {"reflected", "transmitted", "absorption", "truncation", "condition"};
    case Command::Nonrecip:
      return {"t_forward", "t_backward", "a_forward", "a_backward", "contrast", "truncation"};
    case Command::Fdtd: return {"reflected", "transmitted", "absorption", "max_abs_e"};
    case Command::Sweep: return {};
  }
  return {};
}

inline json base_manifest(const RunSpec& s, const RunOptions& opt) {
  json m;
  m["tool"] = "stm-sim";
  m["version"] = kToolVersion;
  m["command"] = to_string(s.command);
  m["config"] = config::to_json(s);
  m["profile_preset"] = profile_preset(s);
  m["seed"] = opt.seed ? json(*opt.seed) : json(nullptr);
  return m;
}

}  // namespace detail

CommandResult run_spec(const RunSpec& s, const RunOptions& opt);

namespace detail {

inline CommandResult cmd_sweep(const RunSpec& s, const RunOptions& opt, json& extra) {
  CommandResult res;
  const std::vector<RunSpec> children = expand_sweep(s);
  const std::vector<double> values = sweep_values(s);
  const Command child_cmd = children.front().command;
  std::vector<CommandResult> results(children.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < children.size(); i = next++) {
      char name[32];
      std::snprintf(name, sizeof name, "child_%03zu", i);
      RunOptions co = opt;
      co.out = opt.out / name;
      co.jobs = 1;
      results[i] = run_spec(children[i], co);
    }
  };
  const int jobs = std::max(1, std::min<int>(opt.jobs, static_cast<int>(children.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<std::string> header{"index", "parameter", "value", "status"};
  const auto names = metric_names(child_cmd);
  for (const auto& n : names) header.push_back(n);
  output::Csv csv(header);
  int worst = kExitOk;
  for (std::size_t i = 0; i < children.size(); ++i) {
    const CommandResult& r = results[i];
    worst = std::max(worst, r.exit_code);
    std::vector<std::string> row{std::to_string(i), s.sweep.parameter, output::num(values[i]),
                                 r.exit_code == kExitOk ? "ok" : "error(" + std::to_string(r.exit_code) + ")"};
    for (const auto& n : names) {
      std::string cell = "nan";
      for (const auto& [k, v] : r.metrics) {
        if (k == n) cell = output::num(v);
      }
      row.push_back(cell);
    }
    csv.row(row);
    for (const auto& w : r.warnings) res.warnings.push_back("child " + std::to_string(i) + ": " + w);
    if (r.exit_code != kExitOk) {
      res.warnings.push_back("child " + std::to_string(i) + " failed: " + r.error);
    }
  }
  output::write_atomic(opt.out / "sweep.csv", csv.str());
  res.exit_code = worst;
  if (worst != kExitOk) res.error = "one or more sweep children failed";
  extra["children"] = children.size();
  extra["artifacts"] = {"sweep.csv", "child_NNN/"};
  return res;
}

}  // namespace detail

/// Run one resolved spec into opt.out, writing resolved.cfg and manifest.json
/// whatever the outcome.
inline CommandResult run_spec(const RunSpec& s, const RunOptions& opt) {
  CommandResult res;
  json extra = json::object();
  try {
    fs::create_directories(opt.out);
    output::write_atomic(opt.out / "resolved.cfg", config::to_text(s));
    switch (s.command) {
      case Command::Band: res = detail::cmd_band(s, opt.out, extra); break;
      case Command::Isofreq: res = detail::cmd_isofreq(s, opt.out, extra); break;
      case Command::Scatter: res = detail::cmd_scatter(s, opt.out, extra); break;
      case Command::Nonrecip: res = detail::cmd_nonrecip(s, opt.out, extra); break;
      case Command::Fdtd: res = detail::cmd_fdtd(s, opt.out, extra); break;
      case Command::Sweep: res = detail::cmd_sweep(s, opt, extra); break;
    }
  } catch (const ConfigError& e) {
    res.exit_code = kExitConfig;
    res.error = e.what();
  } catch (const ValidationError& e) {
    res.exit_code = kExitConfig;
    res.error = e.what();
  } catch (const SolverError& e) {
    res.exit_code = kExitSolver;
    res.error = e.what();
    if (std::isfinite(e.condition())) extra["condition"] = e.condition();
  } catch (const std::exception& e) {
    res.exit_code = kExitSolver;
    res.error = e.what();
  }
  {
    std::vector<std::string> merged;
    if (s.command != Command::Sweep) merged = classify_regime(s.profile).warnings;
    for (auto& w : res.warnings) {
      if (std::find(merged.begin(), merged.end(), w) == merged.end()) merged.push_back(w);
    }
    res.warnings = std::move(merged);
  }
  json m = detail::base_manifest(s, opt);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  m["status"] = res.exit_code == kExitOk ? "ok" : "error";
  m["exit_code"] = res.exit_code;
  if (!res.error.empty()) m["error"] = res.error;
  m["warnings"] = res.warnings;
  json metrics = json::object();
  for (const auto& [k, v] : res.metrics) metrics[k] = detail::jnum(v);
  m["metrics"] = metrics;
  try {
    detail::write_json(opt.out / "manifest.json", m);
  } catch (const std::exception& e) {
    if (res.exit_code == kExitOk) {
      res.exit_code = kExitSolver;
      res.error = std::string("cannot write manifest: ") + e.what();
    }
  }
  return res;
}

}  // namespace stmsim
