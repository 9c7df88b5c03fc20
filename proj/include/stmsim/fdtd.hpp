#pragma once

// 2-D TE (E_y, H_x, H_z) finite-difference time-domain solver for a slab
// whose eps and mu follow the traveling-wave modulation. Fields are complex:
// the update is real-linear, so the real and imaginary parts are two
// independent physical runs, which lets the source be a clean e^{-i omega t}
// tone and allows Bloch-periodic boundaries along z.
//
// Layout (x normal to the slab, z along the modulation):
//   E_y, D_y at (i dx, k dz)           integer times
//   H_x, B_x at (i dx, (k+1/2) dz)     half-integer times
//   H_z, B_z at ((i+1/2) dx, k dz)     half-integer times
// D and B are advanced by the curl equations; E = D / eps(z, t) and
// H = B / mu(z, t) use the material at the node's own position and time.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "stmsim/error.hpp"
#include "stmsim/medium.hpp"

namespace stmsim {

namespace fdtd {

using cplx = std::complex<double>;

enum class SourceKind {
  PlaneWave,     // Bloch-periodic z boundary over one modulation period
  GaussianBeam,  // finite beam, absorbing z boundaries
};

inline const char* to_string(SourceKind k) noexcept {
  return k == SourceKind::PlaneWave ? "plane" : "beam";
}

struct SourceConfig {
  SourceKind kind = SourceKind::PlaneWave;
  double omega_0 = 1.0;
  double theta_deg = 55.0;
  double amplitude = 1.0;
  double waist = 3.0;          // free-space wavelengths (beam only)
  double center_z = 0.5;       // beam axis crossing, fraction of domain z (beam only)
  double ramp_cycles = 5.0;    // raised-cosine turn-on, cycles of omega_0
  double total_cycles = 80.0;  // cycles of omega_0
  double x = -0.5;             // injection line, wavelengths from the slab's left face
};

enum class ProbeKind { Point, Plane };

/// Probe positions are in free-space wavelengths of omega_0; x = 0 is the
/// slab's left face and z is measured from the start of the domain.
struct ProbeSpec {
  std::string name;
  ProbeKind kind = ProbeKind::Point;
  double x = 0.0;
  double z = 0.0;  // point probes only
};

struct SimConfig {
  int cells_per_wavelength = 40;  // at the shortest retained harmonic wavelength
  double courant = 0.5;           // fraction of the 2-D stability limit
  double domain_x = 0.0;          // wavelengths, excluding PML; 0 => thickness + 2
  double domain_z = 20.0;         // wavelengths, beam mode only
  int pml_cells = 10;
  int pml_order = 3;
  int max_harmonic = 1;           // resolution covers |n| <= max_harmonic
  SourceConfig source;
  std::vector<ProbeSpec> probes;  // empty => default reflection/transmission probes
  int frame_stride = 0;           // steps between snapshots; 0 => period / 20
  int max_frames = 40;            // most recent frames kept
  double window_periods = 16.0;   // steady-state analysis window, modulation periods
};

inline constexpr double kMinWindowPeriods = 8.0;

/// Snapshot of Re(E_y) on the primary grid, row-major in x (rows) by z.
struct Frame {
  long step = 0;
  double time = 0.0;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;
};

struct ProbeSeries {
  std::string name;
  ProbeKind kind = ProbeKind::Point;
  double x = 0.0;
  double z = 0.0;
  // point probes: E_y at t = (j+1) dt and H_z (averaged over the two
  // neighbouring half cells) at t = (j+1/2) dt
  std::vector<cplx> e;
  std::vector<cplx> h;
  // plane probes: 1/2 Re(E_y H_z^*) at t = j dt, averaged over z in plane-wave
  // mode (power per unit area) and integrated over z in beam mode
  std::vector<double> flux;
};

struct FieldRecord {
  double dt = 0.0;
  double omega_0 = 1.0;
  double omega_s = 1.0;
  double ramp_time = 0.0;
  double window_periods = 16.0;
  long steps = 0;
  std::vector<ProbeSeries> probes;
  std::vector<Frame> frames;
  double max_abs_e = 0.0;
  std::vector<std::string> warnings;

  const ProbeSeries& probe(const std::string& name) const {
    for (const auto& p : probes) {
      if (p.name == name) return p;
    }
    throw ValidationError("no probe named '" + name + "'");
  }
};

struct SimState {
  ModulationProfile profile;
  SlabGeometry geometry;
  SimConfig config;
  bool slab_present = true;

  // grid
  int nx = 0;  // E nodes i = 0..nx (PEC at both ends)
  int nz = 0;  // E nodes k = 0..nz-1 (periodic) or 0..nz (beam, PEC ends)
  int nze = 0; // E nodes stored per column
  double dx = 0.0, dz = 0.0, dt = 0.0;
  double lambda_0 = 0.0;
  double x_origin = 0.0;  // x coordinate of node i = 0 (slab left face at x = 0)
  double period_z = 0.0;
  cplx bloch_phase = 1.0; // E(z + nz dz) = bloch_phase E(z) in plane-wave mode
  bool periodic_z = true;

  // fields
  std::vector<cplx> dy, ey;  // (nx+1) x nze
  std::vector<cplx> bx, hx;  // (nx+1) x nzh
  std::vector<cplx> bz, hz;  // nx x nze
  int nzh = 0;               // H_x nodes per column

  // slab fill fractions of the dual cells around each node
  std::vector<double> fill_e;   // per E column i
  std::vector<double> fill_hz;  // per H_z column i+1/2

  // current slab material along z at E/H_z z-positions (k) and H_x (k+1/2)
  std::vector<double> eps_slab, mu_slab_k, mu_slab_kh;

  // CPML
  std::vector<double> bcoef_e_x, ccoef_e_x;   // at E columns
  std::vector<double> bcoef_h_x, ccoef_h_x;   // at H_z columns
  std::vector<double> bcoef_e_z, ccoef_e_z;   // at E rows (beam)
  std::vector<double> bcoef_h_z, ccoef_h_z;   // at H_x rows (beam)
  std::vector<cplx> psi_dy_x, psi_bz_x, psi_dy_z, psi_bx_z;

  // source
  int source_i = 0;
  double kx_numeric = 0.0;
  double source_admittance = 0.0;
  double k_z0 = 0.0;
  std::vector<cplx> source_profile;  // z dependence of E_inc along the line

  // probes resolved to grid indices
  struct ProbeIndex {
    int i = 0;
    int k = 0;
  };
  std::vector<ProbeIndex> probe_index;
  std::vector<std::vector<cplx>> plane_prev_e, plane_prev_h;

  long step_index = 0;
  double time() const noexcept { return step_index * dt; }
  int e_at(int i, int k) const noexcept { return i * nze + k; }
  int hx_at(int i, int k) const noexcept { return i * nzh + k; }
  int hz_at(int i, int k) const noexcept { return i * nze + k; }
};

namespace detail {

inline double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

inline void pml_profile(int cells, int order, double delta, double dt, int n_nodes,
                        double offset, std::vector<double>& b, std::vector<double>& c) {
  // nodes at positions (j + offset) delta, j = 0..n_nodes-1; PML spans the
  // first and last `cells` cells
  b.assign(n_nodes, 1.0);
  c.assign(n_nodes, 0.0);
  const double thickness = cells * delta;
  const double sigma_max = 0.8 * (order + 1) / delta;
  const double outer = (n_nodes - 1 + (offset > 0 ? 1 : 0)) * delta;  // domain length
  for (int j = 0; j < n_nodes; ++j) {
    const double pos = (j + offset) * delta;
    double depth = 0.0;
    if (pos < thickness) depth = thickness - pos;
    if (pos > outer - thickness) depth = pos - (outer - thickness);
    if (depth <= 0.0) continue;
    const double sigma = sigma_max * std::pow(depth / thickness, order);
    b[j] = std::exp(-sigma * dt);
    c[j] = b[j] - 1.0;
  }
}

inline double ramp(double t, double t_ramp) {
  if (t <= 0.0) return 0.0;
  if (t >= t_ramp) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * t / t_ramp));
}

}  // namespace detail

/// Default probes: reflection plane behind the injection line, transmission
/// plane and point probe half a wavelength past the slab.
inline std::vector<ProbeSpec> default_probes(const SlabGeometry& g, const SimConfig& c) {
  const double lambda = 2.0 * std::numbers::pi / c.source.omega_0;
  const double d = g.thickness / lambda;
  const double zc = c.source.kind == SourceKind::GaussianBeam ? c.domain_z * c.source.center_z : 0.0;
  return {
      {"reflection", ProbeKind::Plane, c.source.x - 0.25, 0.0},
      {"transmission", ProbeKind::Plane, d + 0.5, 0.0},
      {"transmitted_point", ProbeKind::Point, d + 0.5, zc},
      {"incident_point", ProbeKind::Point, -0.25, zc},
  };
}

inline void validate(const SimConfig& c) {
  using stmsim::detail::fmt_value;
  using stmsim::detail::require;
  require(c.cells_per_wavelength >= 20,
          "cells_per_wavelength must be >= 20 (got " + std::to_string(c.cells_per_wavelength) + ")");
  require(c.courant > 0.0 && c.courant <= 1.0,
          "courant must lie in (0, 1] (got " + fmt_value(c.courant) + ")");
  require(c.pml_cells >= 1, "pml_cells must be >= 1");
  require(c.pml_order >= 1, "pml_order must be >= 1");
  require(c.max_harmonic >= 0, "max_harmonic must be >= 0");
  require(c.source.omega_0 > 0.0, "source omega_0 must be > 0");
  require(c.source.theta_deg > 0.0 && c.source.theta_deg < 180.0,
          "source theta must lie in (0, 180) degrees");
  require(c.source.ramp_cycles >= 0.0, "ramp_cycles must be >= 0");
  require(c.source.total_cycles >= 0.0, "total_cycles must be >= 0");
  require(c.source.waist > 0.0, "beam waist must be > 0");
  require(c.window_periods >= kMinWindowPeriods,
          "window_periods must be >= " + fmt_value(kMinWindowPeriods));
  require(c.max_frames >= 0 && c.frame_stride >= 0, "frame settings must be >= 0");
}

/// Allocate and initialize a simulation. With slab_present = false the slab
/// is replaced by the exterior medium (reference run).
inline SimState build_sim(const ModulationProfile& p, const SlabGeometry& g, const SimConfig& cfg,
                          bool slab_present = true) {
  validate(p);
  validate(g);
  validate(cfg);
  SimState s;
  s.profile = p;
  s.geometry = g;
  s.config = cfg;
  s.slab_present = slab_present;
  if (s.config.probes.empty()) s.config.probes = default_probes(g, cfg);
  const SourceConfig& src = s.config.source;

  const double pi = std::numbers::pi;
  s.lambda_0 = 2.0 * pi / src.omega_0;
  const double n_ext = g.exterior_index();
  const double n_hi = std::max(n_ext, p.max_local_index());
  const double n_lo = std::min(n_ext, p.min_local_index());
  double w_max = src.omega_0;
  for (int n = -cfg.max_harmonic; n <= cfg.max_harmonic; ++n) {
    w_max = std::max(w_max, std::abs(src.omega_0 + n * p.omega_s));
  }
  const double lambda_min = 2.0 * pi / (w_max * n_hi);
  const double delta = lambda_min / cfg.cells_per_wavelength;

  const double theta = src.theta_deg * pi / 180.0;
  s.k_z0 = src.omega_0 * n_ext * std::cos(theta);

  // z extent
  s.periodic_z = src.kind == SourceKind::PlaneWave;
  if (s.periodic_z) {
    s.period_z = p.kappa_s > 0.0 ? 2.0 * pi / p.kappa_s : s.lambda_0;
    s.nz = std::max(4, static_cast<int>(std::ceil(s.period_z / delta)));
    s.dz = s.period_z / s.nz;
    s.nze = s.nz;
    s.nzh = s.nz;
    s.bloch_phase = std::polar(1.0, s.k_z0 * s.period_z);
  } else {
    const double lz = cfg.domain_z * s.lambda_0;
    stmsim::detail::require(cfg.domain_z > 0.0, "domain_z must be > 0");
    s.nz = static_cast<int>(std::ceil(lz / delta)) + 2 * cfg.pml_cells;
    s.dz = delta;
    s.nze = s.nz + 1;
    s.nzh = s.nz;
  }

  // x extent: physical domain centered on the slab plus PML on both sides
  const double d = g.thickness;
  const double lx = cfg.domain_x > 0.0 ? cfg.domain_x * s.lambda_0 : d + 2.0 * s.lambda_0;
  stmsim::detail::require(lx > d, "domain_x must exceed the slab thickness");
  const int nphys = static_cast<int>(std::ceil(lx / delta));
  s.dx = delta;
  s.nx = nphys + 2 * cfg.pml_cells;
  const double x_phys0 = 0.5 * (d - nphys * delta);  // left edge of the physical region
  s.x_origin = x_phys0 - cfg.pml_cells * delta;

  auto x_of = [&](double i) { return s.x_origin + i * s.dx; };
  auto index_of = [&](double x_lambda, const char* what) {
    const double x = x_lambda * s.lambda_0;
    const int i = static_cast<int>(std::lround((x - s.x_origin) / s.dx));
    if (i <= cfg.pml_cells || i >= s.nx - cfg.pml_cells) {
      throw ValidationError(std::string(what) + " at x = " + stmsim::detail::fmt_value(x_lambda) +
                            " wavelengths lies outside the physical domain");
    }
    return i;
  };

  // stability: fastest local wave speed
  const double v_max = 1.0 / n_lo;
  s.dt = cfg.courant / (v_max * std::sqrt(1.0 / (s.dx * s.dx) + 1.0 / (s.dz * s.dz)));

  const std::size_t ne = static_cast<std::size_t>(s.nx + 1) * s.nze;
  const std::size_t nhx = static_cast<std::size_t>(s.nx + 1) * s.nzh;
  const std::size_t nhz = static_cast<std::size_t>(s.nx) * s.nze;
  s.dy.assign(ne, 0.0);
  s.ey.assign(ne, 0.0);
  s.bx.assign(nhx, 0.0);
  s.hx.assign(nhx, 0.0);
  s.bz.assign(nhz, 0.0);
  s.hz.assign(nhz, 0.0);
  s.psi_dy_x.assign(ne, 0.0);
  s.psi_bz_x.assign(nhz, 0.0);
  if (!s.periodic_z) {
    s.psi_dy_z.assign(ne, 0.0);
    s.psi_bx_z.assign(nhx, 0.0);
  }

  // fill fractions of the dual cells
  s.fill_e.assign(s.nx + 1, 0.0);
  s.fill_hz.assign(s.nx, 0.0);
  if (slab_present) {
    for (int i = 0; i <= s.nx; ++i) {
      s.fill_e[i] = detail::overlap(x_of(i - 0.5), x_of(i + 0.5), 0.0, d) / s.dx;
    }
    for (int i = 0; i < s.nx; ++i) {
      s.fill_hz[i] = detail::overlap(x_of(i), x_of(i + 1.0), 0.0, d) / s.dx;
    }
  }
  s.eps_slab.assign(s.nze, p.eps_avg);
  s.mu_slab_k.assign(s.nze, p.mu_avg);
  s.mu_slab_kh.assign(s.nzh, p.mu_avg);

  // CPML
  detail::pml_profile(cfg.pml_cells, cfg.pml_order, s.dx, s.dt, s.nx + 1, 0.0, s.bcoef_e_x,
                      s.ccoef_e_x);
  detail::pml_profile(cfg.pml_cells, cfg.pml_order, s.dx, s.dt, s.nx, 0.5, s.bcoef_h_x,
                      s.ccoef_h_x);
  if (!s.periodic_z) {
    detail::pml_profile(cfg.pml_cells, cfg.pml_order, s.dz, s.dt, s.nze, 0.0, s.bcoef_e_z,
                        s.ccoef_e_z);
    detail::pml_profile(cfg.pml_cells, cfg.pml_order, s.dz, s.dt, s.nzh, 0.5, s.bcoef_h_z,
                        s.ccoef_h_z);
  }

  // source line and its numerically consistent normal wavenumber
  s.source_i = index_of(src.x, "source line");
  if (x_of(s.source_i) >= 0.0 && slab_present) {
    throw ValidationError("source line must lie in front of the slab (x < 0)");
  }
  {
    const double w = src.omega_0;
    const double lhs = std::pow(std::sin(w * s.dt / 2.0) / s.dt, 2) * g.exterior_eps * g.exterior_mu;
    const double kz_term = std::pow(std::sin(s.k_z0 * s.dz / 2.0) / s.dz, 2);
    const double arg = std::sqrt(std::max(lhs - kz_term, 0.0)) * s.dx;
    if (!(arg < 1.0)) throw ValidationError("source angle not resolvable on this grid");
    s.kx_numeric = 2.0 / s.dx * std::asin(arg);
    s.source_admittance = (std::sin(s.kx_numeric * s.dx / 2.0) / s.dx) /
                          (std::sin(w * s.dt / 2.0) / s.dt) / g.exterior_mu;
  }
  s.source_profile.assign(s.nze, 0.0);
  const double waist_z = src.waist * s.lambda_0 / std::max(std::sin(theta), 1e-12);
  const double z_center = cfg.domain_z * s.lambda_0 * src.center_z + cfg.pml_cells * s.dz;
  for (int k = 0; k < s.nze; ++k) {
    const double z = k * s.dz;
    cplx v = src.amplitude * std::polar(1.0, s.k_z0 * z);
    if (!s.periodic_z) v *= std::exp(-std::pow((z - z_center) / waist_z, 2));
    s.source_profile[k] = v;
  }

  // probes
  for (const ProbeSpec& pr : s.config.probes) {
    SimState::ProbeIndex idx;
    idx.i = index_of(pr.x, ("probe '" + pr.name + "'").c_str());
    if (idx.i >= s.nx) idx.i = s.nx - 1;
    if (pr.kind == ProbeKind::Point) {
      double z = pr.z * s.lambda_0;
      if (!s.periodic_z) z += cfg.pml_cells * s.dz;
      idx.k = static_cast<int>(std::lround(z / s.dz));
      if (s.periodic_z) idx.k = ((idx.k % s.nz) + s.nz) % s.nz;
      if (idx.k < 0 || idx.k >= s.nze) {
        throw ValidationError("probe '" + pr.name + "' lies outside the z domain");
      }
    }
    s.probe_index.push_back(idx);
  }
  s.plane_prev_e.assign(s.config.probes.size(), {});
  s.plane_prev_h.assign(s.config.probes.size(), {});
  return s;
}

namespace detail {

/// Slab material along z for the coming step: 1/eps at E rows for t_e,
/// mu at H_z rows and 1/mu at H_x rows for t_h.
inline void update_slab_material(SimState& s, double t_e, double t_h) {
  const ModulationProfile& p = s.profile;
  for (int k = 0; k < s.nze; ++k) {
    const double z = k * s.dz;
    s.eps_slab[k] = sample_material(p, z, t_e).eps;
    s.mu_slab_k[k] = sample_material(p, z, t_h).mu;
  }
  for (int k = 0; k < s.nzh; ++k) {
    s.mu_slab_kh[k] = sample_material(p, (k + 0.5) * s.dz, t_h).mu;
  }
}

inline cplx incident_e(const SimState& s, int k, double x, double t) {
  const double w = s.config.source.omega_0;
  const double t_ramp = s.config.source.ramp_cycles * 2.0 * std::numbers::pi / w;
  const double r = ramp(t, t_ramp);
  if (r == 0.0) return 0.0;
  return r * s.source_profile[k] * std::polar(1.0, s.kx_numeric * x - w * t);
}

}  // namespace detail

/// Advance all fields by one time step.
inline void step(SimState& s) {
  const int nx = s.nx, nze = s.nze, nzh = s.nzh;
  const double dt = s.dt;
  const double cdx = dt / s.dx, cdz = dt / s.dz;
  const double t_e = s.time();        // time of the current E
  const double t_h = t_e + 0.5 * dt;  // time of the H being computed
  const double t_next = t_e + dt;
  const double eps_ext = s.geometry.exterior_eps;
  const double mu_ext = s.geometry.exterior_mu;
  const int is = s.source_i;
  const bool periodic = s.periodic_z;

  // H material at t_h, E material at t_next
  detail::update_slab_material(s, t_next, t_h);
  std::vector<double> inv_eps_in(nze), inv_mu_k_in(nze), inv_mu_kh_in(nzh);
  for (int k = 0; k < nze; ++k) {
    inv_eps_in[k] = 1.0 / s.eps_slab[k];
    inv_mu_k_in[k] = 1.0 / s.mu_slab_k[k];
  }
  for (int k = 0; k < nzh; ++k) inv_mu_kh_in[k] = 1.0 / s.mu_slab_kh[k];

  cplx* ey = s.ey.data();
  cplx* dy = s.dy.data();
  cplx* bx = s.bx.data();
  cplx* hx = s.hx.data();
  cplx* bz = s.bz.data();
  cplx* hz = s.hz.data();

  // --- B_x (i, k+1/2): dB_x/dt = dE_y/dz
  for (int i = 1; i < nx; ++i) {
    const double f = s.fill_e[i];
    const cplx* e = ey + static_cast<std::ptrdiff_t>(i) * nze;
    cplx* b = bx + static_cast<std::ptrdiff_t>(i) * nzh;
    cplx* h = hx + static_cast<std::ptrdiff_t>(i) * nzh;
    const int k_end = periodic ? nzh - 1 : nzh;
    if (periodic) {
      for (int k = 0; k < k_end; ++k) b[k] += cdz * (e[k + 1] - e[k]);
      b[nzh - 1] += cdz * (e[0] * s.bloch_phase - e[nzh - 1]);
    } else {
      cplx* psi = s.psi_bx_z.data() + static_cast<std::ptrdiff_t>(i) * nzh;
      for (int k = 0; k < nzh; ++k) {
        const cplx de = e[k + 1] - e[k];
        psi[k] = s.bcoef_h_z[k] * psi[k] + s.ccoef_h_z[k] * de;
        b[k] += cdz * de + dt * psi[k] / s.dz;
      }
    }
    // H_x is normal to the slab faces: harmonic mean of mu
    if (f <= 0.0) {
      const double inv = 1.0 / mu_ext;
      for (int k = 0; k < nzh; ++k) h[k] = b[k] * inv;
    } else if (f >= 1.0) {
      for (int k = 0; k < nzh; ++k) h[k] = b[k] * inv_mu_kh_in[k];
    } else {
      for (int k = 0; k < nzh; ++k) h[k] = b[k] * (f * inv_mu_kh_in[k] + (1.0 - f) / mu_ext);
    }
  }

  // --- B_z (i+1/2, k): dB_z/dt = -dE_y/dx
  for (int i = 0; i < nx; ++i) {
    const double f = s.fill_hz[i];
    const cplx* e0 = ey + static_cast<std::ptrdiff_t>(i) * nze;
    const cplx* e1 = e0 + nze;
    cplx* b = bz + static_cast<std::ptrdiff_t>(i) * nze;
    cplx* h = hz + static_cast<std::ptrdiff_t>(i) * nze;
    const double cb = s.ccoef_h_x[i];
    if (cb != 0.0) {
      const double bb = s.bcoef_h_x[i];
      cplx* psi = s.psi_bz_x.data() + static_cast<std::ptrdiff_t>(i) * nze;
      for (int k = 0; k < nze; ++k) {
        const cplx de = e1[k] - e0[k];
        psi[k] = bb * psi[k] + cb * de;
        b[k] -= cdx * (de + psi[k]);
      }
    } else {
      for (int k = 0; k < nze; ++k) b[k] -= cdx * (e1[k] - e0[k]);
    }
    if (i == is - 1) {
      // TF/SF: B_z just behind the line is scattered field; remove the
      // incident part carried in by the total E_y at the line
      for (int k = 0; k < nze; ++k) b[k] += cdx * detail::incident_e(s, k, 0.0, t_e);
    }
    // H_z is tangential to the slab faces: arithmetic mean of mu
    if (f <= 0.0) {
      const double inv = 1.0 / mu_ext;
      for (int k = 0; k < nze; ++k) h[k] = b[k] * inv;
    } else if (f >= 1.0) {
      for (int k = 0; k < nze; ++k) h[k] = b[k] * inv_mu_k_in[k];
    } else {
      for (int k = 0; k < nze; ++k) h[k] = b[k] / (f * s.mu_slab_k[k] + (1.0 - f) * mu_ext);
    }
  }

  // --- D_y (i, k): dD_y/dt = dH_x/dz - dH_z/dx
  const int k_lo = periodic ? 0 : 1;
  const int k_hi = periodic ? nze : nze - 1;
  for (int i = 1; i < nx; ++i) {
    const double f = s.fill_e[i];
    const cplx* hxc = hx + static_cast<std::ptrdiff_t>(i) * nzh;
    const cplx* hz1 = hz + static_cast<std::ptrdiff_t>(i) * nze;
    const cplx* hz0 = hz1 - nze;
    cplx* d = dy + static_cast<std::ptrdiff_t>(i) * nze;
    cplx* e = ey + static_cast<std::ptrdiff_t>(i) * nze;
    const double cb = s.ccoef_e_x[i];
    const double bb = s.bcoef_e_x[i];
    cplx* psi_x = s.psi_dy_x.data() + static_cast<std::ptrdiff_t>(i) * nze;
    if (periodic) {
      const cplx h_wrap = hxc[nzh - 1] / s.bloch_phase;
      if (cb != 0.0) {
        for (int k = 0; k < nze; ++k) {
          const cplx dhx = hxc[k] - (k > 0 ? hxc[k - 1] : h_wrap);
          const cplx dhz = hz1[k] - hz0[k];
          psi_x[k] = bb * psi_x[k] + cb * dhz;
          d[k] += cdz * dhx - cdx * (dhz + psi_x[k]);
        }
      } else {
        d[0] += cdz * (hxc[0] - h_wrap) - cdx * (hz1[0] - hz0[0]);
        for (int k = 1; k < nze; ++k) d[k] += cdz * (hxc[k] - hxc[k - 1]) - cdx * (hz1[k] - hz0[k]);
      }
    } else {
      cplx* psi_z = s.psi_dy_z.data() + static_cast<std::ptrdiff_t>(i) * nze;
      for (int k = 1; k < nze - 1; ++k) {
        const cplx dhx = hxc[k] - hxc[k - 1];
        const cplx dhz = hz1[k] - hz0[k];
        psi_z[k] = s.bcoef_e_z[k] * psi_z[k] + s.ccoef_e_z[k] * dhx;
        cplx curl_x = dhz;
        if (cb != 0.0) {
          psi_x[k] = bb * psi_x[k] + cb * dhz;
          curl_x += psi_x[k];
        }
        d[k] += cdz * (dhx + psi_z[k]) - cdx * curl_x;
      }
    }
    if (i == is) {
      // TF/SF: the H_z behind the line is scattered; add the incident part
      for (int k = k_lo; k < k_hi; ++k) {
        d[k] += cdx * s.source_admittance * detail::incident_e(s, k, -0.5 * s.dx, t_h);
      }
    }
    if (f <= 0.0) {
      const double inv = 1.0 / eps_ext;
      for (int k = k_lo; k < k_hi; ++k) e[k] = d[k] * inv;
    } else if (f >= 1.0) {
      for (int k = k_lo; k < k_hi; ++k) e[k] = d[k] * inv_eps_in[k];
    } else {
      for (int k = k_lo; k < k_hi; ++k) e[k] = d[k] / (f * s.eps_slab[k] + (1.0 - f) * eps_ext);
    }
  }
  ++s.step_index;
}

namespace detail {

inline cplx hz_at_e_column(const SimState& s, int i, int k) {
  return 0.5 * (s.hz[s.hz_at(i - 1, k)] + s.hz[s.hz_at(i, k)]);
}

inline bool all_finite(const std::vector<cplx>& v, std::size_t& where) {
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!std::isfinite(v[j].real()) || !std::isfinite(v[j].imag())) {
      where = j;
      return false;
    }
  }
  return true;
}

inline Frame capture_frame(const SimState& s) {
  Frame f;
  f.step = s.step_index;
  f.time = s.time();
  f.rows = s.nx + 1;
  f.cols = s.nze;
  f.values.resize(static_cast<std::size_t>(f.rows) * f.cols);
  for (std::size_t j = 0; j < f.values.size(); ++j) f.values[j] = static_cast<float>(s.ey[j].real());
  return f;
}

}  // namespace detail

/// Steps per modulation period.
inline double steps_per_period(const SimState& s) {
  return 2.0 * std::numbers::pi / s.profile.omega_s / s.dt;
}

/// Run ramp plus steady state, recording every probe at every step and
/// snapshots of Re(E_y) at the frame stride.
inline FieldRecord run(SimState& s) {
  const SimConfig& cfg = s.config;
  const double w = cfg.source.omega_0;
  const long total = static_cast<long>(std::ceil(cfg.source.total_cycles * 2.0 * std::numbers::pi / w / s.dt - 1e-9));
  FieldRecord rec;
  rec.dt = s.dt;
  rec.omega_0 = w;
  rec.omega_s = s.profile.omega_s;
  rec.ramp_time = cfg.source.ramp_cycles * 2.0 * std::numbers::pi / w;
  rec.window_periods = cfg.window_periods;
  for (const ProbeSpec& p : cfg.probes) {
    ProbeSeries ps;
    ps.name = p.name;
    ps.kind = p.kind;
    ps.x = p.x;
    ps.z = p.z;
    rec.probes.push_back(ps);
  }
  const int stride = cfg.frame_stride > 0
                         ? cfg.frame_stride
                         : std::max(1, static_cast<int>(steps_per_period(s) / 20.0));
  auto keep_frame = [&](Frame f) {
    if (cfg.max_frames == 0) return;
    if (static_cast<int>(rec.frames.size()) == cfg.max_frames) rec.frames.erase(rec.frames.begin());
    rec.frames.push_back(std::move(f));
  };
  if (total == 0) {
    if (cfg.max_frames > 0) keep_frame(detail::capture_frame(s));
    return rec;
  }

  const double amp = std::abs(cfg.source.amplitude);
  bool gain_warned = false;
  for (long n = 0; n < total; ++n) {
    step(s);
    // probes
    for (std::size_t p = 0; p < rec.probes.size(); ++p) {
      ProbeSeries& ps = rec.probes[p];
      const auto& idx = s.probe_index[p];
      if (ps.kind == ProbeKind::Point) {
        ps.e.push_back(s.ey[s.e_at(idx.i, idx.k)]);
        ps.h.push_back(detail::hz_at_e_column(s, idx.i, idx.k));
      } else {
        auto& pe = s.plane_prev_e[p];
        auto& ph = s.plane_prev_h[p];
        const int k_lo = s.periodic_z ? 0 : 1;
        const int k_hi = s.periodic_z ? s.nze : s.nze - 1;
        std::vector<cplx> h_now(s.nze);
        for (int k = k_lo; k < k_hi; ++k) h_now[k] = detail::hz_at_e_column(s, idx.i, k);
        if (!pe.empty()) {
          // E at t_n paired with H averaged over t_{n-1/2} and t_{n+1/2}
          double acc = 0.0;
          for (int k = k_lo; k < k_hi; ++k) {
            const cplx h = 0.5 * (ph[k] + h_now[k]);
            acc += 0.5 * (pe[k] * std::conj(h)).real();
          }
          ps.flux.push_back(s.periodic_z ? acc / s.nz : acc * s.dz);
        } else {
          ps.flux.push_back(0.0);  // t = 0: fields are zero
        }
        pe.assign(s.nze, 0.0);
        for (int k = k_lo; k < k_hi; ++k) pe[k] = s.ey[s.e_at(idx.i, k)];
        ph = std::move(h_now);
      }
    }
    if ((n + 1) % 16 == 0 || n + 1 == total) {
      std::size_t where = 0;
      if (!detail::all_finite(s.ey, where)) {
        const int i = static_cast<int>(where / s.nze);
        const int k = static_cast<int>(where % s.nze);
        throw SolverError("non-finite E_y detected at step " + std::to_string(s.step_index) +
                          ", grid node (i = " + std::to_string(i) + ", k = " + std::to_string(k) + ")");
      }
      double m = 0.0;
      for (const cplx& v : s.ey) m = std::max(m, std::abs(v));
      rec.max_abs_e = std::max(rec.max_abs_e, m);
      if (!gain_warned && amp > 0.0 && rec.max_abs_e > 10.0 * amp) {
        rec.warnings.push_back("max |E_y| exceeded 10x the source amplitude by step " +
                               std::to_string(s.step_index) + " (parametric gain)");
        gain_warned = true;
      }
    }
    if ((n + 1) % stride == 0) keep_frame(detail::capture_frame(s));
  }
  rec.steps = total;
  return rec;
}

// ---------------------------------------------------------------------------
// Analysis

struct AnalysisWindow {
  long first = 0;  // first sample index
  long count = 0;
};

/// Final window_periods modulation periods after the ramp, or everything
/// after the ramp when shorter. At least 8 periods are required.
inline AnalysisWindow steady_window(const FieldRecord& r, long samples, double t0) {
  const double period = 2.0 * std::numbers::pi / r.omega_s;
  const double t_end = t0 + (samples - 1) * r.dt;
  const double available = t_end - std::max(r.ramp_time, t0);
  const double want = r.window_periods * period;
  const double len = std::min(want, available);
  if (!(len >= kMinWindowPeriods * period - 1e-9 * period)) {
    throw ValidationError("steady-state window holds " + stmsim::detail::fmt_value(len / period) +
                          " modulation periods; at least 8 are required");
  }
  AnalysisWindow w;
  w.count = static_cast<long>(std::floor(len / r.dt)) + 1;
  w.count = std::min(w.count, samples);
  w.first = samples - w.count;
  return w;
}

/// Hann-windowed projection of a series sampled at t_j = t0 + j dt onto
/// e^{-i omega t}; a unit-amplitude tone at omega returns 1.
inline std::vector<cplx> project(const std::vector<cplx>& series, double t0, double dt,
                                 const AnalysisWindow& w, const std::vector<double>& freqs) {
  std::vector<cplx> out(freqs.size());
  double wsum = 0.0;
  std::vector<double> win(w.count);
  for (long j = 0; j < w.count; ++j) {
    const double s = std::sin(std::numbers::pi * (j + 0.5) / w.count);
    win[j] = s * s;
    wsum += win[j];
  }
  for (std::size_t f = 0; f < freqs.size(); ++f) {
    cplx acc = 0.0;
    for (long j = 0; j < w.count; ++j) {
      const long idx = w.first + j;
      const double t = t0 + idx * dt;
      acc += win[j] * series[idx] * std::polar(1.0, freqs[f] * t);
    }
    out[f] = acc / wsum;
  }
  return out;
}

/// Complex E_y amplitudes of a point probe at the analysis frequencies.
inline std::vector<cplx> spectrum(const FieldRecord& r, const std::string& probe,
                                  const std::vector<double>& freqs) {
  const ProbeSeries& ps = r.probe(probe);
  if (ps.kind != ProbeKind::Point) throw ValidationError("spectrum needs a point probe");
  const AnalysisWindow w = steady_window(r, static_cast<long>(ps.e.size()), r.dt);
  return project(ps.e, r.dt, r.dt, w, freqs);
}

/// Complex H_z amplitudes of a point probe at the analysis frequencies.
inline std::vector<cplx> spectrum_h(const FieldRecord& r, const std::string& probe,
                                    const std::vector<double>& freqs) {
  const ProbeSeries& ps = r.probe(probe);
  if (ps.kind != ProbeKind::Point) throw ValidationError("spectrum needs a point probe");
  const AnalysisWindow w = steady_window(r, static_cast<long>(ps.h.size()), 0.5 * r.dt);
  return project(ps.h, 0.5 * r.dt, r.dt, w, freqs);
}

/// Time-averaged normal Poynting flux (+x positive) through a plane probe
/// over the steady-state window, Hann weighted.
inline double flux(const FieldRecord& r, const std::string& plane) {
  const ProbeSeries& ps = r.probe(plane);
  if (ps.kind != ProbeKind::Plane) throw ValidationError("flux needs a plane probe");
  const AnalysisWindow w = steady_window(r, static_cast<long>(ps.flux.size()), 0.0);
  double acc = 0.0, wsum = 0.0;
  for (long j = 0; j < w.count; ++j) {
    const double s = std::sin(std::numbers::pi * (j + 0.5) / w.count);
    acc += s * s * ps.flux[w.first + j];
    wsum += s * s;
  }
  return acc / wsum;
}

/// Slab run plus vacuum reference run, reduced to scattering observables.
struct FdtdScattering {
  double p_inc = 0.0;  // reference flux through the transmission plane
  double reflected = 0.0;
  double transmitted = 0.0;
  double absorption = 0.0;
  std::vector<int> harmonics;
  std::vector<double> frequencies;
  std::vector<cplx> e_transmitted;  // E_y amplitude per harmonic at the transmission probe
  std::vector<double> p_trans;      // per-harmonic flux 1/2 Re(E H^*) / p_inc
  FieldRecord slab;
  FieldRecord reference;
  SimState state;  // final state of the slab run
  std::vector<std::string> warnings;
};

/// Requires the default probe names (reflection, transmission,
/// transmitted_point).
inline FdtdScattering fdtd_scattering(const ModulationProfile& p, const SlabGeometry& g,
                                      const SimConfig& cfg, int report_harmonics = 2) {
  FdtdScattering out;
  SimState ref = build_sim(p, g, cfg, /*slab_present=*/false);
  out.reference = run(ref);
  out.state = build_sim(p, g, cfg, true);
  out.slab = run(out.state);
  out.p_inc = flux(out.reference, "transmission");
  if (!(out.p_inc > 0.0)) throw SolverError("reference run carries no incident flux");
  out.reflected = -flux(out.slab, "reflection") / out.p_inc;
  out.transmitted = flux(out.slab, "transmission") / out.p_inc;
  out.absorption = 1.0 - out.reflected - out.transmitted;
  for (int n = -report_harmonics; n <= report_harmonics; ++n) {
    out.harmonics.push_back(n);
    out.frequencies.push_back(cfg.source.omega_0 + n * p.omega_s);
  }
  out.e_transmitted = spectrum(out.slab, "transmitted_point", out.frequencies);
  const auto h = spectrum_h(out.slab, "transmitted_point", out.frequencies);
  for (std::size_t j = 0; j < out.frequencies.size(); ++j) {
    out.p_trans.push_back(0.5 * (out.e_transmitted[j] * std::conj(h[j])).real() / out.p_inc);
  }
  out.warnings = out.slab.warnings;
  for (auto& w : out.reference.warnings) out.warnings.push_back("reference: " + w);
  return out;
}

}  // namespace fdtd

}  // namespace stmsim
