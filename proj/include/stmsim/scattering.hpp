#pragma once

// Oblique-incidence scattering from a finite space-time-modulated slab
// (0 < x < thickness) by mode matching: the interior field is expanded in
// slab Floquet eigenmodes, the exterior in outgoing plane-wave harmonics, and
// tangential E_y and H_z are matched at both faces.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "stmsim/dispersion.hpp"
#include "stmsim/harmonics.hpp"
#include "stmsim/medium.hpp"

namespace stmsim {

struct LatticeEntry {
  int n = 0;
  double omega = 0.0;   // omega_0 + n omega_s
  double k_z = 0.0;     // k_z0 + n kappa_s
  cplx k_x_exterior;    // outgoing (+x) root of (omega_n^2 eps mu - k_z^2)^(1/2)
  bool propagating = false;
  bool is_static = false;  // omega_n = 0: no time-averaged flux
};

/// Frequency/tangential-momentum ladder shared by the slab interior and the
/// exterior half-spaces.
struct HarmonicLattice {
  double omega_0 = 0.0;
  double k_z0 = 0.0;
  double exterior_eps = 1.0;
  double exterior_mu = 1.0;
  HarmonicIndexSet harmonics;
  std::vector<LatticeEntry> entries;  // entries[harmonics.position(n)]

  const LatticeEntry& at(int n) const { return entries[harmonics.position(n)]; }
  int size() const noexcept { return static_cast<int>(entries.size()); }
};

inline HarmonicLattice harmonic_lattice(const IncidentWave& wave, const ModulationProfile& p,
                                        const SlabGeometry& g, const HarmonicIndexSet& h) {
  validate(wave);
  validate(p);
  validate(g);
  validate(h);
  HarmonicLattice lat;
  lat.omega_0 = wave.omega_0;
  lat.k_z0 = wave.tangential_wavenumber(g);
  lat.exterior_eps = g.exterior_eps;
  lat.exterior_mu = g.exterior_mu;
  lat.harmonics = h;
  const double tol = 1e-9 * wave.omega_0;
  const double n2 = g.exterior_eps * g.exterior_mu;
  for (int i = 0; i < h.size(); ++i) {
    LatticeEntry e;
    e.n = h.harmonic(i);
    e.omega = wave.omega_0 + e.n * p.omega_s;
    e.k_z = lat.k_z0 + e.n * p.kappa_s;
    e.is_static = is_static_frequency(e.omega, p.omega_s);
    const double kx2 = e.omega * e.omega * n2 - e.k_z * e.k_z;
    if (kx2 > 0.0 && !e.is_static) {
      // power flows toward +x when k_x / omega_n > 0
      const double kx = std::sqrt(kx2);
      e.k_x_exterior = e.omega > 0.0 ? kx : -kx;
      e.propagating = kx > tol;
    } else {
      e.k_x_exterior = cplx(0.0, std::sqrt(std::max(-kx2, 0.0)));
      e.propagating = false;
    }
    lat.entries.push_back(e);
  }
  return lat;
}

namespace detail {

inline void check_static_ladder(const ModulationProfile& p, double omega_0, double k_z0,
                                const HarmonicIndexSet& h) {
  for (int i = 0; i < h.size(); ++i) {
    const int n = h.harmonic(i);
    const double w = omega_0 + n * p.omega_s;
    const double kz = k_z0 + n * p.kappa_s;
    if (is_static_frequency(w, p.omega_s) && std::abs(kz) < 1e-12) {
      throw SolverError("harmonic n = " + std::to_string(n) +
                        " has omega_n = 0 and k_z,n = 0 simultaneously; its field is "
                        "undetermined. Change omega_0, theta or kappa_s");
    }
  }
}

}  // namespace detail

/// Normal-direction Floquet modes of the slab medium for the ladder
/// (omega_n, k_zn). Wavenumbers are k_x; the second block of each mode holds
/// H_z; for a static harmonic the first block holds B_x.
///
/// Rows, with M and E the permeability and permittivity convolution matrices:
///   q e_n    =  omega_n (M h_z)_n          (non-static)
///   q b_x,n  = -k_zn   (M h_z)_n           (static)
///   q h_z,n  =  k_zn (M^{-1} b_x)_n + omega_n (E e)_n
/// where b_x,n = -k_zn e_n / omega_n for non-static harmonics.
inline BlochSolution slab_eigenmodes(const ModulationProfile& p, double omega_0, double k_z0,
                                     const HarmonicIndexSet& h, const ModeTolerances& tol = {}) {
  validate(p);
  validate(h);
  detail::check_static_ladder(p, omega_0, k_z0, h);
  const int m = h.size();
  const CMatrix eps = convolution_matrix(p.eps_avg, p.delta_e, p.phi, h);
  const CMatrix mu = convolution_matrix(p.mu_avg, p.delta_m, p.phi, h);
  const CMatrix mu_inv = mu.partialPivLu().inverse();

  BlochSolution sol;
  sol.axis = ModeAxis::X;
  sol.omega = omega_0;
  sol.k_z0 = k_z0;
  sol.harmonics = h;
  sol.static_harmonic.resize(m);
  std::vector<double> w(m), kz(m);
  for (int i = 0; i < m; ++i) {
    w[i] = omega_0 + h.harmonic(i) * p.omega_s;
    kz[i] = k_z0 + h.harmonic(i) * p.kappa_s;
    sol.static_harmonic[i] = is_static_frequency(w[i], p.omega_s);
  }

  CMatrix a = CMatrix::Zero(2 * m, 2 * m);
  for (int i = 0; i < m; ++i) {
    const double row_scale = sol.static_harmonic[i] ? -kz[i] : w[i];
    for (int j = 0; j < m; ++j) a(i, m + j) = row_scale * mu(i, j);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double bx_per_u = sol.static_harmonic[j] ? 1.0 : -kz[j] / w[j];
      cplx v = kz[i] * mu_inv(i, j) * bx_per_u;
      if (!sol.static_harmonic[j]) v += w[i] * eps(i, j);
      a(m + i, j) = v;
    }
  }
  detail::solve_modes(a, sol, tol, 1.0);

  sol.power_flow.assign(sol.mode_count(), 0.0);
  for (int j = 0; j < sol.mode_count(); ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      if (!sol.static_harmonic[i]) s += 0.5 * (sol.modes(i, j) * std::conj(sol.modes(m + i, j))).real();
    }
    sol.power_flow[j] = s;
  }
  detail::classify_modes(sol, tol);
  for (auto& msg : classify_regime(p).warnings) sol.warnings.push_back(msg);
  return sol;
}

/// Ratio ||E_y|| / ||H_z|| of a slab mode over all harmonics.
inline double mode_impedance(const BlochSolution& sol, int mode) {
  double e2 = 0.0, h2 = 0.0;
  for (int i = 0; i < sol.harmonics.size(); ++i) {
    if (!sol.static_harmonic[i]) e2 += std::norm(sol.modes(i, mode));
    h2 += std::norm(sol.modes(sol.harmonics.size() + i, mode));
  }
  return std::sqrt(e2 / h2);
}

struct ScatteringResult {
  HarmonicLattice lattice;
  std::vector<cplx> reflection;    // R_n: E_y (B_x for static n) amplitude, x < 0
  std::vector<cplx> transmission;  // T_n: same, x > thickness
  double p_inc = 0.0;
  std::vector<double> p_refl;   // toward -x, >= 0 for propagating harmonics
  std::vector<double> p_trans;  // toward +x
  double absorption = 0.0;
  CVector internal;             // slab eigenmode amplitudes
  double condition = 0.0;       // 2-norm condition number of the boundary system
  double residual = 0.0;        // ||S x - b|| / ||b||
  int truncation = 0;
  std::vector<std::string> warnings;

  double reflected_total() const {
    double s = 0.0;
    for (double v : p_refl) s += v;
    return s;
  }
  double transmitted_total() const {
    double s = 0.0;
    for (double v : p_trans) s += v;
    return s;
  }
};

inline constexpr double kMaxBoundaryCondition = 1e12;
inline constexpr double kMaxBoundaryResidual = 1e-10;

namespace detail {

/// H_z per unit u of an exterior plane-wave harmonic with normal wavenumber q.
inline cplx exterior_hz(const LatticeEntry& e, cplx q, double mu_ext) {
  if (e.is_static) return -q / (e.k_z * mu_ext);
  return q / (e.omega * mu_ext);
}

}  // namespace detail

/// Enforce continuity of u (E_y, or B_x for static harmonics) and H_z at
/// x = 0 and x = thickness for every harmonic, solving one dense system for
/// [R, T, c]. Modes heading +x are referenced to x = 0, the others to
/// x = thickness, so no exponential grows across the slab.
inline ScatteringResult match_boundaries(const BlochSolution& modes, const HarmonicLattice& lat,
                                         const SlabGeometry& g, const IncidentWave& wave) {
  validate(g);
  validate(wave);
  if (modes.axis != ModeAxis::X || modes.harmonics.size() != lat.harmonics.size() ||
      modes.harmonics.first() != lat.harmonics.first()) {
    throw ValidationError("slab modes and harmonic lattice use different harmonic windows");
  }
  if (!lat.harmonics.contains(0)) {
    throw ValidationError("harmonic window must contain the incident harmonic n = 0");
  }
  const int m = lat.size();
  const int nm = 2 * m;
  const double d = g.thickness;
  const int i0 = lat.harmonics.position(0);

  std::vector<cplx> hz_out(m), hz_in(m);
  for (int i = 0; i < m; ++i) {
    const LatticeEntry& e = lat.entries[i];
    hz_out[i] = detail::exterior_hz(e, e.k_x_exterior, g.exterior_mu);
    hz_in[i] = detail::exterior_hz(e, -e.k_x_exterior, g.exterior_mu);
  }

  std::vector<cplx> at0(nm), atd(nm);
  for (int j = 0; j < nm; ++j) {
    const cplx q = modes.wavenumbers[j];
    if (heads_positive(modes, j)) {
      at0[j] = 1.0;
      atd[j] = std::exp(cplx(0.0, 1.0) * q * d);
    } else {
      at0[j] = std::exp(-cplx(0.0, 1.0) * q * d);
      atd[j] = 1.0;
    }
  }

  CMatrix s = CMatrix::Zero(4 * m, 4 * m);
  CVector rhs = CVector::Zero(4 * m);
  for (int i = 0; i < m; ++i) {
    // x = 0: incident + reflected = slab field
    s(i, i) = 1.0;
    s(m + i, i) = hz_in[i];
    // x = d: slab field = transmitted
    s(2 * m + i, m + i) = -1.0;
    s(3 * m + i, m + i) = -hz_out[i];
    for (int j = 0; j < nm; ++j) {
      const cplx u = modes.modes(i, j);
      const cplx hz = modes.modes(m + i, j);
      s(i, 2 * m + j) = -u * at0[j];
      s(m + i, 2 * m + j) = -hz * at0[j];
      s(2 * m + i, 2 * m + j) = u * atd[j];
      s(3 * m + i, 2 * m + j) = hz * atd[j];
    }
  }
  const cplx a = wave.amplitude;
  rhs(i0) = -a;
  rhs(m + i0) = -a * hz_out[i0];

  Eigen::BDCSVD<CMatrix> svd(s);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  const double cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxBoundaryCondition)) {
    throw SolverError("boundary system is ill-conditioned (condition number " +
                          detail::fmt_value(cond) + " > 1e12); change the truncation order N "
                          "or move away from grazing/static harmonics",
                      cond);
  }
  const CVector x = s.partialPivLu().solve(rhs);
  const double res = (s * x - rhs).norm() / rhs.norm();
  if (!(res < kMaxBoundaryResidual)) {
    throw SolverError("boundary system residual " + detail::fmt_value(res) +
                          " exceeds 1e-10 (condition number " + detail::fmt_value(cond) + ")",
                      cond);
  }

  ScatteringResult r;
  r.lattice = lat;
  r.condition = cond;
  r.residual = res;
  r.truncation = lat.harmonics.truncation_order;
  r.internal = x.segment(2 * m, nm);
  r.reflection.resize(m);
  r.transmission.resize(m);
  r.p_refl.assign(m, 0.0);
  r.p_trans.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    r.reflection[i] = x(i);
    r.transmission[i] = x(m + i);
    if (!lat.entries[i].propagating) continue;
    r.p_refl[i] = 0.5 * (-r.reflection[i] * std::conj(r.reflection[i] * hz_in[i])).real();
    r.p_trans[i] = 0.5 * (r.transmission[i] * std::conj(r.transmission[i] * hz_out[i])).real();
  }
  r.p_inc = 0.5 * (a * std::conj(a * hz_out[i0])).real();
  r.absorption = 1.0 - (r.reflected_total() + r.transmitted_total()) / r.p_inc;
  r.warnings = modes.warnings;
  return r;
}

struct PowerBalance {
  double reflected = 0.0;    // sum P_refl_n
  double transmitted = 0.0;  // sum P_trans_n
  double absorption = 0.0;   // 1 - (reflected + transmitted) / P_inc
};

inline PowerBalance power_balance(const ScatteringResult& r) {
  PowerBalance b;
  b.reflected = r.reflected_total();
  b.transmitted = r.transmitted_total();
  b.absorption = 1.0 - (b.reflected + b.transmitted) / r.p_inc;
  return b;
}

/// sum_n (P_refl_n + P_trans_n) / omega_n normalized by P_inc / omega_0.
/// Equals 1 for a lossless modulated slab: energy is conserved in the frame
/// co-moving with the modulation, which counts flux divided by frequency.
inline double photon_number_balance(const ScatteringResult& r) {
  double s = 0.0;
  for (int i = 0; i < r.lattice.size(); ++i) {
    const LatticeEntry& e = r.lattice.entries[i];
    if (!e.propagating) continue;
    s += (r.p_refl[i] + r.p_trans[i]) / e.omega;
  }
  return s * r.lattice.omega_0 / r.p_inc;
}

/// Single solve at a fixed harmonic window.
inline ScatteringResult scatter_fixed(const ModulationProfile& p, const SlabGeometry& g,
                                      const IncidentWave& wave, const HarmonicIndexSet& h) {
  const HarmonicLattice lat = harmonic_lattice(wave, p, g, h);
  const BlochSolution modes = slab_eigenmodes(p, wave.omega_0, lat.k_z0, h);
  return match_boundaries(modes, lat, g, wave);
}

/// Headline quantity tracked by truncation escalation.
inline double scattering_headline(const ScatteringResult& r) {
  return r.transmitted_total() / r.p_inc;
}

/// Mode-matching solve with automatic truncation escalation: N doubles until
/// the transmitted fraction moves less than convergence_tol, capped at
/// max_truncation. At the cap the result is compared against N - 4.
/// Near-sonic profiles need N >= sonic_floor; a cap below that floor is a
/// solver error.
inline ScatteringResult scatter(const ModulationProfile& p, const SlabGeometry& g,
                                const IncidentWave& wave, const TruncationPolicy& policy = {}) {
  validate(p);
  const RegimeReport regime = classify_regime(p);
  int n = policy.truncation;
  if (regime.near_sonic || regime.luminal_band) {
    if (policy.max_truncation < policy.sonic_floor) {
      double cond = std::numeric_limits<double>::infinity();
      try {
        cond = scatter_fixed(p, g, wave, HarmonicIndexSet{policy.max_truncation, 0}).condition;
      } catch (const SolverError& e) {
        cond = e.condition();
      }
      throw SolverError("modulation is near-sonic (v_m/v_p = " +
                            detail::fmt_value(regime.modulation_velocity / regime.phase_velocity) +
                            "); truncation cap N = " + std::to_string(policy.max_truncation) +
                            " is below the required floor " + std::to_string(policy.sonic_floor) +
                            " (boundary-system condition number at the cap: " +
                            detail::fmt_value(cond) + ")",
                        cond);
    }
    n = std::max(n, policy.sonic_floor);
  }
  n = std::min(n, policy.max_truncation);
  ScatteringResult cur = scatter_fixed(p, g, wave, HarmonicIndexSet{n, 0});
  if (!policy.auto_escalate) return cur;
  double change = std::numeric_limits<double>::infinity();
  while (n < policy.max_truncation) {
    const int next = std::min(2 * n, policy.max_truncation);
    ScatteringResult refined = scatter_fixed(p, g, wave, HarmonicIndexSet{next, 0});
    change = std::abs(scattering_headline(refined) - scattering_headline(cur));
    cur = std::move(refined);
    n = next;
    if (change < policy.convergence_tol) return cur;
  }
  if (n > 4) {
    const ScatteringResult lower = scatter_fixed(p, g, wave, HarmonicIndexSet{n - 4, 0});
    change = std::abs(scattering_headline(lower) - scattering_headline(cur));
  }
  if (!(change < policy.convergence_tol)) {
    cur.warnings.push_back("truncation cap N = " + std::to_string(n) +
                           " reached; transmitted fraction changes by " +
                           detail::fmt_value(change) + " against N - 4");
  }
  return cur;
}

struct NonreciprocityReport {
  double theta = 0.0;  // degrees, forward incidence
  double a_forward = 0.0;
  double a_backward = 0.0;
  double t_forward = 0.0;
  double t_backward = 0.0;
  double r_forward = 0.0;
  double r_backward = 0.0;
  double contrast = 0.0;  // a_forward - a_backward
  int truncation = 0;
  ScatteringResult forward;
  ScatteringResult backward;
};

/// Scatter at theta and 180 - theta with one shared truncation order.
inline NonreciprocityReport nonreciprocity(const ModulationProfile& p, const SlabGeometry& g,
                                           double omega_0, double theta,
                                           const TruncationPolicy& policy = {}) {
  if (!(theta > 0.0 && theta < 180.0) || theta == 90.0) {
    throw ValidationError("nonreciprocity needs theta in (0, 90) or (90, 180) (got " +
                          detail::fmt_value(theta) + ")");
  }
  const IncidentWave fw = make_wave(omega_0, theta);
  const IncidentWave bw = make_wave(omega_0, 180.0 - theta);
  auto run = [&](const IncidentWave& w, const char* label, const TruncationPolicy& pol) {
    try {
      return scatter(p, g, w, pol);
    } catch (const SolverError& e) {
      throw SolverError(std::string(label) + " direction (theta = " +
                            detail::fmt_value(w.theta_deg) + "): " + e.what(),
                        e.condition());
    }
  };
  NonreciprocityReport rep;
  rep.theta = theta;
  rep.forward = run(fw, "forward", policy);
  rep.backward = run(bw, "backward", policy);
  if (rep.forward.truncation != rep.backward.truncation) {
    TruncationPolicy fixed = policy;
    fixed.auto_escalate = false;
    fixed.truncation = std::max(rep.forward.truncation, rep.backward.truncation);
    if (rep.forward.truncation < fixed.truncation) rep.forward = run(fw, "forward", fixed);
    else rep.backward = run(bw, "backward", fixed);
  }
  rep.truncation = rep.forward.truncation;
  rep.a_forward = rep.forward.absorption;
  rep.a_backward = rep.backward.absorption;
  rep.t_forward = rep.forward.transmitted_total() / rep.forward.p_inc;
  rep.t_backward = rep.backward.transmitted_total() / rep.backward.p_inc;
  rep.r_forward = rep.forward.reflected_total() / rep.forward.p_inc;
  rep.r_backward = rep.backward.reflected_total() / rep.backward.p_inc;
  rep.contrast = rep.a_forward - rep.a_backward;
  return rep;
}

}  // namespace stmsim
