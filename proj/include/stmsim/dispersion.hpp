#pragma once

// Bulk dispersion of the space-time-modulated medium: Bloch wavenumbers
// kappa_0 along the modulation axis z at fixed frequency and transverse k_x,
// band diagrams, isofrequency contours and group velocities.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stmsim/harmonics.hpp"
#include "stmsim/medium.hpp"

namespace stmsim {

/// Coupled E/H eigenproblem A v = kappa_0 v (B = I in the generalized form).
///
/// Unknowns per harmonic n: u_n (E_y, or B_z for a static harmonic) and H_x,n.
/// Rows follow from Faraday's law along x (Gauss's law for a static
/// harmonic) and Ampere's law along y, with kappa_n = kappa_0 + n kappa_s.
struct CouplingMatrix {
  CMatrix a;
  HarmonicIndexSet harmonics;
  std::vector<bool> static_harmonic;
};

inline CouplingMatrix coupling_matrix(const ModulationProfile& p, double omega, double k_x,
                                      const HarmonicIndexSet& h) {
  validate(p);
  validate(h);
  const int m = h.size();
  const CMatrix eps = convolution_matrix(p.eps_avg, p.delta_e, p.phi, h);
  const CMatrix mu = convolution_matrix(p.mu_avg, p.delta_m, p.phi, h);
  const CMatrix mu_inv = mu.partialPivLu().inverse();

  CouplingMatrix out;
  out.harmonics = h;
  out.static_harmonic.resize(m);
  std::vector<double> w(m);
  for (int i = 0; i < m; ++i) {
    w[i] = omega + h.harmonic(i) * p.omega_s;
    out.static_harmonic[i] = is_static_frequency(w[i], p.omega_s);
  }

  CMatrix& a = out.a;
  a = CMatrix::Zero(2 * m, 2 * m);
  for (int i = 0; i < m; ++i) {
    const double shift = -h.harmonic(i) * p.kappa_s;
    a(i, i) = shift;
    a(m + i, m + i) = shift;
    // kappa_n e_n = -omega_n (mu H_x)_n ; static: kappa_n b_z,n = -k_x (mu H_x)_n
    const double row_scale = out.static_harmonic[i] ? k_x : w[i];
    for (int j = 0; j < m; ++j) a(i, m + j) -= row_scale * mu(i, j);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      // kappa_n H_x,n = k_x H_z,n - omega_n (eps e)_n, H_z = mu^{-1} b_z
      const double bz_per_u = out.static_harmonic[j] ? 1.0 : k_x / w[j];
      cplx v = k_x * mu_inv(i, j) * bz_per_u;
      if (!out.static_harmonic[j]) v -= w[i] * eps(i, j);
      a(m + i, j) += v;
    }
  }
  return out;
}

namespace detail {

inline void bulk_power_flow(BlochSolution& sol) {
  const int m = sol.harmonics.size();
  sol.power_flow.assign(sol.mode_count(), 0.0);
  for (int j = 0; j < sol.mode_count(); ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      if (sol.static_harmonic[i]) continue;
      // S_z = -E_y H_x
      s += -0.5 * (sol.modes(i, j) * std::conj(sol.modes(m + i, j))).real();
    }
    sol.power_flow[j] = s;
  }
}

}  // namespace detail

/// All 2(2N+1) Bloch wavenumbers at (omega, k_x), classified by power flow
/// along z.
inline BlochSolution eigen_kappa(const ModulationProfile& p, double omega, double k_x,
                                 const HarmonicIndexSet& h, const ModeTolerances& tol = {}) {
  const CouplingMatrix cm = coupling_matrix(p, omega, k_x, h);
  BlochSolution sol;
  sol.axis = ModeAxis::Z;
  sol.omega = omega;
  sol.k_x = k_x;
  sol.harmonics = h;
  sol.static_harmonic = cm.static_harmonic;
  detail::solve_modes(cm.a, sol, tol, -1.0);
  detail::bulk_power_flow(sol);
  detail::classify_modes(sol, tol);
  for (auto& w : classify_regime(p).warnings) sol.warnings.push_back(w);
  return sol;
}

inline BlochSolution eigen_kappa(const ModulationProfile& p, double omega, double k_x, int n,
                                 const ModeTolerances& tol = {}) {
  return eigen_kappa(p, omega, k_x, HarmonicIndexSet{n, 0}, tol);
}

/// Index of the forward-propagating mode with the largest fundamental
/// (n = 0) content; falls back to any mode when nothing propagates forward.
inline int fundamental_mode(const BlochSolution& sol, ModeClass wanted = ModeClass::PropagatingForward) {
  if (!sol.harmonics.contains(0)) return -1;
  int best = -1;
  double best_w = -1.0;
  for (int pass = 0; pass < 2 && best < 0; ++pass) {
    for (int j = 0; j < sol.mode_count(); ++j) {
      if (pass == 0 && sol.classification[j] != wanted) continue;
      const double w = sol.harmonic_weight(j, 0);
      if (w > best_w) {
        best_w = w;
        best = j;
      }
    }
  }
  return best;
}

struct TruncationPolicy {
  int truncation = 10;
  bool auto_escalate = true;
  int max_truncation = 40;
  double convergence_tol = 1e-8;
  int sonic_floor = 20;
};

/// eigen_kappa with automatic truncation escalation: N is doubled until the
/// fundamental forward branch moves less than convergence_tol, capped at
/// max_truncation. Near-sonic profiles start from sonic_floor.
inline BlochSolution eigen_kappa_converged(const ModulationProfile& p, double omega, double k_x,
                                           const TruncationPolicy& policy = {},
                                           const ModeTolerances& tol = {}) {
  const RegimeReport regime = classify_regime(p);
  int n = policy.truncation;
  if (regime.near_sonic || regime.luminal_band) n = std::max(n, policy.sonic_floor);
  n = std::min(n, policy.max_truncation);
  BlochSolution cur = eigen_kappa(p, omega, k_x, n, tol);
  if (!policy.auto_escalate) return cur;
  double last_change = std::numeric_limits<double>::infinity();
  while (n < policy.max_truncation) {
    const int next = std::min(2 * n, policy.max_truncation);
    BlochSolution refined = eigen_kappa(p, omega, k_x, next, tol);
    const int a = fundamental_mode(cur);
    const int b = fundamental_mode(refined);
    last_change = (a >= 0 && b >= 0) ? std::abs(cur.wavenumbers[a] - refined.wavenumbers[b])
                                     : std::numeric_limits<double>::infinity();
    cur = std::move(refined);
    n = next;
    if (last_change < policy.convergence_tol) return cur;
  }
  if (!(last_change < policy.convergence_tol)) {
    cur.warnings.push_back("truncation cap N = " + std::to_string(n) +
                           " reached; fundamental branch last moved by " +
                           detail::fmt_value(last_change));
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Branch tracking

/// Assignment of the modes of `next` onto the branches carried by `prev`.
struct BranchMatch {
  std::vector<int> next_index;    // branch b of prev continues as mode next_index[b]
  std::vector<double> overlap;    // |<v_prev, v_next>|
  std::vector<bool> continuous;   // overlap above the continuity threshold
};

/// Greedy maximal-overlap matching, ties broken by eigenvalue proximity.
inline BranchMatch track_branches(const BlochSolution& prev, const std::vector<int>& prev_modes,
                                  const BlochSolution& next, double continuity = 0.5) {
  const int nb = static_cast<int>(prev_modes.size());
  const int nn = next.mode_count();
  struct Cand {
    double overlap;
    double distance;
    int branch;
    int mode;
  };
  std::vector<Cand> cands;
  cands.reserve(static_cast<std::size_t>(nb) * nn);
  for (int b = 0; b < nb; ++b) {
    const auto vp = prev.modes.col(prev_modes[b]);
    for (int j = 0; j < nn; ++j) {
      const double ov = std::abs(vp.dot(next.modes.col(j)));
      const double d = std::abs(prev.wavenumbers[prev_modes[b]] - next.wavenumbers[j]);
      cands.push_back({ov, d, b, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
    // overlaps equal to within 1e-9 count as ties
    if (std::abs(x.overlap - y.overlap) > 1e-9) return x.overlap > y.overlap;
    return x.distance < y.distance;
  });
  BranchMatch m;
  m.next_index.assign(nb, -1);
  m.overlap.assign(nb, 0.0);
  m.continuous.assign(nb, false);
  std::vector<bool> taken(nn, false);
  int assigned = 0;
  for (const Cand& c : cands) {
    if (assigned == nb) break;
    if (m.next_index[c.branch] >= 0 || taken[c.mode]) continue;
    m.next_index[c.branch] = c.mode;
    m.overlap[c.branch] = c.overlap;
    m.continuous[c.branch] = c.overlap >= continuity;
    taken[c.mode] = true;
    ++assigned;
  }
  return m;
}

/// Locate the mode of `sol` that continues a reference mode vector.
inline int follow_mode(const CVector& reference, cplx reference_k, const BlochSolution& sol) {
  int best = -1;
  double best_ov = -1.0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < sol.mode_count(); ++j) {
    const double ov = std::abs(reference.dot(sol.modes.col(j)));
    const double d = std::abs(reference_k - sol.wavenumbers[j]);
    if (ov > best_ov + 1e-9 || (std::abs(ov - best_ov) <= 1e-9 && d < best_d)) {
      best = j;
      best_ov = ov;
      best_d = d;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Group velocity

struct GroupVelocity {
  double v_x = 0.0;  // d omega / d k_x
  double v_z = 0.0;  // d omega / d kappa

  double magnitude() const noexcept { return std::hypot(v_x, v_z); }
};

/// Central finite-difference group velocity of the mode (kappa, v) of
/// eigen_kappa(p, omega, k_x): v_z = 1 / (d kappa/d omega),
/// v_x = -(d kappa/d k_x) v_z.
inline GroupVelocity group_velocity_at(const ModulationProfile& p, double omega, double k_x,
                                       const CVector& mode, cplx kappa,
                                       const HarmonicIndexSet& h, double step = 1e-4) {
  auto kappa_at = [&](double w, double kx) {
    const BlochSolution s = eigen_kappa(p, w, kx, h);
    const int j = follow_mode(mode, kappa, s);
    return s.wavenumbers[j];
  };
  const cplx dk_dw = (kappa_at(omega + step, k_x) - kappa_at(omega - step, k_x)) / (2.0 * step);
  const cplx dk_dkx = (kappa_at(omega, k_x + step) - kappa_at(omega, k_x - step)) / (2.0 * step);
  GroupVelocity v;
  v.v_z = 1.0 / dk_dw.real();
  v.v_x = -dk_dkx.real() * v.v_z;
  return v;
}

// ---------------------------------------------------------------------------
// Diagrams

struct BranchPoint {
  cplx kappa;  // Bloch wavenumber kappa_0
  ModeClass classification = ModeClass::Evanescent;
  int dominant_harmonic = 0;
  bool continuous = true;  // tracked from the previous sweep point without ambiguity
  GroupVelocity group_velocity;
  bool has_group_velocity = false;
};

struct SweepPoint {
  double parameter = 0.0;  // omega for band diagrams, k_x for isofrequency diagrams
  bool ok = true;
  std::string error;
  std::vector<BranchPoint> branches;  // indexed by branch id
  std::vector<int> mode_of_branch;    // column index into the point's mode matrix
  CMatrix modes;
};

struct BandDiagram {
  ModulationProfile profile;
  double k_x = 0.0;
  HarmonicIndexSet harmonics;
  std::vector<SweepPoint> points;
  std::vector<std::string> warnings;
};

struct IsofrequencyDiagram {
  ModulationProfile profile;
  double omega = 0.0;
  HarmonicIndexSet harmonics;
  std::vector<SweepPoint> points;
  std::vector<std::string> warnings;
};

namespace detail {

/// Shared sweep driver: solve at every parameter value, track branches across
/// consecutive successful points, and record failures as gaps.
template <class Solve>
std::vector<SweepPoint> sweep_branches(const std::vector<double>& grid, Solve&& solve,
                                       std::vector<std::string>& warnings) {
  std::vector<SweepPoint> out;
  out.reserve(grid.size());
  std::optional<BlochSolution> prev;
  std::vector<int> prev_modes;
  for (double x : grid) {
    SweepPoint pt;
    pt.parameter = x;
    try {
      BlochSolution s = solve(x);
      for (auto& w : s.warnings) {
        if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
      }
      const int nm = s.mode_count();
      std::vector<int> order(nm);
      std::vector<bool> cont(nm, true);
      if (!prev) {
        // first point: order branches by real part for a stable labeling
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          return s.wavenumbers[a].real() < s.wavenumbers[b].real();
        });
      } else {
        const BranchMatch m = track_branches(*prev, prev_modes, s);
        order = m.next_index;
        for (int b = 0; b < nm; ++b) cont[b] = m.continuous[b];
      }
      pt.mode_of_branch = order;
      pt.branches.resize(nm);
      for (int b = 0; b < nm; ++b) {
        const int j = order[b];
        BranchPoint& bp = pt.branches[b];
        bp.kappa = s.wavenumbers[j];
        bp.classification = s.classification[j];
        bp.dominant_harmonic = s.dominant_harmonic(j);
        bp.continuous = cont[b];
      }
      pt.modes = s.modes;
      prev_modes = order;
      prev = std::move(s);
    } catch (const Error& e) {
      pt.ok = false;
      pt.error = e.what();
      // the next successful point restarts tracking
      prev.reset();
    }
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace detail

inline void require_monotone(const std::vector<double>& grid, const char* what) {
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw ValidationError(std::string(what) + " must be strictly increasing");
    }
  }
}

/// omega - kappa band structure at fixed k_x (0 for the 1-D analysis).
/// Group velocities along each branch are v_z = d omega / d Re(kappa) from
/// central differences over the omega grid.
inline BandDiagram band_structure(const ModulationProfile& p, const std::vector<double>& omega_grid,
                                  const HarmonicIndexSet& h, double k_x = 0.0) {
  validate(p);
  validate(h);
  require_monotone(omega_grid, "omega grid");
  BandDiagram d;
  d.profile = p;
  d.k_x = k_x;
  d.harmonics = h;
  d.points = detail::sweep_branches(
      omega_grid, [&](double w) { return eigen_kappa(p, w, k_x, h); }, d.warnings);

  const std::size_t n = d.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!d.points[i].ok) continue;
    const std::size_t lo = (i > 0 && d.points[i - 1].ok) ? i - 1 : i;
    const std::size_t hi = (i + 1 < n && d.points[i + 1].ok) ? i + 1 : i;
    if (lo == hi) continue;
    for (std::size_t b = 0; b < d.points[i].branches.size(); ++b) {
      BranchPoint& bp = d.points[i].branches[b];
      if (bp.classification == ModeClass::Evanescent) continue;
      if ((hi != i && !d.points[hi].branches[b].continuous) || !d.points[i].branches[b].continuous)
        continue;
      const double dk = d.points[hi].branches[b].kappa.real() - d.points[lo].branches[b].kappa.real();
      const double dw = d.points[hi].parameter - d.points[lo].parameter;
      if (dk == 0.0) continue;
      bp.group_velocity = {0.0, dw / dk};
      bp.has_group_velocity = true;
    }
  }
  return d;
}

/// k_x - kappa isofrequency contours at fixed omega with group velocities
/// attached to every propagating branch point.
inline IsofrequencyDiagram isofrequency(const ModulationProfile& p, double omega_0,
                                        const std::vector<double>& k_x_grid,
                                        const HarmonicIndexSet& h, double fd_step = 1e-4) {
  validate(p);
  validate(h);
  if (!(omega_0 > 0.0)) throw ValidationError("omega_0 must be > 0");
  require_monotone(k_x_grid, "k_x grid");
  IsofrequencyDiagram d;
  d.profile = p;
  d.omega = omega_0;
  d.harmonics = h;
  d.points = detail::sweep_branches(
      k_x_grid, [&](double kx) { return eigen_kappa(p, omega_0, kx, h); }, d.warnings);
  for (SweepPoint& pt : d.points) {
    if (!pt.ok) continue;
    for (std::size_t b = 0; b < pt.branches.size(); ++b) {
      BranchPoint& bp = pt.branches[b];
      if (bp.classification == ModeClass::Evanescent) continue;
      bp.group_velocity = group_velocity_at(p, omega_0, pt.parameter,
                                            pt.modes.col(pt.mode_of_branch[b]), bp.kappa, h,
                                            fd_step);
      bp.has_group_velocity = true;
    }
  }
  return d;
}

/// Group velocity of `branch` at sweep `point` of an isofrequency diagram.
/// The branch must be tracked continuously through the point and both
/// neighbours.
inline GroupVelocity group_velocity(const IsofrequencyDiagram& d, int branch, int point,
                                    double step = 1e-4) {
  const int np = static_cast<int>(d.points.size());
  if (point <= 0 || point + 1 >= np) {
    throw SolverError("group velocity needs tracked points on both sides of point " +
                      std::to_string(point) + " on branch " + std::to_string(branch));
  }
  for (int q = point - 1; q <= point + 1; ++q) {
    const SweepPoint& pt = d.points[q];
    if (!pt.ok || branch < 0 || branch >= static_cast<int>(pt.branches.size()) ||
        (q > point - 1 && !pt.branches[branch].continuous)) {
      throw SolverError("branch tracking failure: branch " + std::to_string(branch) +
                        " is discontinuous around sweep point " + std::to_string(point));
    }
  }
  const SweepPoint& pt = d.points[point];
  return group_velocity_at(d.profile, d.omega, pt.parameter,
                           pt.modes.col(pt.mode_of_branch[branch]), pt.branches[branch].kappa,
                           d.harmonics, step);
}

// ---------------------------------------------------------------------------
// Derived band-structure metrics

struct BandGap {
  bool found = false;
  double lower = 0.0;
  double upper = 0.0;
  double width() const noexcept { return found ? upper - lower : 0.0; }
};

/// First omega interval in [omega_lo, omega_hi] where a mode dominated by a
/// low harmonic (|n| <= max_harmonic) acquires a complex Bloch wavenumber.
/// Edges are refined by bisection to `edge_tol`.
inline BandGap first_band_gap(const ModulationProfile& p, double omega_lo, double omega_hi,
                              const HarmonicIndexSet& h, int samples = 801,
                              double im_tol = 1e-7, int max_harmonic = 1, double k_x = 0.0,
                              double edge_tol = 1e-9) {
  auto in_gap = [&](double w) {
    const BlochSolution s = eigen_kappa(p, w, k_x, h);
    for (int j = 0; j < s.mode_count(); ++j) {
      if (std::abs(s.dominant_harmonic(j)) > max_harmonic) continue;
      if (std::abs(s.wavenumbers[j].imag()) > im_tol) return true;
    }
    return false;
  };
  auto refine = [&](double outside, double inside) {
    while (std::abs(inside - outside) > edge_tol) {
      const double mid = 0.5 * (inside + outside);
      (in_gap(mid) ? inside : outside) = mid;
    }
    return 0.5 * (inside + outside);
  };
  BandGap gap;
  const double dw = (omega_hi - omega_lo) / (samples - 1);
  int first = -1;
  for (int i = 0; i < samples; ++i) {
    if (in_gap(omega_lo + i * dw)) {
      first = i;
      break;
    }
  }
  if (first < 0) return gap;
  int last = first;
  while (last + 1 < samples && in_gap(omega_lo + (last + 1) * dw)) ++last;
  gap.found = true;
  gap.lower = first == 0 ? omega_lo : refine(omega_lo + (first - 1) * dw, omega_lo + first * dw);
  gap.upper = last + 1 == samples ? omega_hi
                                  : refine(omega_lo + (last + 1) * dw, omega_lo + last * dw);
  return gap;
}

/// Spread of the forward and backward propagating Bloch wavenumbers at one
/// frequency, normalized by kappa_s. Modes with more than edge_weight of
/// their norm in the two outermost harmonics are truncation artefacts and
/// are skipped.
struct LadderSpread {
  std::vector<double> forward;   // sorted kappa_0 / kappa_s
  std::vector<double> backward;  // sorted kappa_0 / kappa_s
  double forward_min_gap = std::numeric_limits<double>::infinity();
  double backward_min_gap = std::numeric_limits<double>::infinity();
  double forward_center = std::numeric_limits<double>::quiet_NaN();  // member nearest 1
};

inline LadderSpread ladder_spread(const BlochSolution& s, double kappa_s,
                                  double edge_weight = 1e-3) {
  if (!(kappa_s > 0.0)) throw ValidationError("ladder spread needs kappa_s > 0");
  LadderSpread out;
  for (int j = 0; j < s.mode_count(); ++j) {
    const double edge = s.harmonic_weight(j, s.harmonics.first()) +
                        s.harmonic_weight(j, s.harmonics.last());
    if (edge > edge_weight) continue;
    const double k = s.wavenumbers[j].real() / kappa_s;
    if (s.classification[j] == ModeClass::PropagatingForward) out.forward.push_back(k);
    if (s.classification[j] == ModeClass::PropagatingBackward) out.backward.push_back(k);
  }
  auto min_gap = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < v.size(); ++i) g = std::min(g, v[i] - v[i - 1]);
    return g;
  };
  out.forward_min_gap = min_gap(out.forward);
  out.backward_min_gap = min_gap(out.backward);
  double best = std::numeric_limits<double>::infinity();
  for (double k : out.forward) {
    if (std::abs(k - 1.0) < best) {
      best = std::abs(k - 1.0);
      out.forward_center = k;
    }
  }
  return out;
}

}  // namespace stmsim
