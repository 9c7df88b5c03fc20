#pragma once

// Floquet harmonic bookkeeping shared by the bulk-dispersion and slab solvers.
//
// A field in the modulated medium is expanded as
//   F(x,z,t) = sum_n f_n exp(i (k_x x + k_zn z - omega_n t)),
//   omega_n = omega + n omega_s,  k_zn = k_z0 + n kappa_s,
// and the single-tone modulation couples harmonic n only to n - 1 and n + 1.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

#include "stmsim/error.hpp"
#include "stmsim/medium.hpp"

namespace stmsim {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Harmonics n = center - N .. center + N.
struct HarmonicIndexSet {
  int truncation_order = 10;
  int center = 0;

  int size() const noexcept { return 2 * truncation_order + 1; }
  int first() const noexcept { return center - truncation_order; }
  int last() const noexcept { return center + truncation_order; }
  int harmonic(int position) const noexcept { return first() + position; }
  int position(int n) const noexcept { return n - first(); }
  bool contains(int n) const noexcept { return n >= first() && n <= last(); }
};

inline void validate(const HarmonicIndexSet& h) {
  if (h.truncation_order < 1) {
    throw ValidationError("truncation order N must be >= 1 (got " +
                          std::to_string(h.truncation_order) + ")");
  }
}

/// Harmonic frequencies whose magnitude falls below this fraction of omega_s
/// are treated as static.
inline constexpr double kStaticFrequencyTol = 1e-9;

inline bool is_static_frequency(double omega_n, double omega_s) noexcept {
  return std::abs(omega_n) < kStaticFrequencyTol * omega_s;
}

/// Toeplitz convolution matrix of avg * (1 + depth cos(omega_s t - kappa_s z + phi))
/// acting on harmonic amplitudes: (C f)_n = avg (f_n + depth/2 (e^{-i phi} f_{n-1}
/// + e^{i phi} f_{n+1})).
inline CMatrix convolution_matrix(double avg, double depth, double phi,
                                  const HarmonicIndexSet& h) {
  const int m = h.size();
  CMatrix c = CMatrix::Zero(m, m);
  const cplx lower = avg * depth / 2.0 * std::polar(1.0, -phi);
  const cplx upper = avg * depth / 2.0 * std::polar(1.0, phi);
  for (int i = 0; i < m; ++i) {
    c(i, i) = avg;
    if (i > 0) c(i, i - 1) = lower;
    if (i + 1 < m) c(i, i + 1) = upper;
  }
  return c;
}

enum class ModeClass { PropagatingForward, PropagatingBackward, Evanescent };

inline const char* to_string(ModeClass c) noexcept {
  switch (c) {
    case ModeClass::PropagatingForward: return "propagating-forward";
    case ModeClass::PropagatingBackward: return "propagating-backward";
    case ModeClass::Evanescent: return "evanescent";
  }
  return "?";
}

/// Which axis the eigen-wavenumber belongs to.
enum class ModeAxis {
  Z,  // bulk dispersion: kappa_0 along the modulation, k_x fixed
  X,  // slab modes: k_x normal to the slab, tangential ladder fixed
};

/// Eigen-wavenumbers and harmonic amplitude vectors of the modulated medium
/// at fixed frequency.
///
/// Each mode vector has 2(2N+1) entries. The first block holds the E_y
/// amplitude of every non-static harmonic; for a static harmonic
/// (omega_n = 0) E_y vanishes identically and the slot carries the magnetic
/// flux density component along the eigen axis instead. The second block
/// holds the magnetic field component transverse to the eigen axis inside
/// the x-z plane: H_x for ModeAxis::Z, H_z for ModeAxis::X.
struct BlochSolution {
  ModeAxis axis = ModeAxis::Z;
  double omega = 0.0;
  double k_x = 0.0;   // fixed for ModeAxis::Z
  double k_z0 = 0.0;  // fixed for ModeAxis::X
  HarmonicIndexSet harmonics;
  std::vector<cplx> wavenumbers;
  CMatrix modes;  // column j belongs to wavenumbers[j], unit Euclidean norm
  std::vector<ModeClass> classification;
  std::vector<double> power_flow;  // time-averaged Poynting along the eigen axis
  std::vector<double> residuals;   // || (A - k I) v ||
  std::vector<bool> static_harmonic;
  std::vector<std::string> warnings;

  int mode_count() const noexcept { return static_cast<int>(wavenumbers.size()); }
  int harmonic_count() const noexcept { return harmonics.size(); }

  cplx field_u(int mode, int harmonic_n) const {
    return modes(harmonics.position(harmonic_n), mode);
  }
  cplx field_h(int mode, int harmonic_n) const {
    return modes(harmonics.size() + harmonics.position(harmonic_n), mode);
  }
  /// E_y amplitude of harmonic n (zero for static harmonics).
  cplx field_e(int mode, int harmonic_n) const {
    return static_harmonic[harmonics.position(harmonic_n)] ? cplx{} : field_u(mode, harmonic_n);
  }

  /// Harmonic carrying the largest share of the mode's norm.
  int dominant_harmonic(int mode) const {
    const int m = harmonics.size();
    int best = 0;
    double best_w = -1.0;
    for (int i = 0; i < m; ++i) {
      const double w = std::norm(modes(i, mode)) + std::norm(modes(m + i, mode));
      if (w > best_w) {
        best_w = w;
        best = i;
      }
    }
    return harmonics.harmonic(best);
  }

  /// Norm share of harmonic n in the mode.
  double harmonic_weight(int mode, int harmonic_n) const {
    const int i = harmonics.position(harmonic_n);
    return std::norm(modes(i, mode)) + std::norm(modes(harmonics.size() + i, mode));
  }
};

/// Thresholds used when post-processing eigen decompositions.
struct ModeTolerances {
  double degenerate = 1e-9;    // relative eigenvalue spacing below this => shared subspace
  double evanescent = 1e-9;    // |Im k| above this (scaled by omega) => evanescent
  double zero_power = 1e-12;   // power flow below this => evanescent fallback
};

namespace detail {

/// Clusters of eigenvalues closer than tol * max(1, |k|).
inline std::vector<std::vector<int>> degenerate_groups(const std::vector<cplx>& values,
                                                       double tol) {
  const int n = static_cast<int>(values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (values[a].real() != values[b].real()) return values[a].real() < values[b].real();
    return values[a].imag() < values[b].imag();
  });
  std::vector<bool> done(n, false);
  std::vector<std::vector<int>> groups;
  for (int a = 0; a < n; ++a) {
    const int ia = order[a];
    if (done[ia]) continue;
    const double t = tol * std::max(1.0, std::abs(values[ia]));
    std::vector<int> group{ia};
    done[ia] = true;
    for (int b = a + 1; b < n; ++b) {
      const int ib = order[b];
      if (values[ib].real() - values[ia].real() > t) break;
      if (!done[ib] && std::abs(values[ib] - values[ia]) < t) {
        group.push_back(ib);
        done[ib] = true;
      }
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

/// Orthonormalize mode vectors inside each degenerate group (modified
/// Gram-Schmidt) and normalize every vector to unit Euclidean length.
inline void orthonormalize_degenerate(const std::vector<std::vector<int>>& groups,
                                      CMatrix& vectors) {
  for (const auto& group : groups) {
    for (std::size_t g = 0; g < group.size(); ++g) {
      auto v = vectors.col(group[g]);
      for (std::size_t p = 0; p < g; ++p) {
        auto u = vectors.col(group[p]);
        v -= u * u.dot(v);
      }
      const double nv = v.norm();
      if (nv > 0.0) v /= nv;
    }
  }
}

/// Inside a degenerate group any basis is an eigenbasis, but a mixture of a
/// forward and a backward wave has no definite power flow. Rotate each group
/// so that the power form sign * 1/2 Re sum_n e_n h_n^* is diagonal.
inline void diagonalize_power(const std::vector<std::vector<int>>& groups, BlochSolution& sol,
                              double sign) {
  const int m = sol.harmonics.size();
  for (const auto& group : groups) {
    const int g = static_cast<int>(group.size());
    if (g < 2) continue;
    CMatrix ve(m, g), vh(m, g);
    for (int c = 0; c < g; ++c) {
      for (int i = 0; i < m; ++i) {
        ve(i, c) = sol.static_harmonic[i] ? cplx{} : sol.modes(i, group[c]);
        vh(i, c) = sol.modes(m + i, group[c]);
      }
    }
    const CMatrix form = sign * 0.25 * (vh.adjoint() * ve + ve.adjoint() * vh);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(form);
    CMatrix basis(sol.modes.rows(), g);
    for (int c = 0; c < g; ++c) basis.col(c) = sol.modes.col(group[c]);
    const CMatrix rotated = basis * es.eigenvectors();
    for (int c = 0; c < g; ++c) sol.modes.col(group[c]) = rotated.col(c);
  }
}

/// Fix the arbitrary global phase so that the largest component is real positive.
inline void canonical_phase(CMatrix& vectors) {
  for (int j = 0; j < vectors.cols(); ++j) {
    Eigen::Index imax = 0;
    vectors.col(j).cwiseAbs2().maxCoeff(&imax);
    const cplx pivot = vectors(imax, j);
    if (std::abs(pivot) > 0.0) vectors.col(j) *= std::conj(pivot) / std::abs(pivot);
  }
}

/// Solve the standard eigenproblem A v = k v and fill wavenumbers, modes and
/// residuals of `sol`. power_sign orients the power form used to split
/// degenerate groups. Classification is left to the caller.
inline void solve_modes(const CMatrix& a, BlochSolution& sol, const ModeTolerances& tol,
                        double power_sign) {
  Eigen::ComplexEigenSolver<CMatrix> es(a, /*computeEigenvectors=*/true);
  if (es.info() != Eigen::Success) {
    Eigen::JacobiSVD<CMatrix> svd(a);
    const auto& s = svd.singularValues();
    const double cond = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : INFINITY;
    throw SolverError("Floquet eigen-solve failed to converge (matrix size " +
                          std::to_string(a.rows()) + ", condition estimate " +
                          detail::fmt_value(cond) + ")",
                      cond);
  }
  const int n = static_cast<int>(a.rows());
  sol.wavenumbers.resize(n);
  for (int j = 0; j < n; ++j) sol.wavenumbers[j] = es.eigenvalues()(j);
  sol.modes = es.eigenvectors();
  for (int j = 0; j < n; ++j) {
    const double nv = sol.modes.col(j).norm();
    if (nv > 0.0) sol.modes.col(j) /= nv;
  }
  const auto groups = degenerate_groups(sol.wavenumbers, tol.degenerate);
  orthonormalize_degenerate(groups, sol.modes);
  diagonalize_power(groups, sol, power_sign);
  canonical_phase(sol.modes);
  sol.residuals.resize(n);
  for (int j = 0; j < n; ++j) {
    sol.residuals[j] = (a * sol.modes.col(j) - sol.wavenumbers[j] * sol.modes.col(j)).norm();
  }
}

/// Classify by time-averaged power flow for propagating modes and by decay
/// direction (stored in the sign convention of the caller) for evanescent ones.
inline void classify_modes(BlochSolution& sol, const ModeTolerances& tol) {
  const int n = sol.mode_count();
  sol.classification.resize(n);
  const double scale = std::max(std::abs(sol.omega), 1.0);
  for (int j = 0; j < n; ++j) {
    const cplx k = sol.wavenumbers[j];
    if (std::abs(k.imag()) > tol.evanescent * scale ||
        std::abs(sol.power_flow[j]) < tol.zero_power) {
      sol.classification[j] = ModeClass::Evanescent;
    } else {
      sol.classification[j] = sol.power_flow[j] > 0.0 ? ModeClass::PropagatingForward
                                                      : ModeClass::PropagatingBackward;
    }
  }
}

}  // namespace detail

/// True when the mode carries energy (or decays) toward the positive eigen axis.
inline bool heads_positive(const BlochSolution& sol, int mode, const ModeTolerances& tol = {}) {
  switch (sol.classification[mode]) {
    case ModeClass::PropagatingForward: return true;
    case ModeClass::PropagatingBackward: return false;
    case ModeClass::Evanescent: break;
  }
  const double im = sol.wavenumbers[mode].imag();
  const double scale = std::max(std::abs(sol.omega), 1.0);
  if (std::abs(im) > tol.evanescent * scale) return im > 0.0;
  // real wavenumber with no net power (e.g. purely static content): fall back
  // to the sign of the real part
  return sol.wavenumbers[mode].real() >= 0.0;
}

}  // namespace stmsim
