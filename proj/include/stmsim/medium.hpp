#pragma once

// Modulated medium, slab geometry and incident-wave descriptions shared by
// every solver. Natural units throughout: c = 1, eps0 = mu0 = 1, and the CLI
// additionally normalizes frequencies by omega_s and wavenumbers by kappa_s.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "stmsim/error.hpp"

namespace stmsim {

/// Traveling-wave modulation of both constitutive parameters:
///   eps(z,t) = eps_avg * (1 + delta_e * cos(omega_s t - kappa_s z + phi))
///   mu(z,t)  = mu_avg  * (1 + delta_m * cos(omega_s t - kappa_s z + phi))
/// z is tangential to the slab; the slab normal is x.
struct ModulationProfile {
  double eps_avg = 1.0;
  double mu_avg = 1.0;
  double delta_e = 0.0;
  double delta_m = 0.0;
  double omega_s = 1.0;
  double kappa_s = 0.0;
  double phi = 0.0;

  bool unmodulated() const noexcept { return delta_e == 0.0 && delta_m == 0.0; }

  double refractive_index() const noexcept { return std::sqrt(eps_avg * mu_avg); }

  /// Phase velocity of the unmodulated medium.
  double phase_velocity() const noexcept { return 1.0 / refractive_index(); }

  /// omega_s / kappa_s; +inf for time-only modulation.
  double modulation_velocity() const noexcept {
    return kappa_s > 0.0 ? omega_s / kappa_s : std::numeric_limits<double>::infinity();
  }

  /// Extremes of the local index sqrt(eps(z,t) mu(z,t)) over a modulation period.
  double min_local_index() const noexcept;
  double max_local_index() const noexcept;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}
inline std::string fmt_value(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}
}  // namespace detail

inline void validate(const ModulationProfile& p) {
  using detail::fmt_value;
  using detail::require;
  require(std::isfinite(p.eps_avg) && p.eps_avg > 0.0,
          "eps_avg must be > 0 (got " + fmt_value(p.eps_avg) + ")");
  require(std::isfinite(p.mu_avg) && p.mu_avg > 0.0,
          "mu_avg must be > 0 (got " + fmt_value(p.mu_avg) + ")");
  require(std::isfinite(p.delta_e) && p.delta_e >= 0.0 && p.delta_e < 1.0,
          "delta_e must lie in [0, 1) (got " + fmt_value(p.delta_e) + ")");
  require(std::isfinite(p.delta_m) && p.delta_m >= 0.0 && p.delta_m < 1.0,
          "delta_m must lie in [0, 1) (got " + fmt_value(p.delta_m) + ")");
  require(std::isfinite(p.omega_s) && p.omega_s > 0.0,
          "omega_s must be > 0 (got " + fmt_value(p.omega_s) + ")");
  require(std::isfinite(p.kappa_s) && p.kappa_s >= 0.0,
          "kappa_s must be >= 0 (got " + fmt_value(p.kappa_s) + ")");
  require(std::isfinite(p.phi), "phi must be finite");
}

inline ModulationProfile make_profile(double eps_avg, double mu_avg, double delta_e,
                                      double delta_m, double omega_s, double kappa_s,
                                      double phi) {
  ModulationProfile p{eps_avg, mu_avg, delta_e, delta_m, omega_s, kappa_s, phi};
  validate(p);
  return p;
}

struct MaterialSample {
  double eps;
  double mu;
};

inline MaterialSample sample_material(const ModulationProfile& p, double z, double t) noexcept {
  const double c = std::cos(p.omega_s * t - p.kappa_s * z + p.phi);
  return {p.eps_avg * (1.0 + p.delta_e * c), p.mu_avg * (1.0 + p.delta_m * c)};
}

// Both factors are positive and increasing in the cosine, so the extremes sit
// at cos = -1 and cos = +1.
inline double ModulationProfile::min_local_index() const noexcept {
  return std::sqrt(eps_avg * mu_avg * (1.0 - delta_e) * (1.0 - delta_m));
}

inline double ModulationProfile::max_local_index() const noexcept {
  return std::sqrt(eps_avg * mu_avg * (1.0 + delta_e) * (1.0 + delta_m));
}

/// Finite slab 0 < x < thickness embedded in a static exterior.
struct SlabGeometry {
  double thickness = 1.0;
  double exterior_eps = 1.0;
  double exterior_mu = 1.0;

  double exterior_index() const noexcept { return std::sqrt(exterior_eps * exterior_mu); }
};

inline void validate(const SlabGeometry& g) {
  detail::require(std::isfinite(g.thickness) && g.thickness > 0.0,
                  "thickness must be > 0 (got " + detail::fmt_value(g.thickness) + ")");
  detail::require(std::isfinite(g.exterior_eps) && g.exterior_eps > 0.0,
                  "exterior_eps must be > 0");
  detail::require(std::isfinite(g.exterior_mu) && g.exterior_mu > 0.0,
                  "exterior_mu must be > 0");
}

inline SlabGeometry make_geometry(double thickness, double exterior_eps = 1.0,
                                  double exterior_mu = 1.0) {
  SlabGeometry g{thickness, exterior_eps, exterior_mu};
  validate(g);
  return g;
}

enum class Polarization { TE };  // E_y, H_x, H_z

/// Plane wave incident from x < 0. theta is measured from +z (the modulation
/// direction) inside the x-z plane: theta < 90 co-propagates with the
/// modulation, theta > 90 counter-propagates.
struct IncidentWave {
  double omega_0 = 1.0;
  double theta_deg = 90.0;
  double amplitude = 1.0;
  Polarization polarization = Polarization::TE;

  double theta_rad() const noexcept { return theta_deg * std::numbers::pi / 180.0; }

  double tangential_wavenumber(const SlabGeometry& g) const noexcept {
    return omega_0 * g.exterior_index() * std::cos(theta_rad());
  }
  double normal_wavenumber(const SlabGeometry& g) const noexcept {
    return omega_0 * g.exterior_index() * std::sin(theta_rad());
  }
};

inline void validate(const IncidentWave& w) {
  detail::require(std::isfinite(w.omega_0) && w.omega_0 > 0.0, "omega_0 must be > 0");
  detail::require(std::isfinite(w.theta_deg) && w.theta_deg > 0.0 && w.theta_deg < 180.0,
                  "theta must lie in (0, 180) degrees (got " + detail::fmt_value(w.theta_deg) +
                      ")");
  detail::require(std::sin(w.theta_rad()) > 0.0, "incident wave needs a normal component");
  detail::require(std::isfinite(w.amplitude), "amplitude must be finite");
}

inline IncidentWave make_wave(double omega_0, double theta_deg, double amplitude = 1.0) {
  IncidentWave w{omega_0, theta_deg, amplitude, Polarization::TE};
  validate(w);
  return w;
}

/// Where the modulation speed sits relative to the medium's wave speeds.
struct RegimeReport {
  double modulation_velocity = 0.0;
  double phase_velocity = 0.0;
  double relative_detuning = 0.0;  // |v_m - v_p| / v_p
  bool near_sonic = false;         // relative_detuning < 0.05
  bool luminal_band = false;       // v_m inside [1/n_max, 1/n_min]
  std::vector<std::string> warnings;
};

inline constexpr double kSonicThreshold = 0.05;

inline RegimeReport classify_regime(const ModulationProfile& p) {
  RegimeReport r;
  r.modulation_velocity = p.modulation_velocity();
  r.phase_velocity = p.phase_velocity();
  if (!std::isfinite(r.modulation_velocity)) {
    r.relative_detuning = std::numeric_limits<double>::infinity();
    return r;
  }
  r.relative_detuning = std::abs(r.modulation_velocity - r.phase_velocity) / r.phase_velocity;
  r.near_sonic = r.relative_detuning < kSonicThreshold;
  if (!p.unmodulated()) {
    const double v_slow = 1.0 / p.max_local_index();
    const double v_fast = 1.0 / p.min_local_index();
    r.luminal_band = r.modulation_velocity >= v_slow && r.modulation_velocity <= v_fast;
  }
  if (r.near_sonic) {
    r.warnings.push_back("near-sonic modulation: |v_m - v_p|/v_p = " +
                         detail::fmt_value(r.relative_detuning) +
                         " < 0.05; harmonic series converges slowly");
  }
  if (r.luminal_band) {
    r.warnings.push_back(
        "modulation velocity lies inside the local phase-velocity band [1/n_max, 1/n_min]; "
        "forward waves can lock to the modulation and a bounded Floquet steady state may "
        "not exist");
  }
  return r;
}

}  // namespace stmsim
