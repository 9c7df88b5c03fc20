#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "stmsim/dispersion.hpp"
#include "stmsim/medium.hpp"

using namespace stmsim;

namespace {

constexpr double kPi = std::numbers::pi;

ModulationProfile dual(double delta, double kappa_s = 2.6) {
  return make_profile(2.0, 2.0, delta, delta, 1.0, kappa_s, 0.0);
}

std::vector<cplx> values(const BlochSolution& s) { return s.wavenumbers; }

}  // namespace

// ---------------------------------------------------------------------------
// medium

TEST(Medium, StaticVacuumProfileIsValid) {
  const ModulationProfile p = make_profile(1, 1, 0, 0, 1, 1, 0);
  EXPECT_TRUE(p.unmodulated());
  EXPECT_DOUBLE_EQ(p.refractive_index(), 1.0);
}

TEST(Medium, RejectsDepthAboveOne) {
  EXPECT_THROW(make_profile(1, 1, 1.2, 0, 1, 1, 0), ValidationError);
  EXPECT_THROW(make_profile(1, 1, 0, 1.0, 1, 1, 0), ValidationError);
  EXPECT_THROW(make_profile(-1, 1, 0, 0, 1, 1, 0), ValidationError);
  EXPECT_THROW(make_profile(1, 1, 0, 0, 0, 1, 0), ValidationError);
  EXPECT_THROW(make_profile(1, 1, 0, 0, 1, -0.1, 0), ValidationError);
  try {
    make_profile(1, 1, 1.2, 0, 1, 1, 0);
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("delta_e"), std::string::npos);
  }
}

TEST(Medium, DualModulatedProfileIsValid) {
  const ModulationProfile p = make_profile(2, 2, 0.2, 0.2, 1, 0.8, 0);
  EXPECT_DOUBLE_EQ(p.modulation_velocity(), 1.25);
  EXPECT_DOUBLE_EQ(p.phase_velocity(), 0.5);
}

TEST(Medium, SampleMaterialCosineLaw) {
  const ModulationProfile p = make_profile(2, 1, 0.5, 0, 1, 1, 0);
  EXPECT_DOUBLE_EQ(sample_material(p, 0, 0).eps, 3.0);
  EXPECT_NEAR(sample_material(p, 0, kPi / 2.0).eps, 2.0, 1e-15);
  const ModulationProfile s = make_profile(3, 1.5, 0, 0, 1, 1, 0.3);
  for (double z : {0.0, 0.7, -2.0}) {
    for (double t : {0.0, 1.1, 9.0}) {
      EXPECT_EQ(sample_material(s, z, t).eps, 3.0);
      EXPECT_EQ(sample_material(s, z, t).mu, 1.5);
    }
  }
}

TEST(Medium, PeriodicPositiveAndCoMoving) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const ModulationProfile p = make_profile(0.5 + 3 * u(rng), 0.5 + 3 * u(rng), 0.99 * u(rng),
                                             0.99 * u(rng), 0.2 + 2 * u(rng), 0.1 + 3 * u(rng),
                                             2 * kPi * u(rng));
    const double z = 20 * u(rng) - 10, t = 20 * u(rng) - 10;
    const int a = static_cast<int>(7 * u(rng)) - 3, b = static_cast<int>(7 * u(rng)) - 3;
    const MaterialSample m0 = sample_material(p, z, t);
    const MaterialSample m1 =
        sample_material(p, z + a * 2 * kPi / p.kappa_s, t + b * 2 * kPi / p.omega_s);
    EXPECT_NEAR(m0.eps, m1.eps, 1e-12 * p.eps_avg);
    EXPECT_NEAR(m0.mu, m1.mu, 1e-12 * p.mu_avg);
    EXPECT_GT(m0.eps, 0.0);
    EXPECT_GT(m0.mu, 0.0);
    const double tau = 5 * u(rng);
    const MaterialSample m2 = sample_material(p, z + p.modulation_velocity() * tau, t + tau);
    EXPECT_NEAR(m0.eps, m2.eps, 1e-12 * p.eps_avg);
    EXPECT_NEAR(m0.mu, m2.mu, 1e-12 * p.mu_avg);
  }
}

TEST(Medium, IncidentWaveGeometry) {
  const SlabGeometry g = make_geometry(1.0);
  const IncidentWave w = make_wave(1.0, 55.0);
  EXPECT_NEAR(w.tangential_wavenumber(g), 0.573576436, 1e-9);
  EXPECT_NEAR(w.normal_wavenumber(g), 0.819152044, 1e-9);
  EXPECT_THROW(make_wave(1.0, 0.0), ValidationError);
  EXPECT_THROW(make_wave(1.0, 180.0), ValidationError);
  EXPECT_THROW(make_geometry(0.0), ValidationError);
}

TEST(Medium, SonicRegimeFlag) {
  const RegimeReport sonic = classify_regime(dual(0.2, 2.0));
  EXPECT_TRUE(sonic.near_sonic);
  EXPECT_FALSE(sonic.warnings.empty());
  EXPECT_FALSE(classify_regime(dual(0.2, 0.5)).near_sonic);
  EXPECT_FALSE(classify_regime(dual(0.2, 0.0)).near_sonic);
}

// ---------------------------------------------------------------------------
// coupling matrix

TEST(Coupling, UnmodulatedIsDecoupled) {
  const ModulationProfile p = make_profile(2, 3, 0, 0, 1, 0.8, 0);
  const HarmonicIndexSet h{3, 0};
  const CouplingMatrix cm = coupling_matrix(p, 1.3, 0.4, h);
  const int m = h.size();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      for (int bi = 0; bi < 2; ++bi) {
        for (int bj = 0; bj < 2; ++bj) EXPECT_EQ(cm.a(bi * m + i, bj * m + j), cplx(0.0));
      }
    }
  }
}

TEST(Coupling, OffDiagonalLinearInDepth) {
  const HarmonicIndexSet h{4, 0};
  // The u rows couple only through mu; with delta_m = 0 and k_x = 0 the
  // inverse-mu term vanishes, so the eps coupling in the H rows is exactly
  // linear in delta_e.
  const CouplingMatrix a = coupling_matrix(make_profile(2, 2, 0.2, 0, 1, 0.8, 0), 1.0, 0.0, h);
  const CouplingMatrix b = coupling_matrix(make_profile(2, 2, 0.4, 0, 1, 0.8, 0), 1.0, 0.0, h);
  const int m = h.size();
  int checked = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const cplx va = a.a(m + i, j), vb = b.a(m + i, j);
      EXPECT_EQ(a.a(i, m + j), cplx(0.0));  // no mu coupling
      if (std::abs(vb) > 0.0) {
        EXPECT_NEAR(std::abs(va) / std::abs(vb), 0.5, 1e-14);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 0);
}

// ---------------------------------------------------------------------------
// eigen_kappa

TEST(EigenKappa, FoldedLightLinesVacuum) {
  const ModulationProfile p = make_profile(1, 1, 0, 0, 1, 0.8, 0);
  const BlochSolution s = eigen_kappa(p, 1.0, 0.0, 2);
  EXPECT_EQ(s.mode_count(), 10);
  const auto expect = oracle::folded_light_lines(1, 1, 1.0, 1.0, 0.8, 0.0, 2);
  EXPECT_LT(oracle::set_distance(values(s), expect), 1e-10);
}

TEST(EigenKappa, FoldedLightLinesDenseMedium) {
  const ModulationProfile p = make_profile(4, 1, 0, 0, 1, 0.8, 0);
  const BlochSolution s = eigen_kappa(p, 1.0, 0.0, 2);
  const auto expect = oracle::folded_light_lines(4, 1, 1.0, 1.0, 0.8, 0.0, 2);
  EXPECT_LT(oracle::set_distance(values(s), expect), 1e-10);
}

TEST(EigenKappa, UnmodulatedModesAreUnitBasisVectors) {
  const ModulationProfile p = make_profile(2.5, 1.2, 0, 0, 1, 0.7, 0);
  const BlochSolution s = eigen_kappa(p, 1.37, 0.3, 4);
  const auto expect = oracle::folded_light_lines(2.5, 1.2, 1.37, 1.0, 0.7, 0.3, 4);
  EXPECT_LT(oracle::set_distance(values(s), expect), 1e-10);
  for (int j = 0; j < s.mode_count(); ++j) {
    int nonzero = 0;
    for (int n = s.harmonics.first(); n <= s.harmonics.last(); ++n) {
      if (s.harmonic_weight(j, n) > 1e-20) ++nonzero;
    }
    EXPECT_EQ(nonzero, 1) << "mode " << j;
    EXPECT_NEAR(s.modes.col(j).norm(), 1.0, 1e-12);
  }
}

TEST(EigenKappa, ConjugatePairing) {
  for (double w : {0.37, 1.0, 1.6}) {
    const BlochSolution s = eigen_kappa(dual(0.25), w, 0.2, 8);
    std::vector<cplx> a = s.wavenumbers, b;
    for (cplx k : a) b.push_back(std::conj(k));
    EXPECT_LT(oracle::set_distance(a, b), 1e-9) << "omega " << w;
  }
}

TEST(EigenKappa, ResidualOracle) {
  const ModulationProfile p = dual(0.2);
  const HarmonicIndexSet h{10, 0};
  const CouplingMatrix cm = coupling_matrix(p, 1.0, 0.3, h);
  const BlochSolution s = eigen_kappa(p, 1.0, 0.3, h);
  for (int j = 0; j < s.mode_count(); ++j) {
    const CVector r = cm.a * s.modes.col(j) - s.wavenumbers[j] * s.modes.col(j);
    EXPECT_LT(r.norm(), 1e-8);
    EXPECT_NEAR(s.modes.col(j).norm(), 1.0, 1e-12);
  }
}

TEST(EigenKappa, FundamentalTruncationConvergence) {
  const ModulationProfile p = dual(0.2, 0.8);
  const BlochSolution a = eigen_kappa(p, 1.0, 0.0, 8);
  const BlochSolution b = eigen_kappa(p, 1.0, 0.0, 16);
  const int ja = fundamental_mode(a), jb = fundamental_mode(b);
  ASSERT_GE(ja, 0);
  ASSERT_GE(jb, 0);
  EXPECT_LT(std::abs(a.wavenumbers[ja] - b.wavenumbers[jb]), 1e-8);
}

TEST(EigenKappa, TruncationNPlusFourAboveEight) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    const double delta = 0.3 * u(rng);
    const ModulationProfile p = dual(delta, 0.3 + 1.2 * u(rng));  // v_m well above v_p
    const double w = 0.3 + 1.2 * u(rng);
    for (int n : {8, 10}) {
      const BlochSolution a = eigen_kappa(p, w, 0.0, n);
      const BlochSolution b = eigen_kappa(p, w, 0.0, n + 4);
      const int ja = fundamental_mode(a), jb = fundamental_mode(b);
      ASSERT_GE(ja, 0);
      ASSERT_GE(jb, 0);
      EXPECT_LT(std::abs(a.wavenumbers[ja] - b.wavenumbers[jb]), 1e-6);
    }
  }
}

TEST(EigenKappa, DeterminantRootOracle) {
  // Matched modulation 0.15 at omega = omega_s; the oracle locates the root of
  // an independently assembled dispersion determinant near the forward light
  // line and compares it with the eigen-solve at the same truncation.
  const int N = 6;
  const ModulationProfile p = dual(0.15);
  const BlochSolution s = eigen_kappa(p, 1.0, 0.0, N);
  const int j = fundamental_mode(s);
  ASSERT_GE(j, 0);
  const auto f = oracle::dispersion_determinant(2, 2, 0.15, 0.15, 1.0, 2.6, 0.0, 1.0, N);
  const cplx root = oracle::scan_and_polish(f, 1.9, 2.1);
  EXPECT_LT(std::abs(root - s.wavenumbers[j]), 1e-9)
      << "oracle " << root << " eigen " << s.wavenumbers[j];
  // frozen value of the fundamental forward branch
  EXPECT_NEAR(root.real(), 2.0803845176891937, 1e-9);
  EXPECT_NEAR(root.imag(), 0.0, 1e-9);
}

TEST(EigenKappa, HarmonicWindowShiftKeepsPhysicalLadder) {
  const ModulationProfile p = dual(0.2, 0.7);
  const HarmonicIndexSet h0{14, 0}, h1{14, 1};
  const BlochSolution a = eigen_kappa(p, 0.8, 0.1, h0);
  const BlochSolution b = eigen_kappa(p, 0.8, 0.1, h1);
  // kappa_0 labels the same physical Bloch mode in either window. Modes whose
  // dominant harmonic sits well inside both windows must reappear.
  auto nearest = [](cplx k, const BlochSolution& s) {
    double best = std::numeric_limits<double>::infinity();
    for (cplx v : s.wavenumbers) best = std::min(best, std::abs(k - v));
    return best;
  };
  int checked = 0;
  for (const auto* pair : {&a, &b}) {
    const BlochSolution& s = *pair;
    const BlochSolution& other = pair == &a ? b : a;
    for (int j = 0; j < s.mode_count(); ++j) {
      const int d = s.dominant_harmonic(j);
      if (d < -3 || d > 3) continue;
      EXPECT_LT(nearest(s.wavenumbers[j], other), 1e-8) << "mode " << s.wavenumbers[j];
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(EigenKappa, PowerFlowClassification) {
  const BlochSolution s = eigen_kappa(dual(0.2), 1.0, 0.0, 10);
  int fwd = 0, bwd = 0;
  for (int j = 0; j < s.mode_count(); ++j) {
    if (s.classification[j] == ModeClass::PropagatingForward) {
      EXPECT_GT(s.power_flow[j], 0.0);
      ++fwd;
    }
    if (s.classification[j] == ModeClass::PropagatingBackward) {
      EXPECT_LT(s.power_flow[j], 0.0);
      ++bwd;
    }
  }
  EXPECT_GT(fwd, 0);
  EXPECT_GT(bwd, 0);
}

TEST(EigenKappa, SonicInputCarriesWarning) {
  const BlochSolution s = eigen_kappa(dual(0.2, 2.0), 1.0, 0.0, 6);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(EigenKappa, ConvergedRaisesFloorNearSonic) {
  TruncationPolicy pol;
  pol.truncation = 5;
  const BlochSolution s = eigen_kappa_converged(dual(0.1, 2.0), 0.7, 0.0, pol);
  EXPECT_GE(s.harmonics.truncation_order, pol.sonic_floor);
}

// ---------------------------------------------------------------------------
// band structure, ladders, gaps

TEST(Band, UnmodulatedStraightLines) {
  const ModulationProfile p = make_profile(2, 2, 0, 0, 1, 0.8, 0);
  std::vector<double> grid;
  for (int i = 0; i < 21; ++i) grid.push_back(0.1 + 0.05 * i);
  const HarmonicIndexSet h{2, 0};
  const BandDiagram d = band_structure(p, grid, h);
  for (const SweepPoint& pt : d.points) {
    ASSERT_TRUE(pt.ok);
    std::vector<cplx> got;
    for (const BranchPoint& bp : pt.branches) got.push_back(bp.kappa);
    const auto expect = oracle::folded_light_lines(2, 2, pt.parameter, 1.0, 0.8, 0.0, 2);
    EXPECT_LT(oracle::set_distance(got, expect), 1e-10);
  }
  // slope of an interior propagating branch is the medium speed 1/2
  const SweepPoint& mid = d.points[10];
  int with_v = 0;
  for (const BranchPoint& bp : mid.branches) {
    if (!bp.has_group_velocity) continue;
    EXPECT_NEAR(std::abs(bp.group_velocity.v_z), 0.5, 1e-9);
    ++with_v;
  }
  EXPECT_GT(with_v, 0);
}

TEST(Band, ContinuousTrackingOnSmoothSweep) {
  std::vector<double> grid;
  for (int i = 0; i < 41; ++i) grid.push_back(0.2 + 0.01 * i);
  const BandDiagram d = band_structure(dual(0.2), grid, HarmonicIndexSet{6, 0});
  ASSERT_EQ(d.points.size(), grid.size());
  for (const SweepPoint& pt : d.points) EXPECT_TRUE(pt.ok);
  EXPECT_THROW(band_structure(dual(0.2), {1.0, 0.5}, HarmonicIndexSet{2, 0}), ValidationError);
}

TEST(Band, ForwardLadderClustersBackwardSeparates) {
  const BlochSolution s = eigen_kappa(dual(0.2), 1.0, 0.0, 20);
  const LadderSpread ls = ladder_spread(s, 2.6);
  ASSERT_GE(ls.forward.size(), 2u);
  ASSERT_GE(ls.backward.size(), 2u);
  EXPECT_LT(ls.forward_min_gap, ls.backward_min_gap);
  EXPECT_GE(ls.backward_min_gap, 0.5);
  EXPECT_NEAR(ls.forward_center, 1.0, 1e-9);
  // frozen from the eigen-solve at N = 20
  EXPECT_NEAR(ls.forward_min_gap, 0.1720, 5e-4);
  EXPECT_NEAR(ls.backward_min_gap, 1.7625, 5e-4);
}

TEST(Band, NonreciprocityWitnessRandomized) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    const double delta = 0.05 + 0.2 * u(rng);
    const double ks = 2.2 + 0.8 * u(rng);
    const BlochSolution s = eigen_kappa(dual(delta, ks), 1.0, 0.0, 16);
    const LadderSpread ls = ladder_spread(s, ks);
    EXPECT_LT(ls.forward_min_gap, ls.backward_min_gap) << "delta " << delta << " ks " << ks;
  }
}

TEST(Band, MatchedModulationHasNoGapEpsOnlyDoes) {
  // Default profile; the eps-only ladder opens a gap near omega = 0.14.
  const HarmonicIndexSet h{8, 0};
  const BandGap g0 = first_band_gap(dual(0.2), 0.05, 2.0, h, 401);
  const BandGap g1 = first_band_gap(make_profile(2, 2, 0.2, 0.0, 1, 2.6, 0), 0.05, 2.0, h, 401);
  EXPECT_LT(g0.width(), 1e-3);
  EXPECT_GT(g1.width(), 1e-2);
  // frozen from the eigen-solve at N = 8
  EXPECT_NEAR(g1.width(), 0.0381, 1e-3);
}

TEST(Band, TimeOnlyModulationHasNoFrequencyGap) {
  const HarmonicIndexSet h{6, 0};
  const BandGap g = first_band_gap(make_profile(2, 2, 0.2, 0.0, 1, 0.0, 0), 0.3, 0.7, h, 201);
  EXPECT_LT(g.width(), 1e-3);
}

// ---------------------------------------------------------------------------
// isofrequency and group velocity

TEST(Isofrequency, UnmodulatedCircles) {
  const ModulationProfile p = make_profile(1, 1, 0, 0, 1, 0.8, 0);
  std::vector<double> kx;
  for (int i = 0; i < 11; ++i) kx.push_back(-0.5 + 0.1 * i);
  const IsofrequencyDiagram d = isofrequency(p, 1.0, kx, HarmonicIndexSet{2, 0});
  for (const SweepPoint& pt : d.points) {
    ASSERT_TRUE(pt.ok);
    for (const BranchPoint& bp : pt.branches) {
      if (bp.classification == ModeClass::Evanescent) continue;
      const int n = bp.dominant_harmonic;
      const double w = 1.0 + n;
      const double kz = bp.kappa.real() + n * 0.8;
      EXPECT_NEAR(pt.parameter * pt.parameter + kz * kz, w * w, 1e-9);
    }
  }
}

TEST(Isofrequency, LightSpeedGroupVelocity) {
  for (double eps : {1.0, 4.0}) {
    const ModulationProfile p = make_profile(eps, 1, 0, 0, 1, 0.8, 0);
    std::vector<double> kx{-0.2, -0.1, 0.0, 0.1, 0.2, 0.3};
    const IsofrequencyDiagram d = isofrequency(p, 1.0, kx, HarmonicIndexSet{2, 0});
    const int point = 3;
    int checked = 0;
    for (std::size_t b = 0; b < d.points[point].branches.size(); ++b) {
      const BranchPoint& bp = d.points[point].branches[b];
      if (bp.classification == ModeClass::Evanescent || bp.dominant_harmonic != 0) continue;
      const GroupVelocity v = group_velocity(d, static_cast<int>(b), point);
      EXPECT_NEAR(std::hypot(v.v_x, v.v_z), 1.0 / std::sqrt(eps), 1e-6);
      ++checked;
    }
    EXPECT_EQ(checked, 2);
  }
}

TEST(Isofrequency, GroupVelocityRefinementOracle) {
  // central difference at step 1e-4 versus a 10x finer step
  const ModulationProfile p = dual(0.2);
  const HarmonicIndexSet h{8, 0};
  const double kx = 0.3;
  const BlochSolution s = eigen_kappa(p, 1.0, kx, h);
  const int j = fundamental_mode(s);
  ASSERT_GE(j, 0);
  const GroupVelocity a = group_velocity_at(p, 1.0, kx, s.modes.col(j), s.wavenumbers[j], h, 1e-4);
  const GroupVelocity b = group_velocity_at(p, 1.0, kx, s.modes.col(j), s.wavenumbers[j], h, 1e-5);
  EXPECT_LT(std::abs(a.v_z - b.v_z), 1e-4 * std::abs(b.v_z));
  EXPECT_LT(std::abs(a.v_x - b.v_x), 1e-4 * std::hypot(b.v_x, b.v_z));
}

TEST(Isofrequency, ClusteredBranchPropagatesAlongZ) {
  const ModulationProfile p = dual(0.2);
  const double kmax = std::sin(55.0 * kPi / 180.0);
  std::vector<double> kx;
  for (int i = 0; i < 9; ++i) kx.push_back(-kmax + 2 * kmax * i / 8);
  const IsofrequencyDiagram d = isofrequency(p, 1.0, kx, HarmonicIndexSet{10, 0});
  int checked = 0;
  for (const SweepPoint& pt : d.points) {
    ASSERT_TRUE(pt.ok);
    for (const BranchPoint& bp : pt.branches) {
      if (bp.classification != ModeClass::PropagatingForward) continue;
      if (std::abs(bp.kappa.real() / p.kappa_s - 1.0) > 0.5) continue;
      ASSERT_TRUE(bp.has_group_velocity);
      EXPECT_GT(std::abs(bp.group_velocity.v_z), std::abs(bp.group_velocity.v_x));
      ++checked;
    }
  }
  EXPECT_GE(checked, 9);
}

TEST(Isofrequency, ContourResidualOracle) {
  const ModulationProfile p = dual(0.2);
  const HarmonicIndexSet h{8, 0};
  std::vector<double> kx{-0.4, 0.0, 0.4};
  const IsofrequencyDiagram d = isofrequency(p, 1.0, kx, h);
  for (const SweepPoint& pt : d.points) {
    const CouplingMatrix cm = coupling_matrix(p, 1.0, pt.parameter, h);
    for (std::size_t b = 0; b < pt.branches.size(); ++b) {
      const CVector v = pt.modes.col(pt.mode_of_branch[b]);
      EXPECT_LT((cm.a * v - pt.branches[b].kappa * v).norm(), 1e-8);
    }
  }
}

TEST(Isofrequency, DiscontinuousBranchIsReported) {
  const ModulationProfile p = make_profile(1, 1, 0, 0, 1, 0.8, 0);
  const IsofrequencyDiagram d = isofrequency(p, 1.0, {0.0, 0.1, 0.2}, HarmonicIndexSet{2, 0});
  EXPECT_THROW(group_velocity(d, 0, 0), SolverError);
  EXPECT_THROW(group_velocity(d, 999, 1), SolverError);
}
