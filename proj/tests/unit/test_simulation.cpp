#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "dvlcal/simulation.hpp"

using namespace dvlcal;

namespace {

// Beam directions written out from the geometry, independent of beam_matrix().
Eigen::Matrix<double, 4, 3> janus_rows() {
  const double th = 20.0 * kDegToRad;
  Eigen::Matrix<double, 4, 3> a;
  const double yaws[4] = {45.0, 135.0, 225.0, 315.0};
  for (int j = 0; j < 4; ++j) {
    const double psi = yaws[j] * kDegToRad;
    a.row(j) << std::cos(psi) * std::sin(th), std::sin(psi) * std::sin(th), std::cos(th);
  }
  return a;
}

// Beam readings -> velocity by a QR least-squares solve.
Vec3 lsq_oracle(const Eigen::Vector4d& beams) { return janus_rows().colPivHouseholderQr().solve(beams); }

}  // namespace

TEST(BeamGeometryTest, UnitRowsAndDiagonalNormalMatrix) {
  const auto cfg = DvlConfig::janus(0, 0, 0);
  const BeamMatrix a = beam_matrix(cfg);
  ASSERT_EQ(a.rows(), 4);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(a.row(j).norm(), 1.0, 1e-15);
  const Eigen::Matrix3d ata = a.transpose() * a;
  const double s = std::sin(cfg.beam_pitch), c = std::cos(cfg.beam_pitch);
  const Eigen::Vector3d diag(2 * s * s, 2 * s * s, 4 * c * c);
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) EXPECT_NEAR(ata(r, col), r == col ? diag[r] : 0.0, 1e-15);
  }
}

TEST(BeamGeometryTest, DegenerateGeometryRejected) {
  auto cfg = DvlConfig::janus(0, 0, 0);
  cfg.beam_yaws = {0.3, 0.3, 0.3};
  try {
    beam_matrix(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateGeometry);
  }
}

TEST(SimulateDvlTest, NoiseFreeIdentity) {
  const TrajectorySpec traj{Vec3(1.7, -0.3, 0.05), 50.0, 1.0};
  const auto out = simulate_dvl(traj, DvlConfig::janus(0, 0, 0), RngSeed{1});
  ASSERT_EQ(out.size(), 50u);
  for (const auto& v : out) EXPECT_LE((v - traj.v_gt).norm(), 1e-12);
}

TEST(SimulateDvlTest, UniformScaleMapsToVelocityScale) {
  const TrajectorySpec traj{Vec3(2, 0, 0), 20.0, 1.0};
  const auto out = simulate_dvl(traj, DvlConfig::janus(0.005, 0, 0), RngSeed{1});
  const Vec3 oracle = lsq_oracle(1.005 * janus_rows() * traj.v_gt);
  for (const auto& v : out) {
    EXPECT_NEAR(v.x(), 2.01, 1e-12);
    EXPECT_LE((v - oracle).norm(), 1e-12);
  }
  const TrajectorySpec oblique{Vec3(1.3, 0.4, -0.2), 5.0, 1.0};
  for (const auto& v : simulate_dvl(oblique, DvlConfig::janus(0.012, 0, 0), RngSeed{2})) {
    EXPECT_NEAR(v.norm() / oblique.v_gt.norm(), 1.012, 1e-10);
  }
}

TEST(SimulateDvlTest, BeamBiasGivesConstantOffset) {
  const TrajectorySpec traj{Vec3(1.55, 0.3, -0.08), 30.0, 1.0};
  const auto cfg = DvlConfig::janus(0, 0.007, 0);
  const auto out = simulate_dvl(traj, cfg, RngSeed{4});
  const Vec3 offset = lsq_oracle(Eigen::Vector4d::Constant(0.007));
  for (const auto& v : out) EXPECT_LE((v - traj.v_gt - offset).norm(), 1e-12);
  EXPECT_LE((effective_velocity_bias(cfg) - offset).norm(), 1e-14);
  EXPECT_NEAR(offset.z(), 0.007 / std::cos(20.0 * kDegToRad), 1e-15);
  EXPECT_NEAR(offset.x(), 0.0, 1e-15);
}

TEST(SimulateDvlTest, NoisyReconstructionMatchesLeastSquaresOracle) {
  const TrajectorySpec traj{Vec3(2.0, -0.08, -0.01), 200.0, 1.0};
  const auto cfg = DvlConfig::janus(0.01, 0.007, 0.02);
  const RngSeed seed{99};
  const auto out = simulate_dvl(traj, cfg, seed);
  // Same draws as the simulator: one standard normal per beam, beams in order.
  Rng rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Vector4d clean = 1.01 * janus_rows() * traj.v_gt + Eigen::Vector4d::Constant(0.007);
  for (const auto& v : out) {
    Eigen::Vector4d beams;
    for (int j = 0; j < 4; ++j) beams[j] = clean[j] + 0.02 * g(rng);
    EXPECT_LE((v - lsq_oracle(beams)).norm(), 1e-10);
  }
}

TEST(SimulateDvlTest, EquivalentBiasCoversScaleAndBias) {
  const Vec3 v(1.9, -0.05, -0.0084);
  const auto cfg = DvlConfig::janus(0.01, 0.007, 0.0);
  const auto out = simulate_dvl(TrajectorySpec{v, 3.0, 1.0}, cfg, RngSeed{1});
  for (const auto& m : out) EXPECT_LE((m - v - equivalent_vector_bias(v, cfg)).norm(), 1e-12);
}

TEST(SimulateGnssTest, NoiseStatistics) {
  const TrajectorySpec traj{Vec3(2, 0, 0), 100000.0, 1.0};
  const auto out = simulate_gnss(traj, GnssConfig{0.005}, RngSeed{12});
  for (int axis = 0; axis < 3; ++axis) {
    double mean = 0.0;
    for (const auto& v : out) mean += v[axis] - traj.v_gt[axis];
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (const auto& v : out) var += std::pow(v[axis] - traj.v_gt[axis] - mean, 2);
    const double sd = std::sqrt(var / static_cast<double>(out.size() - 1));
    EXPECT_GE(sd, 0.0048);
    EXPECT_LE(sd, 0.0052);
  }
  for (const auto& v : simulate_gnss(TrajectorySpec{Vec3(1, 2, 3), 10.0, 1.0}, GnssConfig{0.0}, RngSeed{1})) {
    EXPECT_EQ(v, Vec3(1, 2, 3));
  }
}

TEST(SimulatePairTest, LengthTimestampsAndDeterminism) {
  const TrajectorySpec traj{Vec3(2, 0.1, 0), 200.0, 1.0};
  const auto cfg = DvlConfig::janus(0.005, 0.001, 0.008);
  const auto a = simulate_pair(traj, cfg, GnssConfig{}, RngSeed{7});
  const auto b = simulate_pair(traj, cfg, GnssConfig{}, RngSeed{7});
  const auto c = simulate_pair(traj, cfg, GnssConfig{}, RngSeed{8});
  ASSERT_EQ(a.size(), 200u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].t, static_cast<double>(i));
    EXPECT_EQ(a[i].v_dvl, b[i].v_dvl);
    EXPECT_EQ(a[i].v_gnss, b[i].v_gnss);
    differs = differs || a[i].v_dvl != c[i].v_dvl || a[i].v_gnss != c[i].v_gnss;
  }
  EXPECT_TRUE(differs);

  const auto quiet = simulate_pair(traj, DvlConfig::janus(0, 0, 0), GnssConfig{0.0}, RngSeed{1});
  for (const auto& s : quiet) {
    EXPECT_LE((s.v_dvl - traj.v_gt).norm(), 1e-12);
    EXPECT_EQ(s.v_gnss, traj.v_gt);
  }
}

TEST(TrajectorySpecTest, SampleCountValidation) {
  EXPECT_EQ((TrajectorySpec{Vec3::Zero(), 1800.0, 1.0}).sample_count(), 1800);
  EXPECT_EQ((TrajectorySpec{Vec3::Zero(), 10.0, 2.0}).sample_count(), 20);
  EXPECT_THROW((TrajectorySpec{Vec3::Zero(), 10.5, 1.0}).sample_count(), Error);
  EXPECT_THROW((TrajectorySpec{Vec3::Zero(), 0.0, 1.0}).sample_count(), Error);
  EXPECT_THROW((TrajectorySpec{Vec3::Zero(), 10.0, -1.0}).sample_count(), Error);
}

TEST(TrajectoryCsvTest, RoundTripIsExact) {
  const auto s = simulate_pair(TrajectorySpec{Vec3(1.9, -0.05, -0.0084), 25.0, 1.0},
                               DvlConfig::janus(0.01, 0.007, 0.02), GnssConfig{}, RngSeed{3});
  std::stringstream ss;
  write_trajectory_csv(ss, s);
  EXPECT_EQ(ss.str().substr(0, 26), "t,vdx,vdy,vdz,vgx,vgy,vgz\n");
  const auto back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].t, s[i].t);
    EXPECT_EQ(back[i].v_dvl, s[i].v_dvl);
    EXPECT_EQ(back[i].v_gnss, s[i].v_gnss);
  }
  std::stringstream bad("t,vdx,vdy,vdz,vgx,vgy,vgz\n0,1,2,3,4,5\n");
  EXPECT_THROW(read_trajectory_csv(bad), Error);
}
