#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "dvlcal/core.hpp"
#include "dvlcal/random.hpp"

namespace dvlcal {

/// Constant-velocity straight-line run sampled at a fixed rate.
struct TrajectorySpec {
  Vec3 v_gt = Vec3::Zero();  ///< ground truth, body frame [m/s]
  double duration = 0.0;     ///< [s]
  double rate = 1.0;         ///< [Hz]

  /// duration * rate; throws kConfiguration unless it is a positive integer.
  int sample_count() const;
};

inline constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

struct DvlConfig {
  double beam_pitch = 20.0 * kDegToRad;  ///< beam tilt from the vertical [rad]
  std::vector<double> beam_yaws = {45.0 * kDegToRad, 135.0 * kDegToRad, 225.0 * kDegToRad,
                                   315.0 * kDegToRad};
  double scale = 0.0;        ///< fractional, applied to every beam
  double bias = 0.0;         ///< [m/s], added to every beam
  double noise_sigma = 0.0;  ///< per-beam white noise std [m/s]
  Rotation3 r_bd;            ///< body -> DVL

  /// Janus 4-beam geometry with the given beam-level errors.
  static DvlConfig janus(double scale, double bias, double noise_sigma);

  void validate() const;
};

struct GnssConfig {
  double noise_sigma = 0.005;  ///< per-axis white noise std [m/s]

  void validate() const;
  bool operator==(const GnssConfig&) const = default;
};

using BeamMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Unit beam directions, one row per beam. Throws kDegenerateGeometry on rank < 3.
BeamMatrix beam_matrix(const DvlConfig& cfg);

/// Least-squares reconstruction operator (A^T A)^-1 A^T.
Eigen::Matrix<double, 3, Eigen::Dynamic> beam_pseudo_inverse(const BeamMatrix& a);

/// Velocity-level offset (DVL frame) produced by the constant beam bias.
Vec3 effective_velocity_bias(const DvlConfig& cfg);

/// Noise-free DVL-minus-truth offset on a constant-velocity run, DVL frame:
/// scale * R v_gt + effective_velocity_bias. This is the vector bias an EM4 model
/// must carry to cancel the DVL error on that run.
Vec3 equivalent_vector_bias(const Vec3& v_gt, const DvlConfig& cfg);

std::vector<Vec3> simulate_dvl(const TrajectorySpec& traj, const DvlConfig& cfg, RngSeed seed);
std::vector<Vec3> simulate_gnss(const TrajectorySpec& traj, const GnssConfig& cfg, RngSeed seed);

/// DVL and GNSS series on independent streams derived from `seed`; t = i / rate.
std::vector<VelocitySample> simulate_pair(const TrajectorySpec& traj, const DvlConfig& dvl_cfg,
                                          const GnssConfig& gnss_cfg, RngSeed seed);

/// Header `t,vdx,vdy,vdz,vgx,vgy,vgz`, one row per epoch.
void write_trajectory_csv(std::ostream& os, std::span<const VelocitySample> samples);
void write_trajectory_csv(const std::string& path, std::span<const VelocitySample> samples);
std::vector<VelocitySample> read_trajectory_csv(std::istream& is);

}  // namespace dvlcal
