#include "dvlcal/simulation.hpp"

#include <Eigen/LU>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "text_format.hpp"

namespace dvlcal {

int TrajectorySpec::sample_count() const {
  if (!(duration > 0.0) || !(rate > 0.0) || !v_gt.allFinite()) {
    throw Error(ErrorKind::kConfiguration, "trajectory needs duration > 0, rate > 0, finite velocity");
  }
  const double n = duration * rate;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n)) {
    throw Error(ErrorKind::kConfiguration, "duration * rate must be a positive integer");
  }
  return static_cast<int>(rounded);
}

DvlConfig DvlConfig::janus(double scale, double bias, double noise_sigma) {
  DvlConfig cfg;
  cfg.scale = scale;
  cfg.bias = bias;
  cfg.noise_sigma = noise_sigma;
  return cfg;
}

void DvlConfig::validate() const {
  if (beam_yaws.size() < 3) {
    throw Error(ErrorKind::kDegenerateGeometry, "DVL needs at least 3 beams");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::kConfiguration, "DVL noise sigma must be finite and >= 0");
  }
  if (!std::isfinite(scale) || !std::isfinite(bias) || !(1.0 + scale > 0.0)) {
    throw Error(ErrorKind::kConfiguration, "DVL scale/bias must be finite with 1 + scale > 0");
  }
}

void GnssConfig::validate() const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::kConfiguration, "GNSS noise sigma must be finite and >= 0");
  }
}

BeamMatrix beam_matrix(const DvlConfig& cfg) {
  if (cfg.beam_yaws.size() < 3) {
    throw Error(ErrorKind::kDegenerateGeometry, "DVL needs at least 3 beams");
  }
  BeamMatrix a(static_cast<Eigen::Index>(cfg.beam_yaws.size()), 3);
  const double s = std::sin(cfg.beam_pitch);
  const double c = std::cos(cfg.beam_pitch);
  for (std::size_t i = 0; i < cfg.beam_yaws.size(); ++i) {
    const double yaw = cfg.beam_yaws[i];
    a.row(static_cast<Eigen::Index>(i)) << std::cos(yaw) * s, std::sin(yaw) * s, c;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  lu.setThreshold(1e-9);
  if (lu.rank() < 3) {
    throw Error(ErrorKind::kDegenerateGeometry, "beam directions do not span 3D");
  }
  return a;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> beam_pseudo_inverse(const BeamMatrix& a) {
  const Eigen::Matrix3d ata = a.transpose() * a;
  return ata.inverse() * a.transpose();
}

Vec3 effective_velocity_bias(const DvlConfig& cfg) {
  const BeamMatrix a = beam_matrix(cfg);
  return beam_pseudo_inverse(a) * Eigen::VectorXd::Constant(a.rows(), cfg.bias);
}

Vec3 equivalent_vector_bias(const Vec3& v_gt, const DvlConfig& cfg) {
  return cfg.scale * (cfg.r_bd * v_gt) + effective_velocity_bias(cfg);
}

std::vector<Vec3> simulate_dvl(const TrajectorySpec& traj, const DvlConfig& cfg, RngSeed seed) {
  cfg.validate();
  const int n = traj.sample_count();
  const BeamMatrix a = beam_matrix(cfg);
  const Eigen::Matrix<double, 3, Eigen::Dynamic> pinv = beam_pseudo_inverse(a);
  const Eigen::Index beams = a.rows();

  const Vec3 v_dvl_frame = cfg.r_bd * traj.v_gt;
  const Eigen::VectorXd clean_beams =
      (1.0 + cfg.scale) * (a * v_dvl_frame) + Eigen::VectorXd::Constant(beams, cfg.bias);
  const Eigen::Matrix3d r_db = cfg.r_bd.matrix().transpose();

  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd beam(beams);
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < beams; ++j) beam[j] = clean_beams[j] + cfg.noise_sigma * gauss(rng);
    out.push_back(r_db * (pinv * beam));
  }
  return out;
}

std::vector<Vec3> simulate_gnss(const TrajectorySpec& traj, const GnssConfig& cfg, RngSeed seed) {
  cfg.validate();
  const int n = traj.sample_count();
  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double ex = gauss(rng);
    const double ey = gauss(rng);
    const double ez = gauss(rng);
    out.push_back(traj.v_gt + cfg.noise_sigma * Vec3(ex, ey, ez));
  }
  return out;
}

std::vector<VelocitySample> simulate_pair(const TrajectorySpec& traj, const DvlConfig& dvl_cfg,
                                          const GnssConfig& gnss_cfg, RngSeed seed) {
  const auto dvl = simulate_dvl(traj, dvl_cfg, derive_seed(seed, Stream::kDvl));
  const auto gnss = simulate_gnss(traj, gnss_cfg, derive_seed(seed, Stream::kGnss));
  std::vector<VelocitySample> out(dvl.size());
  for (std::size_t i = 0; i < dvl.size(); ++i) {
    out[i] = {static_cast<double>(i) / traj.rate, dvl[i], gnss[i]};
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, std::span<const VelocitySample> samples) {
  std::string line = "t,vdx,vdy,vdz,vgx,vgy,vgz\n";
  os << line;
  for (const auto& s : samples) {
    line.clear();
    detail::append_double(line, s.t);
    for (const Vec3* v : {&s.v_dvl, &s.v_gnss}) {
      for (int j = 0; j < 3; ++j) {
        line.push_back(',');
        detail::append_double(line, (*v)[j]);
      }
    }
    line.push_back('\n');
    os << line;
  }
}

void write_trajectory_csv(const std::string& path, std::span<const VelocitySample> samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  write_trajectory_csv(os, samples);
  if (!os) throw Error(ErrorKind::kIo, "failed writing '" + path + "'");
}

std::vector<VelocitySample> read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::split_csv_line(line).size() != 7) {
    throw Error(ErrorKind::kIo, "trajectory CSV header missing");
  }
  std::vector<VelocitySample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw Error(ErrorKind::kIo, "trajectory CSV row must have 7 fields");
    VelocitySample s;
    s.t = detail::parse_double(f[0]);
    for (int j = 0; j < 3; ++j) {
      s.v_dvl[j] = detail::parse_double(f[1 + j]);
      s.v_gnss[j] = detail::parse_double(f[4 + j]);
    }
    out.push_back(s);
  }
  validate_series(out);
  return out;
}

}  // namespace dvlcal
