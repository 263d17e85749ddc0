#include "dvlcal/core.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <string>

namespace dvlcal {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput:
      return "invalid-input";
    case ErrorKind::kDegenerateScale:
      return "degenerate-scale";
    case ErrorKind::kEmptyInput:
      return "empty-input";
    case ErrorKind::kDegenerateGeometry:
      return "degenerate-geometry";
    case ErrorKind::kDivisionDegenerate:
      return "division-degenerate";
    case ErrorKind::kConfiguration:
      return "configuration";
    case ErrorKind::kShapeMismatch:
      return "shape-mismatch";
    case ErrorKind::kInsufficientData:
      return "insufficient-data";
    case ErrorKind::kDivergence:
      return "divergence";
    case ErrorKind::kIo:
      return "io";
  }
  return "unknown";
}

namespace {

constexpr double kMinScaleFactor = 1e-6;

bool finite(const Vec3& v) { return v.allFinite(); }

void require_finite(const Vec3& v, const char* what) {
  if (!finite(v)) {
    throw Error(ErrorKind::kInvalidInput, std::string(what) + " has non-finite components");
  }
}

}  // namespace

Rotation3 Rotation3::from_matrix(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::kInvalidInput, "rotation matrix has non-finite entries");
  }
  const double ortho_err = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > kTolerance) {
    throw Error(ErrorKind::kInvalidInput, "rotation matrix is not orthonormal");
  }
  if (std::abs(m.determinant() - 1.0) > kTolerance) {
    throw Error(ErrorKind::kInvalidInput, "rotation matrix determinant is not +1");
  }
  return Rotation3(m);
}

Rotation3 Rotation3::from_euler(double roll, double pitch, double yaw) {
  const Eigen::Matrix3d m = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  return from_matrix(m);
}

Rotation3 Rotation3::transpose() const { return Rotation3(Eigen::Matrix3d(m_.transpose())); }

const char* to_string(EmTag tag) {
  switch (tag) {
    case EmTag::kEm1:
      return "EM1";
    case EmTag::kEm2:
      return "EM2";
    case EmTag::kEm3:
      return "EM3";
    case EmTag::kEm4:
      return "EM4";
  }
  return "EM?";
}

EmTag em_tag_from_int(int value) {
  if (value < 1 || value > 4) {
    throw Error(ErrorKind::kConfiguration, "error model must be 1..4, got " + std::to_string(value));
  }
  return static_cast<EmTag>(value);
}

int output_dim(EmTag tag) { return (tag == EmTag::kEm1 || tag == EmTag::kEm3) ? 1 : 3; }

ErrorModel::ErrorModel(Payload payload) : payload_(std::move(payload)) {
  const Vec3 k = scale();
  const Vec3 b = bias();
  if (!finite(k) || !finite(b)) {
    throw Error(ErrorKind::kInvalidInput, "error model payload is not finite");
  }
  if (((Vec3::Ones() + k).array() <= 0.0).any()) {
    throw Error(ErrorKind::kInvalidInput, "error model requires 1 + k > 0 on every axis");
  }
}

ErrorModel ErrorModel::from_parameters(EmTag tag, std::span<const double> params) {
  if (static_cast<int>(params.size()) != output_dim(tag)) {
    throw Error(ErrorKind::kShapeMismatch, std::string(to_string(tag)) + " expects " +
                                               std::to_string(output_dim(tag)) + " parameters");
  }
  switch (tag) {
    case EmTag::kEm1:
      return scalar_scale(params[0]);
    case EmTag::kEm2:
      return vector_scale(Vec3(params[0], params[1], params[2]));
    case EmTag::kEm3:
      return scalar_bias(params[0]);
    case EmTag::kEm4:
      return vector_bias(Vec3(params[0], params[1], params[2]));
  }
  throw Error(ErrorKind::kInvalidInput, "unknown error model tag");
}

EmTag ErrorModel::tag() const {
  return static_cast<EmTag>(static_cast<int>(payload_.index()) + 1);
}

Vec3 ErrorModel::scale() const {
  if (const auto* s = std::get_if<ScalarScale>(&payload_)) return Vec3::Constant(s->k);
  if (const auto* v = std::get_if<VectorScale>(&payload_)) return v->k;
  return Vec3::Zero();
}

Vec3 ErrorModel::bias() const {
  if (const auto* s = std::get_if<ScalarBias>(&payload_)) return Vec3::Constant(s->b);
  if (const auto* v = std::get_if<VectorBias>(&payload_)) return v->b;
  return Vec3::Zero();
}

std::vector<double> ErrorModel::parameters() const {
  return std::visit(
      [](const auto& p) -> std::vector<double> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ScalarScale>) return {p.k};
        if constexpr (std::is_same_v<T, VectorScale>) return {p.k.x(), p.k.y(), p.k.z()};
        if constexpr (std::is_same_v<T, ScalarBias>) return {p.b};
        if constexpr (std::is_same_v<T, VectorBias>) return {p.b.x(), p.b.y(), p.b.z()};
      },
      payload_);
}

Vec3 apply_error_model(const Vec3& v_true, const ErrorModel& em, const Rotation3& r_bd,
                       const Vec3& noise) {
  require_finite(v_true, "true velocity");
  require_finite(noise, "noise");
  const Vec3 one_plus_k = Vec3::Ones() + em.scale();
  return one_plus_k.cwiseProduct(r_bd * v_true) + em.bias() + noise;
}

Vec3 correct(const Vec3& v_meas, const ErrorModel& em, const Rotation3& r_bd) {
  require_finite(v_meas, "measured velocity");
  const Vec3 one_plus_k = Vec3::Ones() + em.scale();
  if ((one_plus_k.array() <= kMinScaleFactor).any()) {
    throw Error(ErrorKind::kDegenerateScale, "1 + k is at or below 1e-6");
  }
  return r_bd.matrix().transpose() * (v_meas - em.bias()).cwiseQuotient(one_plus_k);
}

std::vector<Vec3> subtract_input(std::span<const VelocitySample> samples) {
  if (samples.empty()) {
    throw Error(ErrorKind::kEmptyInput, "subtract_input needs at least one sample");
  }
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.v_dvl - s.v_gnss);
  return out;
}

void validate_series(std::span<const VelocitySample> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.t) || s.t < 0.0) {
      throw Error(ErrorKind::kInvalidInput, "sample " + std::to_string(i) + " has invalid time");
    }
    if (i > 0 && !(s.t > samples[i - 1].t)) {
      throw Error(ErrorKind::kInvalidInput,
                  "timestamps must be strictly increasing at sample " + std::to_string(i));
    }
    require_finite(s.v_dvl, "DVL velocity");
    require_finite(s.v_gnss, "GNSS velocity");
  }
}

std::span<const VelocitySample> slice_time(std::span<const VelocitySample> samples, double t_begin,
                                           double t_end) {
  auto by_time = [](const VelocitySample& s, double t) { return s.t < t; };
  const auto first = std::lower_bound(samples.begin(), samples.end(), t_begin, by_time);
  const auto last = std::lower_bound(first, samples.end(), t_end, by_time);
  return {first, last};
}

}  // namespace dvlcal
