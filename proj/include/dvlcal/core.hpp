#pragma once

#include <Eigen/Core>
#include <span>
#include <variant>
#include <vector>

#include "dvlcal/error.hpp"

namespace dvlcal {

/// Velocity vector in m/s. Frame is implied by the variable it lives in.
using Vec3 = Eigen::Vector3d;

/// Proper rotation matrix (orthonormal, det = +1).
class Rotation3 {
 public:
  static constexpr double kTolerance = 1e-9;

  Rotation3() : m_(Eigen::Matrix3d::Identity()) {}

  static Rotation3 identity() { return {}; }

  /// Throws kInvalidInput unless `m` is orthonormal with det +1 within 1e-9.
  static Rotation3 from_matrix(const Eigen::Matrix3d& m);

  /// Z-Y-X (yaw, pitch, roll) Euler angles in radians.
  static Rotation3 from_euler(double roll, double pitch, double yaw);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Rotation3 transpose() const;

  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  bool operator==(const Rotation3& other) const { return m_ == other.m_; }

 private:
  explicit Rotation3(const Eigen::Matrix3d& m) : m_(m) {}

  Eigen::Matrix3d m_;
};

enum class EmTag : int { kEm1 = 1, kEm2 = 2, kEm3 = 3, kEm4 = 4 };

const char* to_string(EmTag tag);
EmTag em_tag_from_int(int value);

/// Number of regressed parameters for the tag: 1 for scalar, 3 for vector models.
int output_dim(EmTag tag);

struct ScalarScale {
  double k = 0.0;
};
struct VectorScale {
  Vec3 k = Vec3::Zero();
};
struct ScalarBias {
  double b = 0.0;
};
struct VectorBias {
  Vec3 b = Vec3::Zero();
};

/// One of the four DVL error models. Scales are fractional (0.005 = 0.5%),
/// biases are in m/s. Terms a model does not carry are exact zeros.
class ErrorModel {
 public:
  using Payload = std::variant<ScalarScale, VectorScale, ScalarBias, VectorBias>;

  /// Throws kInvalidInput for non-finite payloads or 1 + k <= 0.
  explicit ErrorModel(Payload payload);

  static ErrorModel scalar_scale(double k) { return ErrorModel(ScalarScale{k}); }
  static ErrorModel vector_scale(const Vec3& k) { return ErrorModel(VectorScale{k}); }
  static ErrorModel scalar_bias(double b) { return ErrorModel(ScalarBias{b}); }
  static ErrorModel vector_bias(const Vec3& b) { return ErrorModel(VectorBias{b}); }

  /// Builds the model for `tag` from its flat parameter vector (length output_dim(tag)).
  static ErrorModel from_parameters(EmTag tag, std::span<const double> params);

  EmTag tag() const;
  const Payload& payload() const { return payload_; }

  /// Per-axis scale, broadcast for EM1 and zero for bias models.
  Vec3 scale() const;
  /// Per-axis bias, broadcast for EM3 and zero for scale models.
  Vec3 bias() const;
  std::vector<double> parameters() const;

 private:
  Payload payload_;
};

struct VelocitySample {
  double t = 0.0;
  Vec3 v_dvl = Vec3::Zero();
  Vec3 v_gnss = Vec3::Zero();
};

/// (1 + k) o (R_b^d v_true) + b + noise, result in the DVL frame.
Vec3 apply_error_model(const Vec3& v_true, const ErrorModel& em,
                       const Rotation3& r_bd, const Vec3& noise = Vec3::Zero());

/// Inverse of apply_error_model with zero noise; returns a body-frame velocity.
/// Throws kDegenerateScale when any 1 + k component is at or below 1e-6.
Vec3 correct(const Vec3& v_meas, const ErrorModel& em, const Rotation3& r_bd);

/// Element-wise DVL minus GNSS. Throws kEmptyInput on an empty series.
std::vector<Vec3> subtract_input(std::span<const VelocitySample> samples);

/// Throws kInvalidInput unless timestamps are non-negative and strictly increasing.
void validate_series(std::span<const VelocitySample> samples);

/// Samples with t in [t_begin, t_end). The series must be time ordered.
std::span<const VelocitySample> slice_time(std::span<const VelocitySample> samples,
                                           double t_begin, double t_end);

}  // namespace dvlcal
