#pragma once

#include <span>
#include <vector>

#include "dvlcal/core.hpp"

namespace dvlcal {

/// Norm-ratio scale estimate over a calibration window.
struct ScaleEstimate {
  double k_bar = 0.0;             ///< mean of per_epoch
  std::vector<double> per_epoch;  ///< |v_dvl,t| / |R v_gnss,t| - 1
  double window_seconds = 0.0;    ///< epochs * sampling interval
};

/// GNSS speeds below this abort the estimate.
inline constexpr double kMinReferenceSpeed = 1e-6;

/// Per-epoch norm ratio and its mean. Throws kEmptyInput on no samples and
/// kDivisionDegenerate (naming the epoch) when |R v_gnss| <= 1e-6 m/s.
ScaleEstimate estimate_scale_direct(std::span<const VelocitySample> samples, const Rotation3& r_bd);

/// estimate_scale_direct wrapped as a scalar-scale (EM1) model.
ErrorModel baseline_calibrate(std::span<const VelocitySample> cal, const Rotation3& r_bd);

}  // namespace dvlcal
