#include "dvlcal/baseline.hpp"

#include <string>

namespace dvlcal {

ScaleEstimate estimate_scale_direct(std::span<const VelocitySample> samples, const Rotation3& r_bd) {
  if (samples.empty()) {
    throw Error(ErrorKind::kEmptyInput, "scale estimation needs at least one sample");
  }
  ScaleEstimate est;
  est.per_epoch.reserve(samples.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < samples.size(); ++t) {
    const double ref = (r_bd * samples[t].v_gnss).norm();
    if (!(ref > kMinReferenceSpeed)) {
      throw Error(ErrorKind::kDivisionDegenerate,
                  "GNSS speed below 1e-6 m/s at epoch " + std::to_string(t) +
                      " (t = " + std::to_string(samples[t].t) + " s)");
    }
    const double k_t = samples[t].v_dvl.norm() / ref - 1.0;
    est.per_epoch.push_back(k_t);
    sum += k_t;
  }
  const auto count = static_cast<double>(samples.size());
  est.k_bar = sum / count;
  if (samples.size() > 1) {
    const double dt = (samples.back().t - samples.front().t) / (count - 1.0);
    est.window_seconds = dt * count;
  }
  return est;
}

ErrorModel baseline_calibrate(std::span<const VelocitySample> cal, const Rotation3& r_bd) {
  return ErrorModel::scalar_scale(estimate_scale_direct(cal, r_bd).k_bar);
}

}  // namespace dvlcal
