#pragma once

// Central finite-difference check of backward() against forward().

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dvlcal/network.hpp"

namespace dvlcal::testing {

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Random windows of length n with values near a cruising velocity.
inline std::vector<WindowTensor> random_windows(int count, int n, RngSeed seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<WindowTensor> out;
  for (int b = 0; b < count; ++b) {
    std::vector<double> stacked(static_cast<std::size_t>(6 * n));
    for (auto& v : stacked) v = g(rng);
    out.emplace_back(n, std::move(stacked));
  }
  return out;
}

/// Loss = sum(output .* weights). Dropout masks are redrawn from the same seed on
/// every evaluation so each perturbed forward pass sees identical masks.
inline double probe_loss(const CalibrationNet& net, std::span<const WindowTensor> batch, Mode mode,
                         RngSeed dropout_seed, const RowMatrix& weights) {
  Rng rng = make_rng(dropout_seed);
  const RowMatrix out = forward(net, batch, mode, mode == Mode::kTrain ? &rng : nullptr);
  return out.cwiseProduct(weights).sum();
}

/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// `stride` > 1 samples every stride-th entry of each parameter tensor.
inline GradCheckResult check_gradients(CalibrationNet net, std::span<const WindowTensor> batch, Mode mode,
                                       RngSeed seed, double eps = 1e-5, double floor = 1e-6,
                                       std::size_t stride = 1) {
  Rng wrng = make_rng(derive_seed(seed, {7}));
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix weights(static_cast<Eigen::Index>(batch.size()), net.output_dim());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = g(wrng);

  const RngSeed dropout_seed = derive_seed(seed, {11});
  Rng rng = make_rng(dropout_seed);
  ForwardTape tape;
  forward(net, batch, mode, mode == Mode::kTrain ? &rng : nullptr, &tape);
  const auto grads = backward(net, tape, weights);

  GradCheckResult res;
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    auto& data = net.params()[p].data;
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = probe_loss(net, batch, mode, dropout_seed, weights);
      data[i] = saved - eps;
      const double down = probe_loss(net, batch, mode, dropout_seed, weights);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[p].data[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = net.param_names()[p] + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace dvlcal::testing
