#pragma once

#include <string>
#include <vector>

#include "dvlcal/dataset.hpp"
#include "dvlcal/evaluation.hpp"
#include "dvlcal/network.hpp"

namespace dvlcal {

struct EvalConfig {
  int runs = kCanonicalRuns;
  std::vector<double> nn_windows = {10.0, 20.0, 50.0, 80.0, 100.0};
  double baseline_window = 100.0;
  double nn_window = 100.0;  ///< window used for the evaluation-trajectory table
  ResidualSpan residual;
  bool operator==(const EvalConfig&) const = default;
};

/// Everything a pipeline run depends on. Defaults are the reference protocol.
struct ExperimentConfig {
  GridSpec grid;
  WindowingSpec windowing;
  TestSuiteSpec suite;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  double scale_fraction = 1.0;
  int threads = 0;  ///< 0 = hardware concurrency

  void validate() const;
  int resolved_threads() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses a JSON document; keys that are absent keep their defaults.
/// Throws kConfiguration on malformed input.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace dvlcal
