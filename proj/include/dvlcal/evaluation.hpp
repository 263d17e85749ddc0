#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dvlcal/dataset.hpp"
#include "dvlcal/network.hpp"

namespace dvlcal {

struct RmseResult {
  double value = 0.0;  ///< m/s
  int n_epochs = 0;
};

/// sqrt(sum_i |truth_i - corrected_i|^2 / N). The axis errors are summed, not
/// averaged. Throws kShapeMismatch on unequal lengths, kEmptyInput on N = 0.
RmseResult rmse(std::span<const Vec3> truth, std::span<const Vec3> corrected);

/// Corrects every DVL sample of `traj` with `em` and scores it against v_gt.
RmseResult correction_rmse(const SimulatedTrajectory& traj, const ErrorModel& em, const Rotation3& r_bd);

/// A calibration method: maps the leading calibration window of one DVL to an
/// error model. The DvlSuite is there for oracle methods that read the truth.
struct Method {
  std::string name;
  double window_seconds = 100.0;
  std::function<ErrorModel(std::span<const VelocitySample> window, const DvlSuite& dvl)> calibrate;
};

/// Norm-ratio scale over a 100 s window.
Method baseline_method();
/// Network estimate averaged over non-overlapping windows of net.window_n().
/// Holds a reference: `net` must outlive the method.
Method network_method(const CalibrationNet& net, double window_seconds = 100.0);
/// True beam scale as a scalar-scale model.
Method oracle_scale_method();
/// True equivalent vector bias of the calibration trajectory.
Method oracle_bias_method();

struct CalibrationOutcome {
  ErrorModel model = ErrorModel::scalar_scale(0.0);
  RmseResult residual;
};

/// Residual interval of the calibration trajectory, [begin, end) in seconds.
struct ResidualSpan {
  double begin = 100.0;
  double end = 200.0;
  bool operator==(const ResidualSpan&) const = default;
};

/// Estimates on the first window_seconds of the calibration run and scores the
/// correction on `residual`, which stays fixed so windows are comparable.
/// Throws kInsufficientData when either slice is short.
CalibrationOutcome calibration_phase(const DvlSuite& dvl, const Method& method, double window_seconds,
                                     ResidualSpan residual = {});

struct ConvergenceRow {
  std::string dvl_type;
  double baseline_seconds = 100.0;
  double ours_seconds = 100.0;
  double improvement_percent = 0.0;  ///< 100 (baseline - ours) / baseline
  double baseline_residual = 0.0;    ///< mean over runs
  std::vector<double> window_seconds;
  std::vector<double> window_residual;  ///< mean over runs, per window
};

/// Smallest window whose residual is <= the baseline's, else (100 s, 0 %).
ConvergenceRow convergence_row(const std::string& dvl_type, double baseline_seconds, double baseline_residual,
                               std::span<const double> window_seconds, std::span<const double> window_residual);

struct MethodRow {
  std::string method;
  std::vector<double> trajectory_rmse;  ///< mean over runs, one per evaluation trajectory
  double mean = 0.0;                    ///< mean of trajectory_rmse
};

struct DvlRow {
  std::string dvl_type;
  std::vector<MethodRow> methods;
};

struct EvalReport {
  int runs = 0;
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> run_seeds;
  std::vector<DvlRow> rmse;
  std::vector<ConvergenceRow> convergence;  ///< empty unless a convergence study ran
  std::string version;
  std::string config_hash;
  bool canonical = false;  ///< runs == 200
};

inline constexpr int kCanonicalRuns = 200;

/// Seed of Monte-Carlo run `run`; each run regenerates every noise realization.
RngSeed run_seed(RngSeed master, int run);

/// Per run: simulate the suite, calibrate every method on the calibration run,
/// correct each evaluation trajectory. Cells are means over runs, reduced in
/// run order so the result does not depend on `threads`.
EvalReport evaluate_suite(const TestSuiteSpec& spec, std::span<const Method> methods, int runs, RngSeed seed,
                          int threads = 1);

/// One row per DVL type comparing `ours` over `windows` against `baseline` at
/// its own window.
std::vector<ConvergenceRow> convergence_study(const TestSuiteSpec& spec, const Method& baseline, const Method& ours,
                                              std::span<const double> windows, int runs, RngSeed seed,
                                              int threads = 1, ResidualSpan residual = {});

std::string report_to_json(const EvalReport& report);
/// dvl_type,method,traj_1..traj_m,mean
std::string rmse_table_csv(const EvalReport& report);
/// dvl_type,baseline_seconds,ours_seconds,improvement_percent,baseline_residual,residual_<w>s...
std::string convergence_table_csv(const EvalReport& report);

}  // namespace dvlcal
