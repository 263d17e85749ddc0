#include "dvlcal/evaluation.hpp"

#include <cmath>

#include "dvlcal/baseline.hpp"
#include "json.hpp"
#include "parallel.hpp"
#include "text_format.hpp"

namespace dvlcal {

using nlohmann::json;

RmseResult rmse(std::span<const Vec3> truth, std::span<const Vec3> corrected) {
  if (truth.size() != corrected.size()) {
    throw Error(ErrorKind::kShapeMismatch, "rmse: " + std::to_string(truth.size()) + " truth epochs vs " +
                                               std::to_string(corrected.size()) + " corrected");
  }
  if (truth.empty()) throw Error(ErrorKind::kEmptyInput, "rmse: empty series");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sum += (truth[i] - corrected[i]).squaredNorm();
  return {std::sqrt(sum / static_cast<double>(truth.size())), static_cast<int>(truth.size())};
}

namespace {

RmseResult score(std::span<const VelocitySample> samples, const Vec3& v_gt, const ErrorModel& em,
                 const Rotation3& r_bd) {
  if (samples.empty()) throw Error(ErrorKind::kEmptyInput, "rmse: empty series");
  double sum = 0.0;
  for (const auto& s : samples) sum += (v_gt - correct(s.v_dvl, em, r_bd)).squaredNorm();
  return {std::sqrt(sum / static_cast<double>(samples.size())), static_cast<int>(samples.size())};
}

int expected_samples(double seconds, double rate) { return static_cast<int>(std::llround(seconds * rate)); }

}  // namespace

RmseResult correction_rmse(const SimulatedTrajectory& traj, const ErrorModel& em, const Rotation3& r_bd) {
  return score(traj.samples, traj.spec.v_gt, em, r_bd);
}

Method baseline_method() {
  return {"baseline", 100.0, [](std::span<const VelocitySample> window, const DvlSuite& dvl) {
            return baseline_calibrate(window, dvl.dvl.r_bd);
          }};
}

Method network_method(const CalibrationNet& net, double window_seconds) {
  return {std::string("ours_") + to_string(net.em_tag()), window_seconds,
          [&net](std::span<const VelocitySample> window, const DvlSuite&) {
            return estimate_error_term(net, window, net.window_n());
          }};
}

Method oracle_scale_method() {
  return {"oracle_scale", 100.0, [](std::span<const VelocitySample>, const DvlSuite& dvl) {
            return ErrorModel::scalar_scale(dvl.dvl.scale);
          }};
}

Method oracle_bias_method() {
  return {"oracle_bias", 100.0, [](std::span<const VelocitySample>, const DvlSuite& dvl) {
            return ErrorModel::vector_bias(equivalent_vector_bias(dvl.calibration.spec.v_gt, dvl.dvl));
          }};
}

CalibrationOutcome calibration_phase(const DvlSuite& dvl, const Method& method, double window_seconds,
                                     ResidualSpan residual) {
  const auto& cal = dvl.calibration;
  const double rate = cal.spec.rate;
  const auto window = slice_time(cal.samples, 0.0, window_seconds);
  const auto rest = slice_time(cal.samples, residual.begin, residual.end);
  const int want_window = expected_samples(window_seconds, rate);
  const int want_rest = expected_samples(residual.end - residual.begin, rate);
  if (want_window < 1 || static_cast<int>(window.size()) != want_window || want_rest < 1 ||
      static_cast<int>(rest.size()) != want_rest) {
    throw Error(ErrorKind::kInsufficientData,
                "calibration run of " + std::to_string(cal.samples.size()) + " samples cannot supply a " +
                    detail::format_double(window_seconds) + " s window and the [" +
                    detail::format_double(residual.begin) + ", " + detail::format_double(residual.end) +
                    ") s residual span");
  }
  CalibrationOutcome out;
  out.model = method.calibrate(window, dvl);
  out.residual = score(rest, cal.spec.v_gt, out.model, dvl.dvl.r_bd);
  return out;
}

ConvergenceRow convergence_row(const std::string& dvl_type, double baseline_seconds, double baseline_residual,
                               std::span<const double> window_seconds, std::span<const double> window_residual) {
  if (window_seconds.size() != window_residual.size()) {
    throw Error(ErrorKind::kShapeMismatch, "convergence: windows and residuals differ in length");
  }
  ConvergenceRow row;
  row.dvl_type = dvl_type;
  row.baseline_seconds = baseline_seconds;
  row.ours_seconds = baseline_seconds;
  row.baseline_residual = baseline_residual;
  row.window_seconds.assign(window_seconds.begin(), window_seconds.end());
  row.window_residual.assign(window_residual.begin(), window_residual.end());
  double best = baseline_seconds;
  for (std::size_t i = 0; i < window_seconds.size(); ++i) {
    if (window_residual[i] <= baseline_residual && window_seconds[i] < best) best = window_seconds[i];
  }
  // A zero baseline leaves nothing to converge to; keep the tie at the baseline window.
  if (baseline_residual > 0.0) row.ours_seconds = best;
  row.improvement_percent = 100.0 * (row.baseline_seconds - row.ours_seconds) / row.baseline_seconds;
  return row;
}

RngSeed run_seed(RngSeed master, int run) {
  return derive_seed(master, Stream::kMonteCarlo, {static_cast<std::uint64_t>(run)});
}

EvalReport evaluate_suite(const TestSuiteSpec& spec, std::span<const Method> methods, int runs, RngSeed seed,
                          int threads) {
  if (runs < 1) throw Error(ErrorKind::kConfiguration, "runs must be >= 1");
  if (methods.empty()) throw Error(ErrorKind::kConfiguration, "no methods to evaluate");
  spec.validate();
  const std::size_t n_dvl = spec.dvl_types.size();
  const std::size_t n_m = methods.size();
  const std::size_t n_e = spec.eval_velocities.size();
  const std::size_t cells = n_dvl * n_m * n_e;

  // per_run[r][(d * n_m + m) * n_e + e]
  std::vector<std::vector<double>> per_run(static_cast<std::size_t>(runs));
  detail::parallel_for(runs, threads, [&](int r) {
    const TestSuite suite = build_test_suite(spec, run_seed(seed, r));
    auto& out = per_run[static_cast<std::size_t>(r)];
    out.resize(cells);
    for (std::size_t d = 0; d < n_dvl; ++d) {
      const DvlSuite& dvl = suite.dvls[d];
      for (std::size_t m = 0; m < n_m; ++m) {
        const auto outcome = calibration_phase(dvl, methods[m], methods[m].window_seconds);
        for (std::size_t e = 0; e < n_e; ++e) {
          out[(d * n_m + m) * n_e + e] = correction_rmse(dvl.evaluation[e], outcome.model, dvl.dvl.r_bd).value;
        }
      }
    }
  });

  std::vector<double> total(cells, 0.0);
  for (const auto& run : per_run) {
    for (std::size_t c = 0; c < cells; ++c) total[c] += run[c];
  }

  EvalReport report;
  report.runs = runs;
  report.master_seed = seed.value;
  report.canonical = runs == kCanonicalRuns;
  for (int r = 0; r < runs; ++r) report.run_seeds.push_back(run_seed(seed, r).value);
  for (std::size_t d = 0; d < n_dvl; ++d) {
    DvlRow row;
    row.dvl_type = spec.dvl_types[d].name;
    for (std::size_t m = 0; m < n_m; ++m) {
      MethodRow mr;
      mr.method = methods[m].name;
      double sum = 0.0;
      for (std::size_t e = 0; e < n_e; ++e) {
        const double v = total[(d * n_m + m) * n_e + e] / static_cast<double>(runs);
        mr.trajectory_rmse.push_back(v);
        sum += v;
      }
      mr.mean = sum / static_cast<double>(n_e);
      row.methods.push_back(std::move(mr));
    }
    report.rmse.push_back(std::move(row));
  }
  return report;
}

std::vector<ConvergenceRow> convergence_study(const TestSuiteSpec& spec, const Method& baseline, const Method& ours,
                                              std::span<const double> windows, int runs, RngSeed seed,
                                              int threads, ResidualSpan residual) {
  if (runs < 1) throw Error(ErrorKind::kConfiguration, "runs must be >= 1");
  if (windows.empty()) throw Error(ErrorKind::kConfiguration, "no calibration windows");
  spec.validate();
  const std::size_t n_dvl = spec.dvl_types.size();
  const std::size_t n_w = windows.size();
  const std::size_t stride = n_w + 1;  // slot 0 is the baseline

  std::vector<std::vector<double>> per_run(static_cast<std::size_t>(runs));
  detail::parallel_for(runs, threads, [&](int r) {
    const TestSuite suite = build_test_suite(spec, run_seed(seed, r));
    auto& out = per_run[static_cast<std::size_t>(r)];
    out.resize(n_dvl * stride);
    for (std::size_t d = 0; d < n_dvl; ++d) {
      const DvlSuite& dvl = suite.dvls[d];
      out[d * stride] = calibration_phase(dvl, baseline, baseline.window_seconds, residual).residual.value;
      for (std::size_t w = 0; w < n_w; ++w) {
        out[d * stride + 1 + w] = calibration_phase(dvl, ours, windows[w], residual).residual.value;
      }
    }
  });

  std::vector<double> total(n_dvl * stride, 0.0);
  for (const auto& run : per_run) {
    for (std::size_t c = 0; c < total.size(); ++c) total[c] += run[c];
  }
  std::vector<ConvergenceRow> rows;
  for (std::size_t d = 0; d < n_dvl; ++d) {
    std::vector<double> mean_w(n_w);
    for (std::size_t w = 0; w < n_w; ++w) mean_w[w] = total[d * stride + 1 + w] / static_cast<double>(runs);
    rows.push_back(convergence_row(spec.dvl_types[d].name, baseline.window_seconds,
                                   total[d * stride] / static_cast<double>(runs), windows, mean_w));
  }
  return rows;
}

std::string report_to_json(const EvalReport& report) {
  json rmse_rows = json::array();
  for (const auto& d : report.rmse) {
    json methods = json::array();
    for (const auto& m : d.methods) {
      methods.push_back({{"method", m.method}, {"trajectory_rmse", m.trajectory_rmse}, {"mean", m.mean}});
    }
    rmse_rows.push_back({{"dvl_type", d.dvl_type}, {"methods", std::move(methods)}});
  }
  json conv = json::array();
  for (const auto& c : report.convergence) {
    conv.push_back({{"dvl_type", c.dvl_type},
                    {"baseline_seconds", c.baseline_seconds},
                    {"ours_seconds", c.ours_seconds},
                    {"improvement_percent", c.improvement_percent},
                    {"baseline_residual", c.baseline_residual},
                    {"window_seconds", c.window_seconds},
                    {"window_residual", c.window_residual}});
  }
  const json j = {{"format", "dvlcal.report"},
                  {"metadata",
                   {{"version", report.version},
                    {"config_hash", report.config_hash},
                    {"master_seed", report.master_seed},
                    {"runs", report.runs},
                    {"canonical", report.canonical},
                    {"run_seeds", report.run_seeds}}},
                  {"rmse", std::move(rmse_rows)},
                  {"convergence", std::move(conv)}};
  return j.dump(2) + "\n";
}

std::string rmse_table_csv(const EvalReport& report) {
  std::size_t n_e = 0;
  for (const auto& d : report.rmse) {
    for (const auto& m : d.methods) n_e = std::max(n_e, m.trajectory_rmse.size());
  }
  std::string out = "dvl_type,method";
  for (std::size_t e = 0; e < n_e; ++e) out += ",traj_" + std::to_string(e + 1);
  out += ",mean\n";
  for (const auto& d : report.rmse) {
    for (const auto& m : d.methods) {
      out += d.dvl_type + "," + m.method;
      for (double v : m.trajectory_rmse) {
        out += ',';
        detail::append_double(out, v);
      }
      out += ',';
      detail::append_double(out, m.mean);
      out += '\n';
    }
  }
  return out;
}

std::string convergence_table_csv(const EvalReport& report) {
  std::string out = "dvl_type,baseline_seconds,ours_seconds,improvement_percent,baseline_residual";
  if (!report.convergence.empty()) {
    for (double w : report.convergence.front().window_seconds) out += ",residual_" + detail::format_double(w) + "s";
  }
  out += '\n';
  for (const auto& c : report.convergence) {
    out += c.dvl_type;
    for (double v : {c.baseline_seconds, c.ours_seconds, c.improvement_percent, c.baseline_residual}) {
      out += ',';
      detail::append_double(out, v);
    }
    for (double v : c.window_residual) {
      out += ',';
      detail::append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace dvlcal
