#include "dvlcal/config.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "json_convert.hpp"
#include "text_format.hpp"

namespace dvlcal {

using detail::json;
using detail::read_key;

void ExperimentConfig::validate() const {
  grid.validate();
  windowing.validate();
  suite.validate();
  train.validate();
  if (eval.runs < 1) throw Error(ErrorKind::kConfiguration, "eval.runs must be >= 1");
  if (eval.nn_windows.empty()) throw Error(ErrorKind::kConfiguration, "eval.nn_windows is empty");
  for (double w : eval.nn_windows) {
    if (!(w > 0.0)) throw Error(ErrorKind::kConfiguration, "eval.nn_windows must be positive");
  }
  if (!(eval.baseline_window > 0.0) || !(eval.nn_window > 0.0)) {
    throw Error(ErrorKind::kConfiguration, "calibration windows must be positive");
  }
  if (!(eval.residual.end > eval.residual.begin) || eval.residual.end > suite.calib_seconds) {
    throw Error(ErrorKind::kConfiguration, "eval.residual must be a non-empty span inside the calibration run");
  }
  if (!(scale_fraction > 0.0) || scale_fraction > 1.0) {
    throw Error(ErrorKind::kConfiguration, "scale_fraction must be in (0, 1]");
  }
  if (threads < 0) throw Error(ErrorKind::kConfiguration, "threads must be >= 0");
}

int ExperimentConfig::resolved_threads() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

json to_json(const EvalConfig& e) {
  return {{"runs", e.runs},
          {"nn_windows", e.nn_windows},
          {"baseline_window", e.baseline_window},
          {"nn_window", e.nn_window},
          {"residual_begin", e.residual.begin},
          {"residual_end", e.residual.end}};
}

void read_json(const json& j, EvalConfig& e) {
  read_key(j, "runs", e.runs);
  read_key(j, "nn_windows", e.nn_windows);
  read_key(j, "baseline_window", e.baseline_window);
  read_key(j, "nn_window", e.nn_window);
  read_key(j, "residual_begin", e.residual.begin);
  read_key(j, "residual_end", e.residual.end);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorKind::kConfiguration, "config must be a JSON object");
    if (j.contains("grid")) detail::read_json(j.at("grid"), cfg.grid);
    if (j.contains("windowing")) detail::read_json(j.at("windowing"), cfg.windowing);
    if (j.contains("suite")) detail::read_json(j.at("suite"), cfg.suite);
    if (j.contains("train")) detail::read_json(j.at("train"), cfg.train);
    if (j.contains("eval")) read_json(j.at("eval"), cfg.eval);
    read_key(j, "seed", cfg.seed);
    read_key(j, "out_dir", cfg.out_dir);
    read_key(j, "scale_fraction", cfg.scale_fraction);
    read_key(j, "threads", cfg.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfiguration, std::string("bad config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::kConfiguration, "cannot read config '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const json j = {{"grid", detail::to_json(cfg.grid)},
                  {"windowing", detail::to_json(cfg.windowing)},
                  {"suite", detail::to_json(cfg.suite)},
                  {"train", detail::to_json(cfg.train)},
                  {"eval", to_json(cfg.eval)},
                  {"seed", cfg.seed},
                  {"out_dir", cfg.out_dir},
                  {"scale_fraction", cfg.scale_fraction},
                  {"threads", cfg.threads}};
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  // threads and out_dir do not change results
  ExperimentConfig c = cfg;
  c.threads = 0;
  c.out_dir.clear();
  return detail::hex64(detail::fnv1a(config_to_json(c)));
}

}  // namespace dvlcal
