#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dvlcal/config.hpp"

#ifndef DVLCAL_VERSION
#define DVLCAL_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace dvlcal;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
};

ExperimentConfig resolve_config(const CommonOptions& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
  if (opt.threads) cfg.threads = *opt.threads;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// --- simulate --------------------------------------------------------------

int cmd_simulate(const CommonOptions& opt, int dvl_type, const std::string& traj) {
  ExperimentConfig cfg = resolve_config(opt);
  if (opt.seed) cfg.seed = *opt.seed;
  const int n_dvl = static_cast<int>(cfg.suite.dvl_types.size());
  if (dvl_type < 0 || dvl_type > n_dvl) {
    throw Error(ErrorKind::kConfiguration, "--dvl-type must be 1.." + std::to_string(n_dvl) + " or 0 for all");
  }
  const int n_eval = static_cast<int>(cfg.suite.eval_velocities.size());
  int only = -1;  // -1 all, 0 calibration, e >= 1 evaluation e
  if (traj == "calib") {
    only = 0;
  } else if (traj != "all") {
    try {
      only = std::stoi(traj);
    } catch (const std::exception&) {
      only = -2;
    }
    if (only < 1 || only > n_eval) {
      throw Error(ErrorKind::kConfiguration, "--traj must be calib, all or 1.." + std::to_string(n_eval));
    }
  }

  const fs::path dir = opt.out.value_or(cfg.out_dir + "/trajectories");
  const TestSuite suite = build_test_suite(cfg.suite, RngSeed{cfg.seed});
  int files = 0;
  for (int d = 0; d < n_dvl; ++d) {
    if (dvl_type != 0 && d + 1 != dvl_type) continue;
    const DvlSuite& s = suite.dvls[static_cast<std::size_t>(d)];
    const std::string prefix = "dvl" + std::to_string(d + 1);
    if (only <= 0) {
      fs::create_directories(dir);
      write_trajectory_csv((dir / (prefix + "_calib.csv")).string(), s.calibration.samples);
      ++files;
    }
    for (int e = 1; e <= n_eval; ++e) {
      if (only != -1 && only != e) continue;
      fs::create_directories(dir);
      write_trajectory_csv((dir / (prefix + "_eval" + std::to_string(e) + ".csv")).string(),
                           s.evaluation[static_cast<std::size_t>(e - 1)].samples);
      ++files;
    }
  }
  std::cout << "wrote " << files << " trajectory file(s) to " << dir.string() << "\n";
  return 0;
}

// --- gen-dataset -----------------------------------------------------------

int cmd_gen_dataset(const CommonOptions& opt, std::optional<double> fraction) {
  ExperimentConfig cfg = resolve_config(opt);
  if (opt.seed) cfg.seed = *opt.seed;
  if (fraction) cfg.scale_fraction = *fraction;
  cfg.validate();
  const std::string dir = opt.out.value_or(cfg.out_dir + "/dataset");
  const DatasetManifest m =
      write_dataset(dir, cfg.grid, cfg.windowing, RngSeed{cfg.seed}, cfg.scale_fraction, cfg.resolved_threads());
  std::cout << "combinations " << m.combinations << "\ntrajectories " << m.trajectories << " (selected "
            << m.selected_trajectories << ")\ntrain windows " << m.train_windows << "\nval windows "
            << m.val_windows << "\nshards " << m.shards.size() << "\nfingerprint " << m.fingerprint << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

std::string loss_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,best_val_loss\n";
  for (const auto& r : history) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.best_val_loss);
    out += buf;
  }
  return out;
}

int cmd_train(const CommonOptions& opt, const std::string& dataset_dir, int em, const std::string& resume_path,
              const std::string& loss_path) {
  ExperimentConfig cfg = resolve_config(opt);
  if (opt.seed) cfg.train.seed = *opt.seed;
  DatasetManifest manifest;
  const Dataset ds = read_dataset(dataset_dir, &manifest);

  std::optional<Checkpoint> resumed;
  if (!resume_path.empty()) {
    resumed = load_checkpoint(resume_path);
    if (!resumed->has_state) throw Error(ErrorKind::kIo, "checkpoint '" + resume_path + "' has no training state");
    if (em != 0 && static_cast<int>(resumed->net.em_tag()) != em) {
      throw Error(ErrorKind::kConfiguration, "--em disagrees with the resumed checkpoint");
    }
    if (resumed->dataset_fingerprint != manifest.fingerprint) {
      std::cerr << "warning: resuming on a different dataset than the checkpoint was trained on\n";
    }
  } else if (em == 0) {
    throw Error(ErrorKind::kConfiguration, "--em is required for a fresh training run");
  }
  const EmTag tag = resumed ? resumed->net.em_tag() : em_tag_from_int(em);
  const auto train_set = labeled_windows(ds.train, tag);
  const auto val_set = labeled_windows(ds.val, tag);
  if (train_set.empty() || val_set.empty()) throw Error(ErrorKind::kInsufficientData, "dataset has an empty split");
  const int n = train_set.front().window.n();

  CalibrationNet init = resumed ? resumed->net
                                : CalibrationNet::build(tag, n, derive_seed(RngSeed{cfg.train.seed}, Stream::kInit));
  if (resumed) {
    init.params() = resumed->last_params;
    init.buffers() = resumed->last_buffers;
  }
  std::cout << "training " << to_string(tag) << " on " << train_set.size() << " / " << val_set.size()
            << " windows, " << init.parameter_count() << " parameters\n";
  const TrainResult result =
      train(init, train_set, val_set, cfg.train, resumed ? &resumed->state : nullptr, [](const EpochRecord& r) {
        std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << "\n" << std::flush;
      });

  Checkpoint out;
  // Without an improvement over the resumed best, the stored best stays.
  const bool improved = !resumed || result.state.best_val_loss < resumed->state.best_val_loss;
  out.net = improved ? result.best : resumed->net;
  out.train_config = cfg.train;
  out.dataset_fingerprint = manifest.fingerprint;
  out.has_state = true;
  out.state = result.state;
  out.last_params = result.last.params();
  out.last_buffers = result.last.buffers();

  const fs::path ckpt_path = opt.out.value_or(cfg.out_dir + "/em" + std::to_string(static_cast<int>(tag)) + ".json");
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  save_checkpoint(ckpt_path.string(), out);
  const fs::path lpath =
      loss_path.empty() ? ckpt_path.parent_path() / (ckpt_path.stem().string() + "_loss.csv") : fs::path(loss_path);
  write_text(lpath, loss_csv(result.state.history));
  std::cout << "best val loss " << result.state.best_val_loss << "\ncheckpoint " << ckpt_path.string()
            << "\nloss history " << lpath.string() << "\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------

void print_report(const EvalReport& r) {
  std::cout << "RMSE [m/s], mean over " << r.runs << " run(s)" << (r.canonical ? "" : " (non-canonical)") << "\n";
  for (const auto& d : r.rmse) {
    for (const auto& m : d.methods) {
      std::cout << "  " << d.dvl_type << "  " << m.method << ":";
      for (double v : m.trajectory_rmse) std::cout << " " << fixed3(v);
      std::cout << "  mean " << fixed3(m.mean) << "\n";
    }
  }
  std::cout << "Convergence [s]\n";
  for (const auto& c : r.convergence) {
    std::cout << "  " << c.dvl_type << "  baseline " << c.baseline_seconds << "  ours " << c.ours_seconds
              << "  improvement " << c.improvement_percent << "%\n";
  }
}

int cmd_evaluate(const CommonOptions& opt, const std::string& ckpt_path, int em, std::optional<int> runs,
                 bool oracles) {
  ExperimentConfig cfg = resolve_config(opt);
  if (opt.seed) cfg.seed = *opt.seed;
  if (runs) cfg.eval.runs = *runs;
  cfg.validate();
  if (ckpt_path.empty()) {
    throw Error(ErrorKind::kIo, "evaluate needs --checkpoint" + (em ? " for EM" + std::to_string(em) : std::string()));
  }
  if (!fs::exists(ckpt_path)) throw Error(ErrorKind::kIo, "checkpoint '" + ckpt_path + "' not found");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (em != 0 && static_cast<int>(ckpt.net.em_tag()) != em) {
    throw Error(ErrorKind::kConfiguration, "checkpoint holds " + std::string(to_string(ckpt.net.em_tag())) +
                                               ", not EM" + std::to_string(em));
  }

  Method base = baseline_method();
  base.window_seconds = cfg.eval.baseline_window;
  std::vector<Method> methods = {base, network_method(ckpt.net, cfg.eval.nn_window)};
  if (oracles) {
    methods.push_back(oracle_scale_method());
    methods.push_back(oracle_bias_method());
  }
  const int threads = cfg.resolved_threads();
  EvalReport report = evaluate_suite(cfg.suite, methods, cfg.eval.runs, RngSeed{cfg.seed}, threads);
  report.convergence = convergence_study(cfg.suite, base, methods[1], cfg.eval.nn_windows, cfg.eval.runs,
                                         RngSeed{cfg.seed}, threads, cfg.eval.residual);
  report.version = DVLCAL_VERSION;
  report.config_hash = config_hash(cfg);

  const fs::path dir = opt.out.value_or(cfg.out_dir + "/report");
  write_text(dir / "report.json", report_to_json(report));
  write_text(dir / "rmse_table.csv", rmse_table_csv(report));
  write_text(dir / "convergence_table.csv", convergence_table_csv(report));
  print_report(report);
  std::cout << "report written to " << dir.string() << "\n";
  return 0;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfiguration:
      return kExitConfig;
    case ErrorKind::kDivergence:
      return kExitDivergence;
    default:
      return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DVL calibration toolkit: simulation, dataset generation, training and evaluation"};
  app.set_version_flag("--version", DVLCAL_VERSION);
  app.require_subcommand(1);

  CommonOptions opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "master seed (train: training seed)");
    sub->add_option("--threads", opt.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", opt.out, "output path");
  };

  auto* sim = app.add_subcommand("simulate", "write test-suite trajectories as CSV");
  add_common(sim);
  int dvl_type = 0;
  std::string traj = "all";
  sim->add_option("--dvl-type", dvl_type, "DVL type 1..4, 0 = all");
  sim->add_option("--traj", traj, "calib, 1..4 or all");

  auto* gen = app.add_subcommand("gen-dataset", "simulate and window the training grid");
  add_common(gen);
  std::optional<double> fraction;
  gen->add_option("--scale-fraction", fraction, "evenly subsample the grid")->check(CLI::Range(0.0, 1.0));

  auto* tr = app.add_subcommand("train", "train one error-model regressor");
  add_common(tr);
  std::string dataset_dir;
  int em = 0;
  std::string resume_path;
  std::string loss_path;
  tr->add_option("--dataset", dataset_dir, "dataset directory")->required();
  tr->add_option("--em", em, "error model 1..4")->check(CLI::Range(1, 4));
  tr->add_option("--resume", resume_path, "continue from a checkpoint");
  tr->add_option("--loss", loss_path, "loss-history CSV path");

  auto* ev = app.add_subcommand("evaluate", "Monte-Carlo evaluation and convergence study");
  add_common(ev);
  std::string ckpt_path;
  std::optional<int> runs;
  bool oracles = false;
  ev->add_option("--checkpoint", ckpt_path, "trained model");
  ev->add_option("--em", em, "expected error model of the checkpoint")->check(CLI::Range(1, 4));
  ev->add_option("--runs", runs, "Monte-Carlo runs")->check(CLI::PositiveNumber);
  ev->add_flag("--oracle", oracles, "also score true-parameter corrections");

  auto* dump = app.add_subcommand("config", "print the effective config as JSON");
  dump->add_option("--config", opt.config_path, "JSON experiment config")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sim) return cmd_simulate(opt, dvl_type, traj);
    if (*gen) return cmd_gen_dataset(opt, fraction);
    if (*tr) return cmd_train(opt, dataset_dir, em, resume_path, loss_path);
    if (*ev) return cmd_evaluate(opt, ckpt_path, em, runs, oracles);
    if (*dump) {
      std::cout << config_to_json(resolve_config(opt));
      return 0;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (epoch " << e.epoch() << ", batch " << e.batch() << ")\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
