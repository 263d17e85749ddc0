#pragma once

#include <string>
#include <vector>

#include "dvlcal/network.hpp"
#include "dvlcal/simulation.hpp"

namespace dvlcal {

/// Evenly stepped parameter axis; value(i) = lower + i * step, never accumulated.
struct GridAxis {
  double lower = 0.0;
  double step = 0.0;
  int count = 0;

  double value(int i) const { return lower + static_cast<double>(i) * step; }
  bool operator==(const GridAxis&) const = default;
};

/// Training grid over AUV speed and DVL beam errors. Scales are fractional.
struct GridSpec {
  GridAxis x_velocity{1.5, 0.1, 7};
  GridAxis scale{0.002, 0.001, 14};
  GridAxis bias{0.001, 0.001, 9};
  GridAxis noise{0.0001, 0.0001, 9};
  int repeats = 4;
  double traj_seconds = 100.0;
  double rate = 1.0;
  /// Adds uniform Y/Z velocity components in [-augment_limit, augment_limit].
  bool augment_yz = false;
  double augment_limit = 0.5;
  GnssConfig gnss;

  int combination_count() const;
  int trajectory_count() const { return combination_count() * repeats; }
  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

struct GridEntry {
  int index = 0;        ///< position in the enumeration
  int combination = 0;  ///< index / repeats
  int repeat = 0;
  TrajectorySpec traj;
  DvlConfig dvl;
};

/// Every (x, scale, bias, noise, repeat) in lexicographic order. `seed` only
/// matters when augment_yz is set.
std::vector<GridEntry> enumerate_grid(const GridSpec& spec, RngSeed seed = {});

struct WindowingSpec {
  double window_seconds = 10.0;
  double stride_seconds = 9.0;
  int train_windows = 8;
  int val_windows = 2;

  int windows_per_trajectory() const { return train_windows + val_windows; }
  void validate() const;
  bool operator==(const WindowingSpec&) const = default;
};

enum class Split { kTrain, kValidation };

const char* to_string(Split split);

/// One regression example. `stacked` is 6 x n row-major (DVL xyz, GNSS xyz).
struct DatasetWindow {
  int traj_id = 0;
  int window_id = 0;
  Split split = Split::kTrain;
  double target_k = 0.0;             ///< true beam scale
  Vec3 target_b = Vec3::Zero();      ///< equivalent vector bias on the trajectory
  int n = 0;
  std::vector<double> stacked;
};

struct WindowSplit {
  std::vector<DatasetWindow> train;
  std::vector<DatasetWindow> val;
};

/// Windows start at 0, stride, 2 * stride, ...; the first train_windows go to
/// training and the next val_windows to validation. Later candidates are dropped.
/// Throws kInsufficientData when the series is too short.
WindowSplit window_split(std::span<const VelocitySample> series, const WindowingSpec& wspec, double rate,
                         int traj_id, double target_k, const Vec3& target_b);

/// Regression targets for `tag`: k, (k, k, k), mean(b), or b.
Eigen::VectorXd target_for(const DatasetWindow& w, EmTag tag);

std::vector<LabeledWindow> labeled_windows(std::span<const DatasetWindow> windows, EmTag tag);

/// floor(total * fraction) evenly spaced indices; fraction in (0, 1].
std::vector<int> subsample_indices(int total, double fraction);

struct Dataset {
  std::vector<DatasetWindow> train;
  std::vector<DatasetWindow> val;
};

/// Simulates and windows the selected trajectories in memory.
Dataset build_dataset(const GridSpec& grid, const WindowingSpec& wspec, RngSeed seed, double fraction = 1.0,
                      int threads = 1);

struct ShardInfo {
  std::string file;
  int first_trajectory = 0;
  int trajectory_count = 0;
  int train_windows = 0;
  int val_windows = 0;
  std::string hash;
};

struct DatasetManifest {
  GridSpec grid;
  WindowingSpec windowing;
  std::uint64_t master_seed = 0;
  double scale_fraction = 1.0;
  int combinations = 0;
  int trajectories = 0;
  int selected_trajectories = 0;
  int train_windows = 0;
  int val_windows = 0;
  std::vector<ShardInfo> shards;
  std::string fingerprint;
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Writes CSV shards plus manifest.json into `dir` (created if missing).
DatasetManifest write_dataset(const std::string& dir, const GridSpec& grid, const WindowingSpec& wspec,
                              RngSeed seed, double fraction = 1.0, int threads = 1,
                              int trajectories_per_shard = 2048);

DatasetManifest read_manifest(const std::string& dir);
std::string manifest_to_json(const DatasetManifest& m);

/// Loads every shard listed in the manifest, verifying hashes and counts.
Dataset read_dataset(const std::string& dir, DatasetManifest* manifest = nullptr);

// --- Test suite ------------------------------------------------------------

struct DvlType {
  std::string name;
  double scale = 0.0;  ///< fractional
  double bias = 0.0;   ///< m/s, per beam
  double noise = 0.0;  ///< m/s, per beam
  bool operator==(const DvlType&) const = default;
};

struct TestSuiteSpec {
  std::vector<DvlType> dvl_types = {
      {"DVL 1", 0.005, 0.001, 0.008},
      {"DVL 2", 0.005, 0.001, 0.0008},
      {"DVL 3", 0.010, 0.007, 0.02},
      {"DVL 4", 0.010, 0.007, 0.0002},
  };
  Vec3 calib_velocity{2.0, -0.08, -0.01};
  double calib_seconds = 200.0;
  std::vector<Vec3> eval_velocities = {
      {1.8, 0.1, 0.1},
      {2.2, 0.5, -0.1},
      {1.55, 0.3, -0.08},
      {1.9, -0.05, -0.0084},
  };
  double eval_seconds = 1800.0;
  double rate = 1.0;
  GnssConfig gnss;

  double seconds_per_dvl() const {
    return calib_seconds + eval_seconds * static_cast<double>(eval_velocities.size());
  }
  void validate() const;
  bool operator==(const TestSuiteSpec&) const = default;
};

struct SimulatedTrajectory {
  TrajectorySpec spec;
  std::vector<VelocitySample> samples;
};

struct DvlSuite {
  DvlType type;
  DvlConfig dvl;
  SimulatedTrajectory calibration;
  std::vector<SimulatedTrajectory> evaluation;
};

struct TestSuite {
  std::vector<DvlSuite> dvls;
};

DvlConfig dvl_config_for(const DvlType& type);

/// One calibration and the evaluation trajectories for each DVL type. Trajectory
/// j of DVL i uses a seed derived from (seed, i, j), j = 0 being calibration.
TestSuite build_test_suite(const TestSuiteSpec& spec, RngSeed seed);

}  // namespace dvlcal
