#include "dvlcal/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json_convert.hpp"
#include "parallel.hpp"
#include "text_format.hpp"

namespace dvlcal {

namespace fs = std::filesystem;
using detail::json;

namespace {

int whole_samples(double seconds, double rate, const char* what) {
  const double n = seconds * rate;
  const double r = std::round(n);
  if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
    throw Error(ErrorKind::kConfiguration, std::string(what) + " must be a whole number of samples");
  }
  return static_cast<int>(r);
}

}  // namespace

int GridSpec::combination_count() const {
  return x_velocity.count * scale.count * bias.count * noise.count;
}

void GridSpec::validate() const {
  for (const GridAxis* a : {&x_velocity, &scale, &bias, &noise}) {
    if (a->count < 1 || !std::isfinite(a->lower) || !std::isfinite(a->step)) {
      throw Error(ErrorKind::kConfiguration, "grid axes need count >= 1 and finite bounds");
    }
  }
  if (repeats < 1) throw Error(ErrorKind::kConfiguration, "grid repeats must be >= 1");
  if (scale.lower <= -1.0) throw Error(ErrorKind::kConfiguration, "grid scale must keep 1 + k > 0");
  if (noise.lower < 0.0 || noise.value(noise.count - 1) < 0.0) {
    throw Error(ErrorKind::kConfiguration, "grid noise must be >= 0");
  }
  if (!(augment_limit >= 0.0)) throw Error(ErrorKind::kConfiguration, "augment limit must be >= 0");
  (void)whole_samples(traj_seconds, rate, "trajectory length");
  gnss.validate();
}

std::vector<GridEntry> enumerate_grid(const GridSpec& spec, RngSeed seed) {
  spec.validate();
  std::vector<GridEntry> out;
  out.reserve(static_cast<std::size_t>(spec.trajectory_count()));
  int combination = 0;
  for (int ix = 0; ix < spec.x_velocity.count; ++ix) {
    for (int is = 0; is < spec.scale.count; ++is) {
      for (int ib = 0; ib < spec.bias.count; ++ib) {
        for (int in = 0; in < spec.noise.count; ++in, ++combination) {
          for (int r = 0; r < spec.repeats; ++r) {
            GridEntry e;
            e.index = static_cast<int>(out.size());
            e.combination = combination;
            e.repeat = r;
            e.traj.v_gt = Vec3(spec.x_velocity.value(ix), 0.0, 0.0);
            if (spec.augment_yz) {
              Rng rng = make_rng(derive_seed(seed, Stream::kAugment, {static_cast<std::uint64_t>(e.index)}));
              std::uniform_real_distribution<double> u(-spec.augment_limit, spec.augment_limit);
              e.traj.v_gt.y() = u(rng);
              e.traj.v_gt.z() = u(rng);
            }
            e.traj.duration = spec.traj_seconds;
            e.traj.rate = spec.rate;
            e.dvl = DvlConfig::janus(spec.scale.value(is), spec.bias.value(ib), spec.noise.value(in));
            out.push_back(std::move(e));
          }
        }
      }
    }
  }
  return out;
}

void WindowingSpec::validate() const {
  if (!(window_seconds > 0.0) || !(stride_seconds > 0.0) || train_windows < 1 || val_windows < 0) {
    throw Error(ErrorKind::kConfiguration, "windowing needs positive length/stride and >= 1 train window");
  }
}

const char* to_string(Split split) { return split == Split::kTrain ? "train" : "val"; }

WindowSplit window_split(std::span<const VelocitySample> series, const WindowingSpec& wspec, double rate,
                         int traj_id, double target_k, const Vec3& target_b) {
  wspec.validate();
  const int n = whole_samples(wspec.window_seconds, rate, "window length");
  const int stride = whole_samples(wspec.stride_seconds, rate, "window stride");
  const int count = wspec.windows_per_trajectory();
  const std::size_t needed = static_cast<std::size_t>((count - 1) * stride + n);
  if (series.size() < needed) {
    throw Error(ErrorKind::kInsufficientData, "series of " + std::to_string(series.size()) + " samples is shorter than the " +
                                                  std::to_string(needed) + " needed for " + std::to_string(count) +
                                                  " windows");
  }
  WindowSplit out;
  for (int w = 0; w < count; ++w) {
    DatasetWindow dw;
    dw.traj_id = traj_id;
    dw.window_id = w;
    dw.split = w < wspec.train_windows ? Split::kTrain : Split::kValidation;
    dw.target_k = target_k;
    dw.target_b = target_b;
    dw.n = n;
    dw.stacked.resize(static_cast<std::size_t>(6 * n));
    for (int i = 0; i < n; ++i) {
      const auto& s = series[static_cast<std::size_t>(w * stride + i)];
      for (int r = 0; r < 3; ++r) {
        dw.stacked[static_cast<std::size_t>(r * n + i)] = s.v_dvl[r];
        dw.stacked[static_cast<std::size_t>((r + 3) * n + i)] = s.v_gnss[r];
      }
    }
    (dw.split == Split::kTrain ? out.train : out.val).push_back(std::move(dw));
  }
  return out;
}

Eigen::VectorXd target_for(const DatasetWindow& w, EmTag tag) {
  switch (tag) {
    case EmTag::kEm1:
      return Eigen::VectorXd::Constant(1, w.target_k);
    case EmTag::kEm2:
      return Eigen::VectorXd::Constant(3, w.target_k);
    case EmTag::kEm3:
      return Eigen::VectorXd::Constant(1, w.target_b.mean());
    case EmTag::kEm4:
      return w.target_b;
  }
  throw Error(ErrorKind::kInvalidInput, "unknown error model");
}

std::vector<LabeledWindow> labeled_windows(std::span<const DatasetWindow> windows, EmTag tag) {
  std::vector<LabeledWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({WindowTensor(w.n, w.stacked), target_for(w, tag)});
  return out;
}

std::vector<int> subsample_indices(int total, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw Error(ErrorKind::kConfiguration, "scale fraction must be in (0, 1]");
  }
  const int count = static_cast<int>(std::floor(static_cast<double>(total) * fraction + 1e-9));
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    idx.push_back(std::min(total - 1, static_cast<int>(std::floor(static_cast<double>(j) / fraction + 1e-9))));
  }
  return idx;
}

namespace {

WindowSplit simulate_entry(const GridEntry& e, const GridSpec& grid, const WindowingSpec& wspec, RngSeed seed) {
  const RngSeed traj_seed = derive_seed(
      seed, Stream::kTrajectory,
      {static_cast<std::uint64_t>(e.combination), static_cast<std::uint64_t>(e.repeat)});
  const auto series = simulate_pair(e.traj, e.dvl, grid.gnss, traj_seed);
  return window_split(series, wspec, grid.rate, e.index, e.dvl.scale, equivalent_vector_bias(e.traj.v_gt, e.dvl));
}

}  // namespace

Dataset build_dataset(const GridSpec& grid, const WindowingSpec& wspec, RngSeed seed, double fraction,
                      int threads) {
  const auto entries = enumerate_grid(grid, seed);
  const auto selected = subsample_indices(static_cast<int>(entries.size()), fraction);
  std::vector<WindowSplit> parts(selected.size());
  detail::parallel_for(static_cast<int>(selected.size()), threads, [&](int i) {
    parts[static_cast<std::size_t>(i)] =
        simulate_entry(entries[static_cast<std::size_t>(selected[static_cast<std::size_t>(i)])], grid, wspec, seed);
  });
  Dataset ds;
  ds.train.reserve(selected.size() * static_cast<std::size_t>(wspec.train_windows));
  ds.val.reserve(selected.size() * static_cast<std::size_t>(wspec.val_windows));
  for (auto& p : parts) {
    for (auto& w : p.train) ds.train.push_back(std::move(w));
    for (auto& w : p.val) ds.val.push_back(std::move(w));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Shards

namespace {

std::string shard_header(int n) {
  std::string h = "traj_id,window_id,split,target_k,target_bx,target_by,target_bz";
  for (int i = 0; i < 6 * n; ++i) h += ",s" + std::to_string(i);
  h += '\n';
  return h;
}

void append_window_row(std::string& out, const DatasetWindow& w) {
  out += std::to_string(w.traj_id);
  out += ',';
  out += std::to_string(w.window_id);
  out += ',';
  out += to_string(w.split);
  for (double v : {w.target_k, w.target_b.x(), w.target_b.y(), w.target_b.z()}) {
    out += ',';
    detail::append_double(out, v);
  }
  for (double v : w.stacked) {
    out += ',';
    detail::append_double(out, v);
  }
  out += '\n';
}

json shard_to_json(const ShardInfo& s) {
  return {{"file", s.file},
          {"first_trajectory", s.first_trajectory},
          {"trajectory_count", s.trajectory_count},
          {"train_windows", s.train_windows},
          {"val_windows", s.val_windows},
          {"fnv1a", s.hash}};
}

std::string compute_fingerprint(const DatasetManifest& m) {
  std::uint64_t h = detail::fnv1a(detail::to_json(m.grid).dump());
  h = detail::fnv1a(detail::to_json(m.windowing).dump(), h);
  h = detail::fnv1a(std::to_string(m.master_seed) + "|" + detail::format_double(m.scale_fraction), h);
  for (const auto& s : m.shards) h = detail::fnv1a(s.file + ":" + s.hash, h);
  return detail::hex64(h);
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
  json shards = json::array();
  for (const auto& s : m.shards) shards.push_back(shard_to_json(s));
  const json j = {{"format", "dvlcal.dataset"},
                  {"version", 1},
                  {"grid", detail::to_json(m.grid)},
                  {"windowing", detail::to_json(m.windowing)},
                  {"master_seed", m.master_seed},
                  {"scale_fraction", m.scale_fraction},
                  {"counts",
                   {{"combinations", m.combinations},
                    {"trajectories", m.trajectories},
                    {"selected_trajectories", m.selected_trajectories},
                    {"train_windows", m.train_windows},
                    {"val_windows", m.val_windows}}},
                  {"shards", std::move(shards)},
                  {"fingerprint", m.fingerprint}};
  return j.dump(2) + "\n";
}

DatasetManifest write_dataset(const std::string& dir, const GridSpec& grid, const WindowingSpec& wspec, RngSeed seed,
                              double fraction, int threads, int trajectories_per_shard) {
  if (trajectories_per_shard < 1) throw Error(ErrorKind::kConfiguration, "shard size must be >= 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create dataset directory '" + dir + "': " + ec.message());

  const auto entries = enumerate_grid(grid, seed);
  const auto selected = subsample_indices(static_cast<int>(entries.size()), fraction);
  const int n_shards = (static_cast<int>(selected.size()) + trajectories_per_shard - 1) / trajectories_per_shard;
  const int n = whole_samples(wspec.window_seconds, grid.rate, "window length");

  std::vector<ShardInfo> shards(static_cast<std::size_t>(n_shards));
  detail::parallel_for(n_shards, threads, [&](int s) {
    const std::size_t begin = static_cast<std::size_t>(s) * static_cast<std::size_t>(trajectories_per_shard);
    const std::size_t end = std::min(selected.size(), begin + static_cast<std::size_t>(trajectories_per_shard));
    std::string text = shard_header(n);
    ShardInfo info;
    info.first_trajectory = static_cast<int>(begin);
    info.trajectory_count = static_cast<int>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const auto split = simulate_entry(entries[static_cast<std::size_t>(selected[i])], grid, wspec, seed);
      for (const auto& w : split.train) append_window_row(text, w);
      for (const auto& w : split.val) append_window_row(text, w);
      info.train_windows += static_cast<int>(split.train.size());
      info.val_windows += static_cast<int>(split.val.size());
    }
    char name[32];
    std::snprintf(name, sizeof(name), "shard_%05d.csv", s);
    info.file = name;
    info.hash = detail::hex64(detail::fnv1a(text));
    const fs::path path = fs::path(dir) / info.file;
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw Error(ErrorKind::kIo, "failed writing shard '" + path.string() + "'");
    shards[static_cast<std::size_t>(s)] = std::move(info);
  });

  DatasetManifest m;
  m.grid = grid;
  m.windowing = wspec;
  m.master_seed = seed.value;
  m.scale_fraction = fraction;
  m.combinations = grid.combination_count();
  m.trajectories = grid.trajectory_count();
  m.selected_trajectories = static_cast<int>(selected.size());
  for (const auto& s : shards) {
    m.train_windows += s.train_windows;
    m.val_windows += s.val_windows;
  }
  m.shards = std::move(shards);
  m.fingerprint = compute_fingerprint(m);

  const fs::path mpath = fs::path(dir) / kManifestFile;
  std::ofstream os(mpath, std::ios::binary);
  os << manifest_to_json(m);
  if (!os) throw Error(ErrorKind::kIo, "failed writing manifest '" + mpath.string() + "'");
  return m;
}

DatasetManifest read_manifest(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / kManifestFile;
  std::ifstream is(mpath, std::ios::binary);
  if (!is) throw Error(ErrorKind::kIo, "dataset manifest '" + mpath.string() + "' not found");
  json j;
  try {
    j = json::parse(is);
    DatasetManifest m;
    detail::read_json(j.at("grid"), m.grid);
    detail::read_json(j.at("windowing"), m.windowing);
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.scale_fraction = j.at("scale_fraction").get<double>();
    const json& c = j.at("counts");
    m.combinations = c.at("combinations").get<int>();
    m.trajectories = c.at("trajectories").get<int>();
    m.selected_trajectories = c.at("selected_trajectories").get<int>();
    m.train_windows = c.at("train_windows").get<int>();
    m.val_windows = c.at("val_windows").get<int>();
    for (const auto& s : j.at("shards")) {
      m.shards.push_back({s.at("file").get<std::string>(), s.at("first_trajectory").get<int>(),
                          s.at("trajectory_count").get<int>(), s.at("train_windows").get<int>(),
                          s.at("val_windows").get<int>(), s.at("fnv1a").get<std::string>()});
    }
    m.fingerprint = j.at("fingerprint").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("malformed dataset manifest: ") + e.what());
  }
}

Dataset read_dataset(const std::string& dir, DatasetManifest* manifest_out) {
  const DatasetManifest m = read_manifest(dir);
  if (compute_fingerprint(m) != m.fingerprint) {
    throw Error(ErrorKind::kIo, "dataset manifest fingerprint does not match its contents");
  }
  Dataset ds;
  for (const auto& shard : m.shards) {
    const fs::path path = fs::path(dir) / shard.file;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::kIo, "missing shard '" + path.string() + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    if (detail::hex64(detail::fnv1a(text)) != shard.hash) {
      throw Error(ErrorKind::kIo, "shard '" + shard.file + "' hash mismatch");
    }
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line);
    const int n_values = static_cast<int>(detail::split_csv_line(line).size()) - 7;
    if (n_values <= 0 || n_values % 6 != 0) throw Error(ErrorKind::kIo, "shard '" + shard.file + "' has a bad header");
    int train = 0;
    int val = 0;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto f = detail::split_csv_line(line);
      if (static_cast<int>(f.size()) != 7 + n_values) {
        throw Error(ErrorKind::kIo, "shard '" + shard.file + "' row has the wrong field count");
      }
      DatasetWindow w;
      w.traj_id = static_cast<int>(detail::parse_double(f[0]));
      w.window_id = static_cast<int>(detail::parse_double(f[1]));
      if (f[2] == "train") {
        w.split = Split::kTrain;
      } else if (f[2] == "val") {
        w.split = Split::kValidation;
      } else {
        throw Error(ErrorKind::kIo, "unknown split '" + std::string(f[2]) + "'");
      }
      w.target_k = detail::parse_double(f[3]);
      w.target_b = Vec3(detail::parse_double(f[4]), detail::parse_double(f[5]), detail::parse_double(f[6]));
      w.n = n_values / 6;
      w.stacked.reserve(static_cast<std::size_t>(n_values));
      for (int i = 0; i < n_values; ++i) w.stacked.push_back(detail::parse_double(f[static_cast<std::size_t>(7 + i)]));
      if (w.split == Split::kTrain) {
        ++train;
        ds.train.push_back(std::move(w));
      } else {
        ++val;
        ds.val.push_back(std::move(w));
      }
    }
    if (train != shard.train_windows || val != shard.val_windows) {
      throw Error(ErrorKind::kIo, "shard '" + shard.file + "' window counts disagree with the manifest");
    }
  }
  if (static_cast<int>(ds.train.size()) != m.train_windows || static_cast<int>(ds.val.size()) != m.val_windows) {
    throw Error(ErrorKind::kIo, "dataset window counts disagree with the manifest");
  }
  if (manifest_out) *manifest_out = m;
  return ds;
}

// ---------------------------------------------------------------------------
// Test suite

void TestSuiteSpec::validate() const {
  if (dvl_types.empty() || eval_velocities.empty()) {
    throw Error(ErrorKind::kConfiguration, "test suite needs DVL types and evaluation trajectories");
  }
  gnss.validate();
  (void)whole_samples(calib_seconds, rate, "calibration length");
  (void)whole_samples(eval_seconds, rate, "evaluation length");
}

DvlConfig dvl_config_for(const DvlType& type) { return DvlConfig::janus(type.scale, type.bias, type.noise); }

TestSuite build_test_suite(const TestSuiteSpec& spec, RngSeed seed) {
  spec.validate();
  TestSuite suite;
  for (std::size_t d = 0; d < spec.dvl_types.size(); ++d) {
    DvlSuite ds;
    ds.type = spec.dvl_types[d];
    ds.dvl = dvl_config_for(ds.type);
    auto simulate = [&](const Vec3& v, double seconds, std::uint64_t j) {
      SimulatedTrajectory t;
      t.spec = TrajectorySpec{v, seconds, spec.rate};
      t.samples = simulate_pair(t.spec, ds.dvl, spec.gnss,
                                derive_seed(seed, Stream::kTrajectory, {static_cast<std::uint64_t>(d), j}));
      return t;
    };
    ds.calibration = simulate(spec.calib_velocity, spec.calib_seconds, 0);
    for (std::size_t e = 0; e < spec.eval_velocities.size(); ++e) {
      ds.evaluation.push_back(simulate(spec.eval_velocities[e], spec.eval_seconds, e + 1));
    }
    suite.dvls.push_back(std::move(ds));
  }
  return suite;
}

}  // namespace dvlcal
