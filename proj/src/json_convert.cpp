#include "json_convert.hpp"

namespace dvlcal::detail {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::kConfiguration, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const GridAxis& a) { return {{"lower", a.lower}, {"step", a.step}, {"count", a.count}}; }

void read_json(const json& j, GridAxis& a) {
  read_key(j, "lower", a.lower);
  read_key(j, "step", a.step);
  read_key(j, "count", a.count);
}

json to_json(const GridSpec& g) {
  return {{"x_velocity", to_json(g.x_velocity)},
          {"scale", to_json(g.scale)},
          {"bias", to_json(g.bias)},
          {"noise", to_json(g.noise)},
          {"repeats", g.repeats},
          {"traj_seconds", g.traj_seconds},
          {"rate", g.rate},
          {"augment_yz", g.augment_yz},
          {"augment_limit", g.augment_limit},
          {"gnss_noise_sigma", g.gnss.noise_sigma}};
}

void read_json(const json& j, GridSpec& g) {
  if (j.contains("x_velocity")) read_json(j.at("x_velocity"), g.x_velocity);
  if (j.contains("scale")) read_json(j.at("scale"), g.scale);
  if (j.contains("bias")) read_json(j.at("bias"), g.bias);
  if (j.contains("noise")) read_json(j.at("noise"), g.noise);
  read_key(j, "repeats", g.repeats);
  read_key(j, "traj_seconds", g.traj_seconds);
  read_key(j, "rate", g.rate);
  read_key(j, "augment_yz", g.augment_yz);
  read_key(j, "augment_limit", g.augment_limit);
  read_key(j, "gnss_noise_sigma", g.gnss.noise_sigma);
}

json to_json(const WindowingSpec& w) {
  return {{"window_seconds", w.window_seconds},
          {"stride_seconds", w.stride_seconds},
          {"train_windows", w.train_windows},
          {"val_windows", w.val_windows}};
}

void read_json(const json& j, WindowingSpec& w) {
  read_key(j, "window_seconds", w.window_seconds);
  read_key(j, "stride_seconds", w.stride_seconds);
  read_key(j, "train_windows", w.train_windows);
  read_key(j, "val_windows", w.val_windows);
}

json to_json(const TestSuiteSpec& s) {
  json types = json::array();
  for (const auto& t : s.dvl_types) {
    types.push_back({{"name", t.name}, {"scale", t.scale}, {"bias", t.bias}, {"noise", t.noise}});
  }
  json evals = json::array();
  for (const auto& v : s.eval_velocities) evals.push_back(vec3_to_json(v));
  return {{"dvl_types", std::move(types)},
          {"calib_velocity", vec3_to_json(s.calib_velocity)},
          {"calib_seconds", s.calib_seconds},
          {"eval_velocities", std::move(evals)},
          {"eval_seconds", s.eval_seconds},
          {"rate", s.rate},
          {"gnss_noise_sigma", s.gnss.noise_sigma}};
}

void read_json(const json& j, TestSuiteSpec& s) {
  if (j.contains("dvl_types")) {
    s.dvl_types.clear();
    for (const auto& t : j.at("dvl_types")) {
      s.dvl_types.push_back({t.at("name").get<std::string>(), t.at("scale").get<double>(),
                             t.at("bias").get<double>(), t.at("noise").get<double>()});
    }
  }
  if (j.contains("calib_velocity")) s.calib_velocity = vec3_from_json(j.at("calib_velocity"));
  read_key(j, "calib_seconds", s.calib_seconds);
  if (j.contains("eval_velocities")) {
    s.eval_velocities.clear();
    for (const auto& v : j.at("eval_velocities")) s.eval_velocities.push_back(vec3_from_json(v));
  }
  read_key(j, "eval_seconds", s.eval_seconds);
  read_key(j, "rate", s.rate);
  read_key(j, "gnss_noise_sigma", s.gnss.noise_sigma);
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"dropout", c.dropout},       {"seed", c.seed}};
}

void read_json(const json& j, TrainConfig& c) {
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "max_epochs", c.max_epochs);
  read_key(j, "patience", c.patience);
  read_key(j, "dropout", c.dropout);
  read_key(j, "seed", c.seed);
}

}  // namespace dvlcal::detail
