#include <cmath>
#include <fstream>
#include <sstream>

#include "dvlcal/network.hpp"
#include "json_convert.hpp"

namespace dvlcal {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "dvlcal.checkpoint";
constexpr int kVersion = 1;

json tensors_to_json(const std::vector<Tensor>& tensors, const std::vector<std::string>* names) {
  json arr = json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    json t{{"shape", tensors[i].shape}, {"data", tensors[i].data}};
    if (names) t["name"] = (*names)[i];
    arr.push_back(std::move(t));
  }
  return arr;
}

/// Copies values into `dst`, checking names and shapes against the model.
void tensors_from_json(const json& arr, std::vector<Tensor>& dst, const std::vector<std::string>* names) {
  if (!arr.is_array() || arr.size() != dst.size()) {
    throw Error(ErrorKind::kShapeMismatch, "checkpoint tensor count does not match the architecture");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const json& t = arr[i];
    if (names && t.at("name").get<std::string>() != (*names)[i]) {
      throw Error(ErrorKind::kShapeMismatch, "checkpoint tensor '" + t.at("name").get<std::string>() +
                                                 "' where '" + (*names)[i] + "' was expected");
    }
    auto shape = t.at("shape").get<std::vector<int>>();
    auto data = t.at("data").get<std::vector<double>>();
    if (shape != dst[i].shape || data.size() != dst[i].numel()) {
      throw Error(ErrorKind::kShapeMismatch, "checkpoint tensor shape mismatch at index " + std::to_string(i));
    }
    dst[i].data = std::move(data);
  }
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_nullable(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const CalibrationNet& net = ckpt.net;
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["em_tag"] = static_cast<int>(net.em_tag());
  j["window_n"] = net.window_n();
  j["output_dim"] = net.output_dim();
  j["output_scale"] = std::vector<double>(net.output_scale().data(), net.output_scale().data() + net.output_scale().size());
  j["params"] = tensors_to_json(net.params(), &net.param_names());
  j["buffers"] = tensors_to_json(net.buffers(), &net.buffer_names());
  j["train_config"] = detail::to_json(ckpt.train_config);
  j["dataset_fingerprint"] = ckpt.dataset_fingerprint;
  if (ckpt.has_state) {
    const TrainState& st = ckpt.state;
    json history = json::array();
    for (const auto& r : st.history) {
      history.push_back({r.epoch, r.train_loss, r.val_loss, r.best_val_loss});
    }
    j["state"] = {{"epochs_completed", st.epochs_completed},
                  {"step", st.step},
                  {"best_val_loss", finite_or_null(st.best_val_loss)},
                  {"epochs_since_best", st.epochs_since_best},
                  {"history", std::move(history)},
                  {"adam_m", tensors_to_json(st.adam_m, nullptr)},
                  {"adam_v", tensors_to_json(st.adam_v, nullptr)},
                  {"last_params", tensors_to_json(ckpt.last_params, nullptr)},
                  {"last_buffers", tensors_to_json(ckpt.last_buffers, nullptr)}};
  }
  return j.dump(1);
}

Checkpoint deserialize_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat || j.at("version").get<int>() != kVersion) {
      throw Error(ErrorKind::kIo, "unsupported checkpoint format");
    }
    const EmTag tag = em_tag_from_int(j.at("em_tag").get<int>());
    Checkpoint ckpt;
    ckpt.net = CalibrationNet::build(tag, j.at("window_n").get<int>(), RngSeed{0});
    if (j.at("output_dim").get<int>() != ckpt.net.output_dim()) {
      throw Error(ErrorKind::kShapeMismatch, "checkpoint output_dim disagrees with its error model");
    }
    const auto scale = j.at("output_scale").get<std::vector<double>>();
    ckpt.net.set_output_scale(Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size())));
    tensors_from_json(j.at("params"), ckpt.net.params(), &ckpt.net.param_names());
    tensors_from_json(j.at("buffers"), ckpt.net.buffers(), &ckpt.net.buffer_names());
    detail::read_json(j.at("train_config"), ckpt.train_config);
    ckpt.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    if (j.contains("state")) {
      const json& s = j.at("state");
      ckpt.has_state = true;
      TrainState& st = ckpt.state;
      st.epochs_completed = s.at("epochs_completed").get<int>();
      st.step = s.at("step").get<std::int64_t>();
      st.best_val_loss = from_nullable(s.at("best_val_loss"));
      st.epochs_since_best = s.at("epochs_since_best").get<int>();
      for (const auto& r : s.at("history")) {
        st.history.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()});
      }
      for (const auto& p : ckpt.net.params()) {
        st.adam_m.push_back(Tensor::zeros(p.shape));
        st.adam_v.push_back(Tensor::zeros(p.shape));
        ckpt.last_params.push_back(Tensor::zeros(p.shape));
      }
      for (const auto& b : ckpt.net.buffers()) ckpt.last_buffers.push_back(Tensor::zeros(b.shape));
      tensors_from_json(s.at("adam_m"), st.adam_m, nullptr);
      tensors_from_json(s.at("adam_v"), st.adam_v, nullptr);
      tensors_from_json(s.at("last_params"), ckpt.last_params, nullptr);
      tensors_from_json(s.at("last_buffers"), ckpt.last_buffers, nullptr);
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  os << serialize_checkpoint(ckpt);
  if (!os) throw Error(ErrorKind::kIo, "failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::kIo, "cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace dvlcal
