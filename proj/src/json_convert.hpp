#pragma once

// JSON mapping for the spec structs shared by manifests, checkpoints, configs
// and reports. Readers start from the current value and only override keys
// that are present, so partial documents layer over defaults.

#include "dvlcal/dataset.hpp"
#include "dvlcal/network.hpp"
#include "json.hpp"

namespace dvlcal::detail {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const json& j);

json to_json(const GridAxis& a);
void read_json(const json& j, GridAxis& a);

json to_json(const GridSpec& g);
void read_json(const json& j, GridSpec& g);

json to_json(const WindowingSpec& w);
void read_json(const json& j, WindowingSpec& w);

json to_json(const TestSuiteSpec& s);
void read_json(const json& j, TestSuiteSpec& s);

json to_json(const TrainConfig& c);
void read_json(const json& j, TrainConfig& c);

}  // namespace dvlcal::detail
