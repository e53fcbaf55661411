#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "iafm/error.hpp"

namespace iafm {

/// Which factor blocks enter the intercept and the slope of the model.
struct ModelSpec {
  bool include_level = false;
  bool include_subject = false;
  bool include_kc_type = false;
  std::string name = "model 0";

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline ModelSpec base_model() { return {false, false, false, "model 0"}; }

/// The eight factor combinations in the conventional ablation-table row order
/// (not binary-counter order).
inline std::vector<ModelSpec> ablation_grid() {
  return {
      {false, false, false, "model 0"},
      {true, false, false, "model 1"},
      {false, true, false, "model 2"},
      {false, false, true, "model 3"},
      {true, true, false, "model 4"},
      {true, false, true, "model 5"},
      {false, true, true, "model 6"},
      {true, true, true, "model 7"},
  };
}

/// Accepts "base", "m0".."m7" or "model 0".."model 7".
inline ModelSpec model_by_name(const std::string& name) {
  if (name == "base") return base_model();
  const auto grid = ablation_grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (name == grid[i].name || name == "m" + std::to_string(i)) return grid[i];
  }
  throw Error(ErrorCode::InvalidParameter, "model '" + name + "'");
}

inline nlohmann::ordered_json to_json(const ModelSpec& m) {
  return {{"name", m.name},
          {"level", m.include_level},
          {"subject", m.include_subject},
          {"kc_type", m.include_kc_type}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  return {j.at("level").get<bool>(), j.at("subject").get<bool>(),
          j.at("kc_type").get<bool>(), j.at("name").get<std::string>()};
}

}  // namespace iafm
