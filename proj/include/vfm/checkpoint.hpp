#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "vfm/fm_core.hpp"
#include "vfm/sparse_data.hpp"

namespace vfm {

inline constexpr const char* kCheckpointFormat = "vfm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to predict with or resume a trained model.
struct Checkpoint {
  FeatureSpace space;
  Task task = Task::Regression;
  VariationalParams last;
  std::optional<VariationalParams> averaged;
  nlohmann::json config = nlohmann::json::object();
};

nlohmann::json to_json(const FeatureSpace& space);
FeatureSpace feature_space_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Checkpoint& ckpt);
/// Throws std::runtime_error on a wrong format tag, an unsupported version or
/// parameter vectors that do not match the declared shape.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vfm
