#include "vfm/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace vfm {

using nlohmann::json;

json to_json(const FeatureSpace& space) {
  json groups = json::array();
  for (const auto& r : space.ranges()) {
    groups.push_back({{"name", r.name}, {"begin", r.begin}, {"end", r.end}});
  }
  return {{"num_features", space.num_features()}, {"groups", groups}};
}

FeatureSpace feature_space_from_json(const json& j) {
  std::vector<GroupRange> ranges;
  for (const auto& g : j.at("groups")) {
    ranges.push_back({g.at("name").get<std::string>(), g.at("begin").get<std::size_t>(),
                      g.at("end").get<std::size_t>()});
  }
  FeatureSpace space(std::move(ranges));
  if (space.num_features() != j.at("num_features").get<std::size_t>()) {
    throw std::runtime_error("checkpoint feature space is inconsistent");
  }
  return space;
}

namespace {

json params_to_json(const VariationalParams& vp) {
  const auto v = vp.values();
  return json(std::vector<double>(v.begin(), v.end()));
}

VariationalParams params_from_json(const json& j, const ModelShape& shape) {
  VariationalParams vp(shape);
  const auto values = j.get<std::vector<double>>();
  if (values.size() != vp.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(values.size()) +
                             " parameters, shape needs " + std::to_string(vp.size()));
  }
  std::copy(values.begin(), values.end(), vp.values().begin());
  return vp;
}

}  // namespace

json to_json(const Checkpoint& ckpt) {
  const auto& shape = ckpt.last.shape();
  json j = {
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"task", std::string(to_string(ckpt.task))},
      {"space", to_json(ckpt.space)},
      {"shape",
       {{"num_features", shape.num_features}, {"dim", shape.dim}, {"num_groups", shape.num_groups}}},
      {"config", ckpt.config},
      {"last", params_to_json(ckpt.last)},
  };
  if (ckpt.averaged) j["averaged"] = params_to_json(*ckpt.averaged);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("not a vfm checkpoint");
  }
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.task = parse_task(j.at("task").get<std::string>());
  ckpt.space = feature_space_from_json(j.at("space"));
  const auto& s = j.at("shape");
  ModelShape shape{s.at("num_features").get<std::size_t>(), s.at("dim").get<std::size_t>(),
                   s.at("num_groups").get<std::size_t>()};
  if (shape.num_features != ckpt.space.num_features() ||
      shape.num_groups != ckpt.space.num_groups()) {
    throw std::runtime_error("checkpoint shape does not match its feature space");
  }
  ckpt.last = params_from_json(j.at("last"), shape);
  if (j.contains("averaged")) ckpt.averaged = params_from_json(j.at("averaged"), shape);
  ckpt.config = j.value("config", json::object());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return checkpoint_from_json(json::parse(in));
}

}  // namespace vfm
