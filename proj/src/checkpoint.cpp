#include "dglight/checkpoint.hpp"

#include "dglight/error.hpp"

#include <fstream>

namespace dglight {

using nlohmann::json;

json checkpoint_to_json(const Checkpoint& ckpt) {
  json params = json::array();
  for (const auto& [name, t] : ckpt.params) {
    json values = json::array();
    for (Index r = 0; r < t.rows(); ++r) {
      for (Index c = 0; c < t.cols(); ++c) values.push_back(t(r, c));
    }
    params.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"values", std::move(values)}});
  }
  return {{"schema_version", kCheckpointSchemaVersion},
          {"parameters", std::move(params)},
          {"metadata", ckpt.metadata}};
}

Checkpoint checkpoint_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("schema_version")) {
    throw SchemaError("checkpoint: missing schema_version");
  }
  if (doc.at("schema_version") != kCheckpointSchemaVersion) {
    throw SchemaError("checkpoint: unsupported schema_version " + doc.at("schema_version").dump());
  }
  Checkpoint ckpt;
  try {
    for (const json& p : doc.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<std::vector<Index>>();
      const auto& values = p.at("values");
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
          static_cast<Index>(values.size()) != shape[0] * shape[1]) {
        throw SchemaError("checkpoint: parameter '" + name + "' has inconsistent shape");
      }
      Tensor t(shape[0], shape[1]);
      size_t k = 0;
      for (Index r = 0; r < shape[0]; ++r) {
        for (Index c = 0; c < shape[1]; ++c) t(r, c) = values[k++].get<double>();
      }
      ckpt.params.emplace(name, std::move(t));
    }
    if (doc.contains("metadata")) ckpt.metadata = doc.at("metadata");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: malformed document: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(ckpt).dump(1) << '\n';
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("checkpoint: " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace dglight
