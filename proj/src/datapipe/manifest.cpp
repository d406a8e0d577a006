#include <fstream>

#include "mst/datapipe.hpp"
#include "mst/errors.hpp"

namespace mst::datapipe {

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split \"" + text + "\"");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(i);
  }
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.volume_path = resolve(j.at("volume_path").get<std::string>());
      e.label = j.at("label").get<int>();
      e.split = parse_split(j.at("split").get<std::string>());
      if (j.contains("features_path") && !j["features_path"].is_null()) {
        e.features_path = resolve(j["features_path"].get<std::string>());
      }
      if (!std::filesystem::exists(e.volume_path)) {
        throw ConfigError("manifest line " + std::to_string(line_no) + ": missing file " + e.volume_path.string());
      }
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest " + path.string());
  const auto base = path.parent_path();
  auto relative = [&](const std::filesystem::path& p) {
    return std::filesystem::proximate(p, base.empty() ? std::filesystem::current_path() : base).generic_string();
  };
  for (const auto& e : manifest.entries) {
    nlohmann::json j = {{"volume_path", relative(e.volume_path)}, {"label", e.label}, {"split", to_string(e.split)}};
    if (e.features_path) j["features_path"] = relative(*e.features_path);
    out << j.dump() << '\n';
  }
}

}  // namespace mst::datapipe
