#include "mst/checkpoint.hpp"

#include <algorithm>
#include <map>

#include "mst/detail/binary_io.hpp"
#include "mst/errors.hpp"

namespace mst {

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const NamedTensors& params) {
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, t] : params) listing.push_back({{"name", name}, {"shape", t.shape()}});
  header["params"] = std::move(listing);
  detail::BinaryWriter out;
  out.header("MSTC", kMstcVersion, header);
  for (const auto& [name, t] : params) out.floats(t.data());
  out.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  Checkpoint ckpt;
  ckpt.header = in.header("MSTC", kMstcVersion);
  try {
    for (const auto& entry : ckpt.header.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<ad::Shape>();
      const std::size_t n = ad::numel(shape);
      ckpt.params.emplace_back(name, ad::Tensor::from(shape, in.floats(n, "parameter payload"), false));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad MSTC parameter listing: ") + e.what(), in.header_offset());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("bad parameter shape: ") + e.what(), in.header_offset());
  }
  in.expect_end("parameter payload");
  return ckpt;
}

void load_parameters(const NamedTensors& source, const NamedTensors& targets) {
  std::map<std::string, const ad::Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (const auto& [name, target] : targets) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw UsageError("checkpoint lacks parameter " + name);
    if (it->second->shape() != target.shape()) {
      throw UsageError("parameter " + name + " has shape " + ad::to_string(it->second->shape()) + ", model expects " +
                       ad::to_string(target.shape()));
    }
    ad::Tensor dst = target;
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

std::vector<std::vector<float>> snapshot(const NamedTensors& params) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(const NamedTensors& params, const std::vector<std::vector<float>>& values) {
  if (values.size() != params.size()) throw UsageError("restore: snapshot has a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor dst = params[i].second;
    if (values[i].size() != dst.numel()) throw UsageError("restore: size mismatch for " + params[i].first);
    std::copy(values[i].begin(), values[i].end(), dst.mutable_data().begin());
  }
}

}  // namespace mst
