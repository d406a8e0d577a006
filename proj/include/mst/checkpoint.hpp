#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mst/autodiff.hpp"

namespace mst {

// MSTC file: "MSTC", u32 version, u32 header length, JSON header, then the
// float32 values of every parameter in the order listed under header["params"].
inline constexpr std::uint32_t kMstcVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

struct Checkpoint {
  nlohmann::json header;  // caller metadata plus "params": [{"name", "shape"}]
  NamedTensors params;
};

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const NamedTensors& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values by name into `targets`; every target must be present with the same shape.
void load_parameters(const NamedTensors& source, const NamedTensors& targets);

/// Value snapshot, used to keep the best-epoch weights in memory.
std::vector<std::vector<float>> snapshot(const NamedTensors& params);
void restore(const NamedTensors& params, const std::vector<std::vector<float>>& values);

}  // namespace mst
