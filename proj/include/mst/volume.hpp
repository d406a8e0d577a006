#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mst {

/// A D×H×W scalar grid. Axis 0 is the slice axis; slices are H×W images.
struct Volume {
  std::array<std::size_t, 3> shape{0, 0, 0};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};  // (z, y, x)
  std::vector<float> data;
  std::optional<std::vector<std::uint8_t>> mask;
  std::vector<int> lesion_slices;  // sorted; mirrors the mask's support
  std::optional<int> label;
  std::string kind = "image";  // "image" or "saliency"

  Volume() = default;
  Volume(std::size_t depth, std::size_t height, std::size_t width, float fill = 0.0F);

  std::size_t depth() const { return shape[0]; }
  std::size_t height() const { return shape[1]; }
  std::size_t width() const { return shape[2]; }
  std::size_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t slice_size() const { return shape[1] * shape[2]; }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * shape[1] + y) * shape[2] + x; }
  float& at(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }

  /// Rebuilds lesion_slices from the mask (cleared when there is no mask).
  void refresh_lesion_slices();
  /// Throws UsageError on shape/spacing/mask inconsistencies.
  void validate() const;
};

// MSTV file: "MSTV", u32 version, u32 header length, JSON header,
// float32 voxels, then one u8 per voxel when has_mask. Little-endian.
inline constexpr std::uint32_t kMstvVersion = 1;

void write_volume(const std::filesystem::path& path, const Volume& volume);
Volume read_volume(const std::filesystem::path& path);

}  // namespace mst
