#include <cmath>

#include "mst/detail/binary_io.hpp"
#include "mst/errors.hpp"
#include "mst/volume.hpp"

namespace mst {

Volume::Volume(std::size_t depth, std::size_t height, std::size_t width, float fill)
    : shape{depth, height, width}, data(depth * height * width, fill) {}

void Volume::refresh_lesion_slices() {
  lesion_slices.clear();
  if (!mask) return;
  const std::size_t plane = slice_size();
  for (std::size_t z = 0; z < depth(); ++z) {
    for (std::size_t i = 0; i < plane; ++i) {
      if ((*mask)[z * plane + i] != 0) {
        lesion_slices.push_back(static_cast<int>(z));
        break;
      }
    }
  }
}

void Volume::validate() const {
  if (voxels() == 0) throw UsageError("volume has an empty extent");
  if (data.size() != voxels()) throw UsageError("volume data length does not match its shape");
  for (double s : spacing_mm) {
    if (!(s > 0.0) || !std::isfinite(s)) throw UsageError("voxel spacing must be positive");
  }
  if (mask && mask->size() != voxels()) throw UsageError("mask shape differs from data shape");
}

void write_volume(const std::filesystem::path& path, const Volume& volume) {
  volume.validate();
  nlohmann::json header = {
      {"shape", {volume.shape[0], volume.shape[1], volume.shape[2]}},
      {"spacing_mm", {volume.spacing_mm[0], volume.spacing_mm[1], volume.spacing_mm[2]}},
      {"label", volume.label ? nlohmann::json(*volume.label) : nlohmann::json(nullptr)},
      {"has_mask", volume.mask.has_value()},
      {"kind", volume.kind},
  };
  detail::BinaryWriter out;
  out.header("MSTV", kMstvVersion, header);
  out.floats(volume.data);
  if (volume.mask) out.bytes(*volume.mask);
  out.save(path);
}

Volume read_volume(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  const nlohmann::json header = in.header("MSTV", kMstvVersion);
  Volume v;
  try {
    const auto shape = header.at("shape").get<std::vector<std::size_t>>();
    const auto spacing = header.at("spacing_mm").get<std::vector<double>>();
    if (shape.size() != 3 || spacing.size() != 3) throw FormatError("shape and spacing_mm need 3 entries", in.header_offset());
    for (int i = 0; i < 3; ++i) {
      v.shape[i] = shape[i];
      v.spacing_mm[i] = spacing[i];
    }
    const auto& label = header.at("label");
    if (!label.is_null()) v.label = label.get<int>();
    v.kind = header.at("kind").get<std::string>();
    if (v.kind != "image" && v.kind != "saliency") throw FormatError("unknown kind \"" + v.kind + "\"", in.header_offset());
    const bool has_mask = header.at("has_mask").get<bool>();
    if (v.voxels() == 0) throw FormatError("zero extent in shape", in.header_offset());
    for (double s : v.spacing_mm) {
      if (!(s > 0.0)) throw FormatError("non-positive spacing", in.header_offset());
    }
    v.data = in.floats(v.voxels(), "voxel payload");
    if (has_mask) {
      const std::uint64_t mask_at = in.offset();
      v.mask = in.bytes(v.voxels(), "mask payload");
      for (std::size_t i = 0; i < v.mask->size(); ++i) {
        if ((*v.mask)[i] > 1) throw FormatError("mask value is not 0/1", mask_at + i);
      }
    }
    in.expect_end("volume payload");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad MSTV header field: ") + e.what(), in.header_offset());
  }
  v.refresh_lesion_slices();
  return v;
}

}  // namespace mst
