#include <cmath>

#include "mst/detail/binary_io.hpp"
#include "mst/encoder2d.hpp"
#include "mst/errors.hpp"

namespace mst::encoder2d {

void write_features(const std::filesystem::path& path, const SliceFeatures& features) {
  features.validate();
  const nlohmann::json header = {
      {"num_slices", features.num_slices},
      {"feature_dim", features.feature_dim},
      {"grid", {features.grid_h, features.grid_w}},
      {"encoder_id", features.encoder_id},
  };
  detail::BinaryWriter out;
  out.header("MSTF", kMstfVersion, header);
  out.floats(features.features);
  out.floats(features.patch_attention);
  out.save(path);
}

SliceFeatures load_features(const std::filesystem::path& path, FeatureLoadInfo* info) {
  constexpr double kRenormTolerance = 1e-3;
  detail::BinaryReader in(path);
  const nlohmann::json header = in.header("MSTF", kMstfVersion);
  SliceFeatures f;
  try {
    f.num_slices = header.at("num_slices").get<std::size_t>();
    f.feature_dim = header.at("feature_dim").get<std::size_t>();
    const auto grid = header.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 2) throw FormatError("grid needs two entries", in.header_offset());
    f.grid_h = grid[0];
    f.grid_w = grid[1];
    f.encoder_id = header.at("encoder_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad MSTF header field: ") + e.what(), in.header_offset());
  }
  if (f.num_slices == 0 || f.feature_dim == 0) throw FormatError("num_slices and feature_dim must be positive", in.header_offset());
  if ((f.grid_h == 0) != (f.grid_w == 0)) throw FormatError("grid must be both zero or both positive", in.header_offset());

  f.features = in.floats(f.num_slices * f.feature_dim, "feature payload");
  const std::uint64_t attention_at = in.offset();
  const std::size_t cells = f.grid_cells();
  f.patch_attention = in.floats(f.num_slices * cells, "attention payload");
  in.expect_end("attention payload");

  std::size_t renormalized = 0;
  for (std::size_t s = 0; s < f.num_slices && cells > 0; ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
      const float a = f.patch_attention[s * cells + i];
      if (a < 0.0F) throw FormatError("negative attention value", attention_at + (s * cells + i) * sizeof(float));
      total += a;
    }
    const double err = std::abs(total - 1.0);
    if (err > kRenormTolerance) {
      throw FormatError("attention of slice " + std::to_string(s) + " sums to " + std::to_string(total),
                        attention_at + s * cells * sizeof(float));
    }
    if (err > 1e-6) {  // below float32 resolution the row is already normalised
      for (std::size_t i = 0; i < cells; ++i) f.patch_attention[s * cells + i] = static_cast<float>(f.patch_attention[s * cells + i] / total);
      ++renormalized;
    }
  }
  if (info) info->renormalized_slices = renormalized;
  return f;
}

}  // namespace mst::encoder2d
