#pragma once

// Per-slice 2D encoding: the trainable toy patch-attention encoder and the
// MSTF reader/writer for features produced by an external encoder.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mst/autodiff.hpp"
#include "mst/volume.hpp"

namespace mst::encoder2d {

/// Per-volume stack of slice feature vectors and CLS→patch attention grids.
struct SliceFeatures {
  std::size_t num_slices = 0;
  std::size_t feature_dim = 0;
  std::size_t grid_h = 0;  // 0×0 grid: no attention (classification only)
  std::size_t grid_w = 0;
  std::vector<float> features;         // num_slices × feature_dim
  std::vector<float> patch_attention;  // num_slices × grid_h × grid_w
  std::string encoder_id;
  bool frozen = false;

  bool has_attention() const { return grid_h > 0 && grid_w > 0; }
  std::size_t grid_cells() const { return grid_h * grid_w; }
  /// Throws DimensionError on length mismatches, NumericError on un-normalised attention.
  void validate() const;
  ad::Tensor feature_tensor() const;
};

struct ToyPatchEncoderConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t image_side = 64;

  std::size_t grid() const { return image_side / patch_size; }
  void validate() const;
  nlohmann::json to_json() const;
  static ToyPatchEncoderConfig from_json(const nlohmann::json& j);
};

struct EncodedVolume {
  ad::Tensor features;                 // [S × C], differentiable unless frozen
  std::vector<float> patch_attention;  // S × g × g, head-averaged, CLS column dropped
};

/// patchify → linear embed → prepend CLS → one multi-head attention
/// layer; the CLS output is the slice feature. There is no patch position
/// embedding, so identical patches receive identical attention.
class ToyPatchEncoder {
 public:
  ToyPatchEncoder(const ToyPatchEncoderConfig& config, std::uint64_t seed);

  /// image is L×L row-major.
  EncodedVolume encode_slice(std::span<const float> image) const;
  EncodedVolume encode_volume(const Volume& volume) const;
  SliceFeatures features(const Volume& volume) const;

  const ToyPatchEncoderConfig& config() const { return config_; }
  std::string id() const;

  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;
  std::size_t param_count() const;

 private:
  EncodedVolume encode_slices(std::span<const float> voxels, std::size_t num_slices) const;

  ToyPatchEncoderConfig config_;
  bool frozen_ = false;
  ad::Tensor patch_w_, patch_b_, cls_;
  ad::Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

// MSTF file: "MSTF", u32 version, u32 header length, JSON header
// {"num_slices","feature_dim","grid":[gh,gw],"encoder_id"}, S·C float32
// features (slice-major), then S·gh·gw float32 attention. Little-endian.
inline constexpr std::uint32_t kMstfVersion = 1;

struct FeatureLoadInfo {
  std::size_t renormalized_slices = 0;
};

void write_features(const std::filesystem::path& path, const SliceFeatures& features);
/// Attention rows off by at most 1e-3 are renormalised; larger deviations are rejected.
SliceFeatures load_features(const std::filesystem::path& path, FeatureLoadInfo* info = nullptr);

}  // namespace mst::encoder2d
