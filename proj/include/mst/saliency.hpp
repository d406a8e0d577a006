#pragma once

// Saliency volumes: fused slice×patch attention for the slice transformer,
// gradient×activation maps for the 3D CNN, and the automated slice/lesion
// correctness proxies.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mst/baseline3d.hpp"
#include "mst/volume.hpp"

namespace mst::saliency {

enum class Source { mst_fused, mst_slice_only, grad_activation };
std::string to_string(Source s);

struct SaliencyVolume {
  std::array<std::size_t, 3> shape{0, 0, 0};  // D × H × W
  std::vector<float> values;                   // non-negative
  Source source = Source::mst_fused;
  std::string normalization = "max";  // "max" (peak = 1) or "mass" (sum = 1)

  Volume to_volume(const std::array<double, 3>& spacing_mm = {1.0, 1.0, 1.0}) const;
};

// Fixed constants of the correctness proxy.
inline constexpr int kSliceTolerance = 1;
inline constexpr double kLesionRadiusVoxels = 2.0;

struct FusedSaliency {
  std::vector<float> raw;  // S × gh × gw, slice_w[i]·patch[i]; sums to 1
  SaliencyVolume volume;   // interpolated to S × H × W and max-normalised
};

/// Per-slice product of slice weight and patch attention, bilinearly upsampled
/// to H×W per slice, then max-normalised.
FusedSaliency fuse_attention(std::span<const float> slice_weights, std::span<const float> patch_attention,
                             std::size_t grid_h, std::size_t grid_w, std::size_t out_h, std::size_t out_w);

/// Slice weight broadcast over each slice, max-normalised.
SaliencyVolume slice_only_saliency(std::span<const float> slice_weights, std::size_t out_h, std::size_t out_w);

/// Align-corners bilinear: grid nodes map onto the first/last output pixel.
std::vector<float> interpolate_bilinear(std::span<const float> grid, std::size_t grid_h, std::size_t grid_w,
                                        std::size_t out_h, std::size_t out_w);

/// Trilinear upsampling with voxel-centre alignment (as in resampling).
std::vector<float> interpolate_trilinear(std::span<const float> grid, const std::array<std::size_t, 3>& in_shape,
                                         const std::array<std::size_t, 3>& out_shape);

/// Scales to max 1 in place; an all-zero map stays zero.
void max_normalize(std::vector<float>& values);

/// Σ_c A⊙G at feature-map resolution, before rectification. G is the gradient
/// of the target logit with respect to the last-stage activations A.
std::vector<float> grad_activation_raw(const cnn::Cnn3dModel& model, const Volume& volume, std::size_t target_class);

/// ReLU(Σ_c A⊙G), trilinearly upsampled to the input shape and max-normalised.
SaliencyVolume grad_activation_map(const cnn::Cnn3dModel& model, const Volume& volume, std::size_t target_class);

/// Slice masses of the map (sum over each H×W plane).
std::vector<double> slice_masses(const SaliencyVolume& s);

/// Argmax-mass slice (lowest index on ties) lies within ±kSliceTolerance of a lesion slice.
bool slice_correctness(const SaliencyVolume& s, const std::vector<int>& lesion_slices);

/// Global argmax voxel (lowest flat index on ties) lies within kLesionRadiusVoxels
/// (Euclidean, voxel units) of a mask voxel.
bool lesion_correctness(const SaliencyVolume& s, std::span<const std::uint8_t> lesion_mask);

}  // namespace mst::saliency
