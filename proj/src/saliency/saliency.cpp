#include "mst/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mst/errors.hpp"

namespace mst::saliency {

std::string to_string(Source s) {
  switch (s) {
    case Source::mst_fused:
      return "mst_fused";
    case Source::mst_slice_only:
      return "mst_slice_only";
    case Source::grad_activation:
      return "grad_activation";
  }
  return "mst_fused";
}

Volume SaliencyVolume::to_volume(const std::array<double, 3>& spacing_mm) const {
  Volume v(shape[0], shape[1], shape[2]);
  v.data = values;
  v.spacing_mm = spacing_mm;
  v.kind = "saliency";
  return v;
}

void max_normalize(std::vector<float>& values) {
  if (values.empty()) return;
  const float peak = *std::max_element(values.begin(), values.end());
  if (peak <= 0.0F) return;
  for (float& v : values) v /= peak;
}

std::vector<float> interpolate_bilinear(std::span<const float> grid, std::size_t grid_h, std::size_t grid_w,
                                        std::size_t out_h, std::size_t out_w) {
  if (grid_h == 0 || grid_w == 0) throw UsageError("interpolate_bilinear: empty grid");
  if (out_h == 0 || out_w == 0) throw UsageError("interpolate_bilinear: zero-size output");
  if (grid.size() != grid_h * grid_w) throw DimensionError("interpolate_bilinear: grid length mismatch");
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  std::vector<float> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = coord(y, out_h, grid_h);
    const auto y0 = std::min(static_cast<std::size_t>(fy), grid_h - 1);
    const std::size_t y1 = std::min(y0 + 1, grid_h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = coord(x, out_w, grid_w);
      const auto x0 = std::min(static_cast<std::size_t>(fx), grid_w - 1);
      const std::size_t x1 = std::min(x0 + 1, grid_w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1.0 - tx) * grid[y0 * grid_w + x0] + tx * grid[y0 * grid_w + x1];
      const double bottom = (1.0 - tx) * grid[y1 * grid_w + x0] + tx * grid[y1 * grid_w + x1];
      out[y * out_w + x] = static_cast<float>((1.0 - ty) * top + ty * bottom);
    }
  }
  return out;
}

std::vector<float> interpolate_trilinear(std::span<const float> grid, const std::array<std::size_t, 3>& in_shape,
                                         const std::array<std::size_t, 3>& out_shape) {
  const std::size_t n_in = in_shape[0] * in_shape[1] * in_shape[2];
  if (n_in == 0) throw UsageError("interpolate_trilinear: empty grid");
  if (out_shape[0] * out_shape[1] * out_shape[2] == 0) throw UsageError("interpolate_trilinear: zero-size output");
  if (grid.size() != n_in) throw DimensionError("interpolate_trilinear: grid length mismatch");
  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  std::array<std::vector<Tap>, 3> taps;
  for (int a = 0; a < 3; ++a) {
    const double ratio = static_cast<double>(in_shape[a]) / static_cast<double>(out_shape[a]);
    for (std::size_t i = 0; i < out_shape[a]; ++i) {
      const double c = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in_shape[a] - 1));
      const auto lo = static_cast<std::size_t>(c);
      taps[a].push_back({lo, std::min(lo + 1, in_shape[a] - 1), c - static_cast<double>(lo)});
    }
  }
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return static_cast<double>(grid[(z * in_shape[1] + y) * in_shape[2] + x]); };
  std::vector<float> out(out_shape[0] * out_shape[1] * out_shape[2]);
  std::size_t o = 0;
  for (const Tap& tz : taps[0]) {
    for (const Tap& ty : taps[1]) {
      for (const Tap& tx : taps[2]) {
        auto plane = [&](std::size_t z) {
          const double top = (1.0 - tx.t) * at(z, ty.lo, tx.lo) + tx.t * at(z, ty.lo, tx.hi);
          const double bottom = (1.0 - tx.t) * at(z, ty.hi, tx.lo) + tx.t * at(z, ty.hi, tx.hi);
          return (1.0 - ty.t) * top + ty.t * bottom;
        };
        out[o++] = static_cast<float>((1.0 - tz.t) * plane(tz.lo) + tz.t * plane(tz.hi));
      }
    }
  }
  return out;
}

FusedSaliency fuse_attention(std::span<const float> slice_weights, std::span<const float> patch_attention,
                             std::size_t grid_h, std::size_t grid_w, std::size_t out_h, std::size_t out_w) {
  constexpr double kTolerance = 1e-4;
  const std::size_t slices = slice_weights.size();
  const std::size_t cells = grid_h * grid_w;
  if (slices == 0) throw DimensionError("fuse_attention: no slices");
  if (cells == 0) throw UsageError("fuse_attention: features carry no patch attention");
  if (patch_attention.size() != slices * cells) {
    throw DimensionError("fuse_attention: " + std::to_string(slices) + " slice weights but " +
                         std::to_string(patch_attention.size() / cells) + " attention grids");
  }
  const double slice_total = std::accumulate(slice_weights.begin(), slice_weights.end(), 0.0);
  if (std::abs(slice_total - 1.0) > kTolerance) throw UsageError("fuse_attention: slice weights do not sum to 1");
  for (std::size_t s = 0; s < slices; ++s) {
    const auto grid = patch_attention.subspan(s * cells, cells);
    if (std::abs(std::accumulate(grid.begin(), grid.end(), 0.0) - 1.0) > kTolerance) {
      throw UsageError("fuse_attention: patch attention of slice " + std::to_string(s) + " does not sum to 1");
    }
  }

  FusedSaliency out;
  out.raw.resize(slices * cells);
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t i = 0; i < cells; ++i) out.raw[s * cells + i] = slice_weights[s] * patch_attention[s * cells + i];
  }
  out.volume.shape = {slices, out_h, out_w};
  out.volume.source = Source::mst_fused;
  out.volume.values.reserve(slices * out_h * out_w);
  for (std::size_t s = 0; s < slices; ++s) {
    const auto plane = interpolate_bilinear(std::span<const float>(out.raw).subspan(s * cells, cells), grid_h, grid_w, out_h, out_w);
    out.volume.values.insert(out.volume.values.end(), plane.begin(), plane.end());
  }
  max_normalize(out.volume.values);
  return out;
}

SaliencyVolume slice_only_saliency(std::span<const float> slice_weights, std::size_t out_h, std::size_t out_w) {
  if (slice_weights.empty()) throw DimensionError("slice_only_saliency: no slices");
  SaliencyVolume s;
  s.shape = {slice_weights.size(), out_h, out_w};
  s.source = Source::mst_slice_only;
  s.values.reserve(slice_weights.size() * out_h * out_w);
  for (float w : slice_weights) s.values.insert(s.values.end(), out_h * out_w, w);
  max_normalize(s.values);
  return s;
}

std::vector<float> grad_activation_raw(const cnn::Cnn3dModel& model, const Volume& volume, std::size_t target_class) {
  if (target_class >= model.config().num_classes) throw UsageError("grad_activation_map: target class out of range");
  if (volume.shape != model.config().input_shape) throw DimensionError("grad_activation_map: volume shape mismatch");
  auto params = model.parameters();
  for (ad::Tensor& p : params) p.zero_grad();

  ad::Tensor input = ad::Tensor::from({1, volume.depth(), volume.height(), volume.width()}, volume.data, true);
  const cnn::CnnOutput out = model.forward(input);
  if (!out.activations.defined() || !out.activations.requires_grad()) {
    throw UsageError("grad_activation_map: model did not retain differentiable activations");
  }
  ad::backward(ad::slice_cols(out.logits, target_class, 1));

  const ad::Tensor& acts = out.activations;
  const std::size_t channels = acts.dim(0);
  const std::size_t positions = acts.numel() / channels;
  std::vector<float> raw(positions, 0.0F);
  if (acts.has_grad()) {
    const auto a = acts.data();
    const auto g = acts.grad();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < positions; ++p) raw[p] += a[c * positions + p] * g[c * positions + p];
    }
  }
  for (ad::Tensor& p : params) p.zero_grad();
  return raw;
}

SaliencyVolume grad_activation_map(const cnn::Cnn3dModel& model, const Volume& volume, std::size_t target_class) {
  std::vector<float> raw = grad_activation_raw(model, volume, target_class);
  for (float& v : raw) v = std::max(v, 0.0F);
  SaliencyVolume s;
  s.shape = volume.shape;
  s.source = Source::grad_activation;
  s.values = interpolate_trilinear(raw, model.config().feature_shape(), volume.shape);
  for (float& v : s.values) v = std::max(v, 0.0F);
  max_normalize(s.values);
  return s;
}

namespace {
void require_content(const SaliencyVolume& s) {
  const std::size_t n = s.shape[0] * s.shape[1] * s.shape[2];
  if (n == 0 || s.values.size() != n) throw UsageError("saliency volume is empty or malformed");
  if (std::none_of(s.values.begin(), s.values.end(), [](float v) { return v > 0.0F; })) {
    throw UsageError("saliency volume carries no mass");
  }
}
}  // namespace

std::vector<double> slice_masses(const SaliencyVolume& s) {
  const std::size_t plane = s.shape[1] * s.shape[2];
  std::vector<double> mass(s.shape[0], 0.0);
  for (std::size_t z = 0; z < s.shape[0]; ++z) {
    for (std::size_t i = 0; i < plane; ++i) mass[z] += s.values[z * plane + i];
  }
  return mass;
}

bool slice_correctness(const SaliencyVolume& s, const std::vector<int>& lesion_slices) {
  if (lesion_slices.empty()) throw UsageError("slice_correctness: no lesion slices");
  require_content(s);
  const auto mass = slice_masses(s);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  const auto best = static_cast<int>(std::max_element(mass.begin(), mass.end()) - mass.begin());
  return std::any_of(lesion_slices.begin(), lesion_slices.end(),
                     [best](int z) { return std::abs(z - best) <= kSliceTolerance; });
}

bool lesion_correctness(const SaliencyVolume& s, std::span<const std::uint8_t> lesion_mask) {
  require_content(s);
  if (lesion_mask.size() != s.values.size()) throw DimensionError("lesion_correctness: mask shape mismatch");
  if (std::none_of(lesion_mask.begin(), lesion_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw UsageError("lesion_correctness: empty mask");
  }
  const auto peak = static_cast<std::size_t>(std::max_element(s.values.begin(), s.values.end()) - s.values.begin());
  const auto h = static_cast<long>(s.shape[1]);
  const auto w = static_cast<long>(s.shape[2]);
  const auto d = static_cast<long>(s.shape[0]);
  const long pz = static_cast<long>(peak) / (h * w);
  const long py = (static_cast<long>(peak) / w) % h;
  const long px = static_cast<long>(peak) % w;
  const auto r = static_cast<long>(std::floor(kLesionRadiusVoxels));
  for (long dz = -r; dz <= r; ++dz) {
    for (long dy = -r; dy <= r; ++dy) {
      for (long dx = -r; dx <= r; ++dx) {
        if (static_cast<double>(dz * dz + dy * dy + dx * dx) > kLesionRadiusVoxels * kLesionRadiusVoxels) continue;
        const long z = pz + dz, y = py + dy, x = px + dx;
        if (z < 0 || y < 0 || x < 0 || z >= d || y >= h || x >= w) continue;
        if (lesion_mask[static_cast<std::size_t>((z * h + y) * w + x)] != 0) return true;
      }
    }
  }
  return false;
}

}  // namespace mst::saliency
