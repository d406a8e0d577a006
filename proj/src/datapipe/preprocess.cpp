#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "mst/datapipe.hpp"
#include "mst/errors.hpp"

namespace mst::datapipe {

namespace {

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
  std::size_t nearest;
};

AxisSample axis_sample(double coord, std::size_t extent) {
  const double clamped = std::clamp(coord, 0.0, static_cast<double>(extent - 1));
  const auto lo = static_cast<std::size_t>(std::floor(clamped));
  const std::size_t hi = std::min(lo + 1, extent - 1);
  return {lo, hi, clamped - static_cast<double>(lo), static_cast<std::size_t>(std::lround(clamped))};
}

Volume resample_to(const Volume& v, const std::array<std::size_t, 3>& out_shape, const std::array<double, 3>& ratio,
                   const std::array<double, 3>& out_spacing) {
  v.validate();
  Volume out(out_shape[0], out_shape[1], out_shape[2]);
  out.spacing_mm = out_spacing;
  out.label = v.label;
  out.kind = v.kind;
  if (v.mask) out.mask.emplace(out.voxels(), 0);

  std::array<std::vector<AxisSample>, 3> samples;
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < out_shape[a]; ++i) {
      samples[a].push_back(axis_sample((static_cast<double>(i) + 0.5) * ratio[a] - 0.5, v.shape[a]));
    }
  }
  for (std::size_t z = 0; z < out_shape[0]; ++z) {
    const AxisSample& sz = samples[0][z];
    for (std::size_t y = 0; y < out_shape[1]; ++y) {
      const AxisSample& sy = samples[1][y];
      for (std::size_t x = 0; x < out_shape[2]; ++x) {
        const AxisSample& sx = samples[2][x];
        auto lerp_x = [&](std::size_t zz, std::size_t yy) {
          return (1.0 - sx.frac) * v.at(zz, yy, sx.lo) + sx.frac * v.at(zz, yy, sx.hi);
        };
        auto lerp_y = [&](std::size_t zz) { return (1.0 - sy.frac) * lerp_x(zz, sy.lo) + sy.frac * lerp_x(zz, sy.hi); };
        out.at(z, y, x) = static_cast<float>((1.0 - sz.frac) * lerp_y(sz.lo) + sz.frac * lerp_y(sz.hi));
        if (v.mask) (*out.mask)[out.index(z, y, x)] = (*v.mask)[v.index(sz.nearest, sy.nearest, sx.nearest)];
      }
    }
  }
  out.refresh_lesion_slices();
  return out;
}

}  // namespace

Volume resample(const Volume& v, const std::array<double, 3>& target_spacing_mm) {
  for (double s : target_spacing_mm) {
    if (!(s > 0.0)) throw UsageError("resample: target spacing must be positive");
  }
  v.validate();
  std::array<std::size_t, 3> shape{};
  std::array<double, 3> ratio{};
  for (int a = 0; a < 3; ++a) {
    const double physical = static_cast<double>(v.shape[a]) * v.spacing_mm[a];
    shape[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(physical / target_spacing_mm[a])));
    ratio[a] = target_spacing_mm[a] / v.spacing_mm[a];
  }
  if (shape == v.shape && target_spacing_mm == v.spacing_mm) return v;
  return resample_to(v, shape, ratio, target_spacing_mm);
}

Volume resize(const Volume& v, const std::array<std::size_t, 3>& shape) {
  v.validate();
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) throw UsageError("resize: zero output extent");
  if (shape == v.shape) return v;
  std::array<double, 3> ratio{};
  std::array<double, 3> spacing{};
  for (int a = 0; a < 3; ++a) {
    ratio[a] = static_cast<double>(v.shape[a]) / static_cast<double>(shape[a]);
    spacing[a] = v.spacing_mm[a] * ratio[a];
  }
  return resample_to(v, shape, ratio, spacing);
}

Volume subtraction(const Volume& pre_contrast, const Volume& post_contrast, SubtractionOrder order) {
  pre_contrast.validate();
  post_contrast.validate();
  if (pre_contrast.shape != post_contrast.shape) throw UsageError("subtraction: volume shapes differ");
  if (pre_contrast.spacing_mm != post_contrast.spacing_mm) throw UsageError("subtraction: voxel spacings differ");
  Volume out = post_contrast;
  const bool post_first = order == SubtractionOrder::post_minus_pre;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = post_first ? post_contrast.data[i] - pre_contrast.data[i] : pre_contrast.data[i] - post_contrast.data[i];
  }
  return out;
}

std::array<std::ptrdiff_t, 3> volume_center(const Volume& v) {
  return {static_cast<std::ptrdiff_t>(v.shape[0] / 2), static_cast<std::ptrdiff_t>(v.shape[1] / 2),
          static_cast<std::ptrdiff_t>(v.shape[2] / 2)};
}

Volume crop_or_pad(const Volume& v, const std::array<std::size_t, 3>& size, const std::array<std::ptrdiff_t, 3>& center) {
  v.validate();
  if (size[0] == 0 || size[1] == 0 || size[2] == 0) throw UsageError("crop_or_pad: size must be positive");
  Volume out(size[0], size[1], size[2]);
  out.spacing_mm = v.spacing_mm;
  out.label = v.label;
  out.kind = v.kind;
  if (v.mask) out.mask.emplace(out.voxels(), 0);
  std::array<std::ptrdiff_t, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = center[a] - static_cast<std::ptrdiff_t>(size[a] / 2);
  for (std::size_t z = 0; z < size[0]; ++z) {
    const std::ptrdiff_t sz = start[0] + static_cast<std::ptrdiff_t>(z);
    if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(v.shape[0])) continue;
    for (std::size_t y = 0; y < size[1]; ++y) {
      const std::ptrdiff_t sy = start[1] + static_cast<std::ptrdiff_t>(y);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(v.shape[1])) continue;
      for (std::size_t x = 0; x < size[2]; ++x) {
        const std::ptrdiff_t sx = start[2] + static_cast<std::ptrdiff_t>(x);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(v.shape[2])) continue;
        const std::size_t src = v.index(static_cast<std::size_t>(sz), static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        out.at(z, y, x) = v.data[src];
        if (v.mask) (*out.mask)[out.index(z, y, x)] = (*v.mask)[src];
      }
    }
  }
  out.refresh_lesion_slices();
  return out;
}

std::vector<std::uint8_t> consensus_mask(const RaterAnnotation& annotation) {
  const auto& masks = annotation.rater_masks;
  if (masks.empty()) throw UsageError("consensus_mask: no rater masks");
  const std::size_t n = masks.front().size();
  for (const auto& m : masks) {
    if (m.size() != n) throw DimensionError("consensus_mask: rater masks differ in size");
  }
  const std::size_t threshold = (masks.size() + 1) / 2;
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t votes = 0;
    for (const auto& m : masks) votes += m[i] != 0 ? 1 : 0;
    out[i] = votes >= threshold ? 1 : 0;
  }
  return out;
}

std::string to_string(Dignity d) {
  switch (d) {
    case Dignity::benign:
      return "benign";
    case Dignity::malignant:
      return "malignant";
    case Dignity::excluded:
      return "excluded";
  }
  return "unknown";
}

Dignity dignity_label(const std::vector<int>& ratings) {
  if (ratings.empty()) throw ValidationError("dignity_label: no ratings");
  long total = 0;
  for (int r : ratings) {
    if (r < 1 || r > 5) throw ValidationError("malignancy rating " + std::to_string(r) + " outside [1, 5]");
    total += r;
  }
  // Compare total against 3·n in integers so a mean of exactly 3 is detected without rounding.
  const long pivot = 3L * static_cast<long>(ratings.size());
  if (total > pivot) return Dignity::malignant;
  if (total < pivot) return Dignity::benign;
  return Dignity::excluded;
}

double equivalent_diameter_mm(const std::vector<std::uint8_t>& mask, const std::array<double, 3>& spacing_mm) {
  const auto count = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  const double volume = count * spacing_mm[0] * spacing_mm[1] * spacing_mm[2];
  return std::cbrt(6.0 * volume / std::numbers::pi);
}

bool exclude_small(const std::vector<std::uint8_t>& mask, const std::array<double, 3>& spacing_mm, double min_diameter_mm) {
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    std::cerr << "warning: empty nodule mask, dropping\n";
    return false;
  }
  // Small tolerance so a nodule built to be exactly min_diameter_mm is not lost to rounding.
  return equivalent_diameter_mm(mask, spacing_mm) >= min_diameter_mm - 1e-9;
}

}  // namespace mst::datapipe
