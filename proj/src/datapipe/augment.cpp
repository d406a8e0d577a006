#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mst/datapipe.hpp"
#include "mst/errors.hpp"

namespace mst::datapipe {

Volume invert_signal(const Volume& v) {
  v.validate();
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const float pivot = *lo + *hi;
  Volume out = v;
  for (float& x : out.data) x = pivot - x;
  return out;
}

Volume flip(const Volume& v, int axis) {
  if (axis < 0 || axis > 2) throw UsageError("flip: axis must be 0, 1 or 2");
  v.validate();
  Volume out = v;
  const auto d = v.shape[0], h = v.shape[1], w = v.shape[2];
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sz = axis == 0 ? d - 1 - z : z;
        const std::size_t sy = axis == 1 ? h - 1 - y : y;
        const std::size_t sx = axis == 2 ? w - 1 - x : x;
        out.at(z, y, x) = v.at(sz, sy, sx);
        if (v.mask) (*out.mask)[out.index(z, y, x)] = (*v.mask)[v.index(sz, sy, sx)];
      }
    }
  }
  out.refresh_lesion_slices();
  return out;
}

Volume rotate_inplane(const Volume& v, double degrees) {
  v.validate();
  Volume out = v;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const auto h = static_cast<double>(v.shape[1]);
  const auto w = static_cast<double>(v.shape[2]);
  const double cy = (h - 1.0) / 2.0;
  const double cx = (w - 1.0) / 2.0;
  for (std::size_t y = 0; y < v.shape[1]; ++y) {
    for (std::size_t x = 0; x < v.shape[2]; ++x) {
      // Inverse map output pixel to source coordinates.
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = c * dy + s * dx + cy;
      const double sx = -s * dy + c * dx + cx;
      const double fy = std::floor(sy);
      const double fx = std::floor(sx);
      const double ty = sy - fy;
      const double tx = sx - fx;
      const auto ny = static_cast<long>(std::lround(sy));
      const auto nx = static_cast<long>(std::lround(sx));
      const bool nearest_inside = ny >= 0 && nx >= 0 && ny < static_cast<long>(h) && nx < static_cast<long>(w);
      for (std::size_t z = 0; z < v.shape[0]; ++z) {
        double acc = 0.0;
        for (int oy = 0; oy < 2; ++oy) {
          for (int ox = 0; ox < 2; ++ox) {
            const long py = static_cast<long>(fy) + oy;
            const long px = static_cast<long>(fx) + ox;
            if (py < 0 || px < 0 || py >= static_cast<long>(h) || px >= static_cast<long>(w)) continue;
            const double weight = (oy ? ty : 1.0 - ty) * (ox ? tx : 1.0 - tx);
            acc += weight * v.at(z, static_cast<std::size_t>(py), static_cast<std::size_t>(px));
          }
        }
        out.at(z, y, x) = static_cast<float>(acc);
        if (v.mask) {
          (*out.mask)[out.index(z, y, x)] =
              nearest_inside ? (*v.mask)[v.index(z, static_cast<std::size_t>(ny), static_cast<std::size_t>(nx))] : 0;
        }
      }
    }
  }
  out.refresh_lesion_slices();
  return out;
}

Volume augment(const Volume& v, std::uint64_t seed, const AugmentConfig& config) {
  v.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // All draws happen in a fixed order whether or not a transform fires.
  std::array<bool, 3> flips{};
  for (bool& f : flips) f = unit(rng) < config.flip_p;
  const bool add_noise = unit(rng) < config.noise_p;
  const std::uint64_t noise_seed = rng();
  const bool rotate = unit(rng) < config.rotate_p;
  const double angle = (2.0 * unit(rng) - 1.0) * config.rotate_max_deg;
  const bool invert = unit(rng) < config.invert_p;

  Volume out = v;
  for (int axis = 0; axis < 3; ++axis) {
    if (flips[axis]) out = flip(out, axis);
  }
  if (add_noise) {
    double mean = 0.0;
    for (float x : out.data) mean += x;
    mean /= static_cast<double>(out.data.size());
    double var = 0.0;
    for (float x : out.data) var += (x - mean) * (x - mean);
    const double sigma = config.noise_rel_sigma * std::sqrt(var / static_cast<double>(out.data.size()));
    if (sigma > 0.0) {
      std::mt19937_64 noise_rng(noise_seed);
      std::normal_distribution<double> noise(0.0, sigma);
      for (float& x : out.data) x = static_cast<float>(x + noise(noise_rng));
    }
  }
  if (rotate) out = rotate_inplane(out, angle);
  if (invert) out = invert_signal(out);
  return out;
}

}  // namespace mst::datapipe
