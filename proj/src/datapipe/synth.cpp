#include <algorithm>
#include <cmath>
#include <random>

#include "mst/datapipe.hpp"
#include "mst/detail/seed.hpp"
#include "mst/errors.hpp"

namespace mst::datapipe {

using detail::splitmix64;

namespace {

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("synth config: missing key \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: bad value for \"") + key + "\": " + e.what());
  }
}

// One pass of a 3×3×3 box filter with edge clamping.
void box_blur(Volume& v) {
  const auto d = static_cast<long>(v.shape[0]);
  const auto h = static_cast<long>(v.shape[1]);
  const auto w = static_cast<long>(v.shape[2]);
  auto clamp = [](long i, long n) { return std::clamp(i, 0L, n - 1); };
  std::vector<float> tmp(v.data.size());
  // Separable: x, then y, then z.
  for (int axis = 2; axis >= 0; --axis) {
    for (long z = 0; z < d; ++z) {
      for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
          float acc = 0.0F;
          for (long o = -1; o <= 1; ++o) {
            const long zz = axis == 0 ? clamp(z + o, d) : z;
            const long yy = axis == 1 ? clamp(y + o, h) : y;
            const long xx = axis == 2 ? clamp(x + o, w) : x;
            acc += v.data[static_cast<std::size_t>((zz * h + yy) * w + xx)];
          }
          tmp[static_cast<std::size_t>((z * h + y) * w + x)] = acc / 3.0F;
        }
      }
    }
    v.data.swap(tmp);
  }
}

}  // namespace

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.count = required<std::size_t>(j, "count");
  const auto shape = required<std::vector<std::size_t>>(j, "shape");
  const auto spacing = required<std::vector<double>>(j, "spacing_mm");
  if (shape.size() != 3 || spacing.size() != 3) throw ConfigError("synth config: shape and spacing_mm need 3 entries");
  std::copy(shape.begin(), shape.end(), c.shape.begin());
  std::copy(spacing.begin(), spacing.end(), c.spacing_mm.begin());
  c.positive_fraction = required<double>(j, "positive_fraction");
  c.lesion_span_min = required<int>(j, "lesion_span_min");
  c.lesion_span_max = required<int>(j, "lesion_span_max");
  c.lesion_radius_min_px = required<double>(j, "lesion_radius_min_px");
  c.lesion_radius_max_px = required<double>(j, "lesion_radius_max_px");
  c.lesion_contrast = required<double>(j, "lesion_contrast");
  c.noise_sigma = required<double>(j, "noise_sigma");
  c.smoothing_passes = required<int>(j, "smoothing_passes");
  c.distractor_count = required<int>(j, "distractor_count");
  c.distractor_contrast = required<double>(j, "distractor_contrast");
  c.distractor_radius_px = required<double>(j, "distractor_radius_px");
  const auto split = required<nlohmann::json>(j, "split");
  c.split.train = required<double>(split, "train");
  c.split.val = required<double>(split, "val");
  c.split.test = required<double>(split, "test");
  c.seed = required<std::uint64_t>(j, "seed");
  c.validate();
  return c;
}

nlohmann::json SynthConfig::to_json() const {
  return {
      {"count", count},
      {"shape", shape},
      {"spacing_mm", spacing_mm},
      {"positive_fraction", positive_fraction},
      {"lesion_span_min", lesion_span_min},
      {"lesion_span_max", lesion_span_max},
      {"lesion_radius_min_px", lesion_radius_min_px},
      {"lesion_radius_max_px", lesion_radius_max_px},
      {"lesion_contrast", lesion_contrast},
      {"noise_sigma", noise_sigma},
      {"smoothing_passes", smoothing_passes},
      {"distractor_count", distractor_count},
      {"distractor_contrast", distractor_contrast},
      {"distractor_radius_px", distractor_radius_px},
      {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
      {"seed", seed},
  };
}

void SynthConfig::validate() const {
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) throw ConfigError("synth config: shape must be positive");
  for (double s : spacing_mm) {
    if (!(s > 0.0)) throw ConfigError("synth config: spacing must be positive");
  }
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) throw ConfigError("synth config: positive_fraction outside [0, 1]");
  if (lesion_span_min < 1 || lesion_span_max < lesion_span_min || lesion_span_max > static_cast<int>(shape[0])) {
    throw ConfigError("synth config: lesion span must satisfy 1 <= min <= max <= depth");
  }
  if (!(lesion_radius_min_px >= 1.0) || lesion_radius_max_px < lesion_radius_min_px) {
    throw ConfigError("synth config: lesion radius range invalid");
  }
  const double needed = 2.0 * lesion_radius_max_px + 4.0;
  if (needed > static_cast<double>(std::min(shape[1], shape[2]))) {
    throw ConfigError("synth config: lesion of radius " + std::to_string(lesion_radius_max_px) + " px does not fit the slice");
  }
  if (!(noise_sigma > 0.0)) throw ConfigError("synth config: noise_sigma must be positive");
  if (lesion_contrast < 0.0 || distractor_contrast < 0.0) throw ConfigError("synth config: contrasts must be non-negative");
  if (smoothing_passes < 0 || distractor_count < 0) throw ConfigError("synth config: counts must be non-negative");
  if (!(distractor_radius_px > 0.0)) throw ConfigError("synth config: distractor_radius_px must be positive");
}

Volume synth_case(const SynthConfig& config, std::size_t index, bool positive) {
  std::mt19937_64 rng(splitmix64(config.seed ^ splitmix64(index + 1)));
  std::normal_distribution<float> gauss(0.0F, 1.0F);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto [depth, height, width] = config.shape;

  Volume v(depth, height, width);
  v.spacing_mm = config.spacing_mm;
  v.label = positive ? 1 : 0;
  for (float& x : v.data) x = gauss(rng);
  for (int p = 0; p < config.smoothing_passes; ++p) box_blur(v);
  double var = 0.0;
  for (float x : v.data) var += static_cast<double>(x) * x;
  const double norm = config.noise_sigma / std::sqrt(var / static_cast<double>(v.data.size()));
  for (float& x : v.data) x = static_cast<float>(x * norm);

  for (int b = 0; b < config.distractor_count; ++b) {
    const double cz = unit(rng) * static_cast<double>(depth - 1);
    const double cy = unit(rng) * static_cast<double>(height - 1);
    const double cx = unit(rng) * static_cast<double>(width - 1);
    const double r = config.distractor_radius_px;
    const double rz = std::max(1.0, r / 4.0);
    const double amp = config.distractor_contrast * config.noise_sigma;
    for (std::size_t z = 0; z < depth; ++z) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double dz = (static_cast<double>(z) - cz) / rz;
          const double dy = (static_cast<double>(y) - cy) / r;
          const double dx = (static_cast<double>(x) - cx) / r;
          v.at(z, y, x) += static_cast<float>(amp * std::exp(-(dz * dz + dy * dy + dx * dx)));
        }
      }
    }
  }

  if (positive) {
    std::uniform_int_distribution<int> span_dist(config.lesion_span_min, config.lesion_span_max);
    const int span = span_dist(rng);
    std::uniform_int_distribution<int> z0_dist(0, static_cast<int>(depth) - span);
    const int z0 = z0_dist(rng);
    const double radius = config.lesion_radius_min_px + unit(rng) * (config.lesion_radius_max_px - config.lesion_radius_min_px);
    const double margin = radius + 2.0;
    const double cy = margin + unit(rng) * (static_cast<double>(height - 1) - 2.0 * margin);
    const double cx = margin + unit(rng) * (static_cast<double>(width - 1) - 2.0 * margin);
    // Half-extent span/2 around the span centre covers exactly slices z0..z0+span-1.
    const double cz = z0 + (span - 1) / 2.0;
    const double half = span / 2.0;
    const auto amp = static_cast<float>(config.lesion_contrast * config.noise_sigma);
    v.mask.emplace(v.voxels(), 0);
    for (int z = z0; z < z0 + span; ++z) {
      const double dz = (z - cz) / half;
      const double r = radius * std::sqrt(std::max(0.0, 1.0 - dz * dz));
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          if (dy * dy + dx * dx <= r * r) {
            const std::size_t i = v.index(static_cast<std::size_t>(z), y, x);
            v.data[i] += amp;
            (*v.mask)[i] = 1;
          }
        }
      }
    }
    v.refresh_lesion_slices();
    if (v.lesion_slices.size() != static_cast<std::size_t>(span)) {
      throw ConfigError("synth: lesion too small to cover its slice span; raise lesion_radius_min_px");
    }
  }
  return v;
}

DatasetManifest synth_gen(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  if (config.count < 2) throw ConfigError("synth config: count must be at least 2");
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(config.count) * config.positive_fraction));
  if (n_pos == 0 || n_pos == config.count) throw ConfigError("synth config: both classes must be present");
  std::vector<int> labels(config.count, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  std::mt19937_64 rng(splitmix64(config.seed));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  for (std::size_t i = 0; i < config.count; ++i) {
    const Volume v = synth_case(config, i, labels[i] == 1);
    char name[32];
    std::snprintf(name, sizeof name, "case_%04zu.mstv", i);
    write_volume(out_dir / name, v);
    manifest.entries.push_back({out_dir / name, labels[i], Split::train, std::nullopt});
  }
  stratified_split(manifest, config.split, splitmix64(config.seed + 1));
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace mst::datapipe
