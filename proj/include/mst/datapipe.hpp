#pragma once

// Preprocessing rules, augmentation, sampling and the synthetic lesion generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mst/volume.hpp"

namespace mst::datapipe {

// ---- geometry --------------------------------------------------------------

/// Trilinear resampling to a new voxel spacing. Output extent per axis is
/// round(extent·spacing/target); sample i sits at input coordinate
/// (i + 0.5)·target/spacing − 0.5, clamped to the grid. Masks use nearest.
Volume resample(const Volume& v, const std::array<double, 3>& target_spacing_mm);

/// Resize to an explicit shape with the same coordinate convention as resample();
/// spacing is scaled so the physical extent is unchanged.
Volume resize(const Volume& v, const std::array<std::size_t, 3>& shape);

enum class SubtractionOrder { post_minus_pre, pre_minus_post };

/// Contrast subtraction image; defaults to post − pre (enhancement positive).
Volume subtraction(const Volume& pre_contrast, const Volume& post_contrast,
                   SubtractionOrder order = SubtractionOrder::post_minus_pre);

/// Window of `size` starting at center − size/2 (integer division), zero-padded
/// outside the source. Mask is cropped identically; lesion_slices recomputed.
Volume crop_or_pad(const Volume& v, const std::array<std::size_t, 3>& size, const std::array<std::ptrdiff_t, 3>& center);

std::array<std::ptrdiff_t, 3> volume_center(const Volume& v);

// ---- annotation rules ----------------------------------------------------------

struct RaterAnnotation {
  std::string nodule_id;
  std::vector<std::vector<std::uint8_t>> rater_masks;  // one per rater, same length
  std::vector<int> malignancy_ratings;                 // 1..5
};

/// Voxel = 1 iff at least ceil(k/2) of the k raters marked it.
std::vector<std::uint8_t> consensus_mask(const RaterAnnotation& annotation);

enum class Dignity { benign, malignant, excluded };
std::string to_string(Dignity d);

/// Mean rating > 3 → malignant, < 3 → benign, == 3 → excluded.
Dignity dignity_label(const std::vector<int>& ratings);

/// Equivalent-sphere diameter (6V/π)^{1/3} of the mask in millimetres.
double equivalent_diameter_mm(const std::vector<std::uint8_t>& mask, const std::array<double, 3>& spacing_mm);

/// True = keep. Nodules with diameter below min_diameter_mm are dropped; an
/// empty mask is dropped with a warning on stderr.
bool exclude_small(const std::vector<std::uint8_t>& mask, const std::array<double, 3>& spacing_mm,
                   double min_diameter_mm = 3.0);

// ---- augmentation --------------------------------------------------------------

struct AugmentConfig {
  double flip_p = 0.5;        // per axis
  double noise_p = 0.5;
  double noise_rel_sigma = 0.05;  // fraction of the volume's standard deviation
  double rotate_p = 0.5;
  double rotate_max_deg = 10.0;   // in-plane (about the slice axis)
  double invert_p = 0.3;
};

/// Maps v to (min + max) − v; an involution.
Volume invert_signal(const Volume& v);
Volume flip(const Volume& v, int axis);
/// In-plane rotation about the slice centre; bilinear for data (zero fill), nearest for mask.
Volume rotate_inplane(const Volume& v, double degrees);

Volume augment(const Volume& v, std::uint64_t seed, const AugmentConfig& config = {});

// ---- manifest / sampling ---------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::filesystem::path volume_path;
  int label = 0;
  Split split = Split::train;
  std::optional<std::filesystem::path> features_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> indices(Split split) const;
};

/// JSON lines; relative paths are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct SplitFractions {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

/// Per class: shuffle, then assign round(n_c·test) to test and round(n_c·val)
/// to val; the rest train.
std::vector<Split> stratified_split(const std::vector<int>& labels, const SplitFractions& fractions, std::uint64_t seed);
void stratified_split(DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

/// `draws` indices sampled with replacement, weight ∝ 1/count(label).
std::vector<std::size_t> weighted_sample_order(const std::vector<int>& labels, std::uint64_t seed, std::size_t draws);

// ---- synthetic generator -----------------------------------------------------------

/// Every key is required in the JSON config file; see README for meanings.
struct SynthConfig {
  std::size_t count = 0;
  std::array<std::size_t, 3> shape{32, 64, 64};
  std::array<double, 3> spacing_mm{3.0, 0.7, 0.7};
  double positive_fraction = 0.5;
  int lesion_span_min = 1;
  int lesion_span_max = 3;
  double lesion_radius_min_px = 4.0;
  double lesion_radius_max_px = 6.0;
  double lesion_contrast = 3.0;  // in units of the background noise sigma
  double noise_sigma = 1.0;
  int smoothing_passes = 1;
  int distractor_count = 2;
  double distractor_contrast = 1.0;
  double distractor_radius_px = 8.0;
  SplitFractions split{0.7, 0.1, 0.2};
  std::uint64_t seed = 0;

  static SynthConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// One case, deterministic in (config, index).
Volume synth_case(const SynthConfig& config, std::size_t index, bool positive);

/// Writes case_XXXX.mstv files and manifest.jsonl into `out_dir`; returns the manifest.
DatasetManifest synth_gen(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace mst::datapipe
