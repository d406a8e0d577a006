#include "mst/errors.hpp"
#include "mst/harness.hpp"

namespace mst::harness {

std::optional<saliency::SaliencyVolume> saliency_for(const Classifier& model, const Sample& sample) {
  const Volume& v = sample.volume;
  if (model.cnn()) return saliency::grad_activation_map(*model.cnn(), v, 1);
  const auto agg = model.config().mst.aggregation;
  if (agg != slice::Aggregation::transformer && agg != slice::Aggregation::transformer_adpe) return std::nullopt;
  Prediction p;
  {
    ad::NoGradGuard no_grad;
    p = model.predict(sample);
  }
  if (p.grid == 0) {
    // Features without patch attention: slice weights only.
    return saliency::slice_only_saliency(p.slice_attention, v.height(), v.width());
  }
  return saliency::fuse_attention(p.slice_attention, p.patch_attention, p.grid, p.grid, v.height(), v.width()).volume;
}

nlohmann::json evaluate(const Classifier& model, const datapipe::DatasetManifest& manifest, datapipe::Split split,
                        const EvalOptions& options) {
  const auto idx = manifest.indices(split);
  if (idx.empty()) throw UsageError("manifest has no " + datapipe::to_string(split) + " cases");
  const auto samples = load_samples(manifest, idx, model.config());

  stats::ScoredSet scored;
  for (const auto& s : samples) {
    scored.scores.push_back(model.positive_probability(s));
    scored.labels.push_back(s.label);
  }
  nlohmann::json report = stats::metric_report(scored, options.bootstrap_iterations, options.seed);
  report["split"] = datapipe::to_string(split);
  nlohmann::json cases = nlohmann::json::array();
  for (std::size_t k = 0; k < idx.size(); ++k) cases.push_back(manifest.entries[idx[k]].volume_path.filename().generic_string());
  report["cases"] = cases;

  if (!options.saliency && !options.saliency_dir) return report;
  if (options.saliency_dir) std::filesystem::create_directories(*options.saliency_dir);

  std::size_t evaluated = 0;
  std::size_t slice_ok = 0;
  std::size_t lesion_ok = 0;
  std::size_t zero_mass = 0;
  nlohmann::json per_case = nlohmann::json::array();
  bool available = true;
  std::string source;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Sample& s = samples[k];
    const auto sal = saliency_for(model, s);
    if (!sal) {
      available = false;
      break;
    }
    source = saliency::to_string(sal->source);
    if (options.saliency_dir) {
      auto name = manifest.entries[idx[k]].volume_path.stem().generic_string() + "_saliency.mstv";
      write_volume(*options.saliency_dir / name, sal->to_volume(s.volume.spacing_mm));
    }
    if (s.label != 1 || !s.volume.mask) continue;
    bool sc = false;
    bool lc = false;
    try {
      sc = saliency::slice_correctness(*sal, s.volume.lesion_slices);
      lc = saliency::lesion_correctness(*sal, *s.volume.mask);
    } catch (const UsageError&) {
      // An all-zero map localises nothing; it counts against both tallies.
      ++zero_mass;
    }
    ++evaluated;
    slice_ok += sc ? 1 : 0;
    lesion_ok += lc ? 1 : 0;
    per_case.push_back({{"case", manifest.entries[idx[k]].volume_path.filename().generic_string()},
                        {"slice_correct", sc},
                        {"lesion_correct", lc}});
  }
  if (!available) {
    report["localization"] = nullptr;
    return report;
  }
  const auto frac = [&](std::size_t n) { return evaluated == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(evaluated); };
  report["localization"] = {{"source", source},
                            {"evaluated", evaluated},
                            {"slice_correct", slice_ok},
                            {"lesion_correct", lesion_ok},
                            {"slice_fraction", frac(slice_ok)},
                            {"lesion_fraction", frac(lesion_ok)},
                            {"zero_mass", zero_mass},
                            {"slice_tolerance", saliency::kSliceTolerance},
                            {"lesion_radius_voxels", saliency::kLesionRadiusVoxels},
                            {"cases", per_case}};
  return report;
}

nlohmann::json evaluate_checkpoint(const std::filesystem::path& checkpoint, datapipe::Split split, const EvalOptions& options) {
  const Classifier model = Classifier::load(checkpoint);
  const auto manifest = datapipe::read_manifest(model.config().manifest);
  nlohmann::json report = evaluate(model, manifest, split, options);
  report["checkpoint"] = checkpoint.generic_string();
  return report;
}

}  // namespace mst::harness
