#include <cmath>
#include <fstream>
#include <map>

#include "mst/detail/seed.hpp"
#include "mst/errors.hpp"
#include "mst/harness.hpp"

namespace mst::harness {

namespace {

constexpr std::uint64_t kExportStream = 7;

struct RunScores {
  double auc = 0.0;
  double sd = 0.0;
  std::vector<double> scores;
  std::vector<int> labels;
};

}  // namespace

AblationConfig AblationConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  AblationConfig c;
  if (!j.contains("base")) throw ConfigError("ablation config: missing \"base\"");
  c.base = TrainConfig::from_json(j["base"], base_dir);
  try {
    if (j.contains("aggregations")) {
      c.aggregations.clear();
      for (const auto& a : j["aggregations"]) c.aggregations.push_back(slice::parse_aggregation(a.get<std::string>()));
    }
    if (j.contains("encoders")) c.encoders = j["encoders"].get<std::vector<std::string>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation config: ") + e.what());
  }
  for (const auto& e : c.encoders) {
    if (e != "toy" && e != "precomputed" && e != "frozen-toy") throw ConfigError("ablation config: unknown encoder \"" + e + "\"");
  }
  if (c.aggregations.empty() || c.encoders.empty() || c.seeds.empty()) throw ConfigError("ablation config: empty grid");
  if (c.base.out_dir.empty()) throw ConfigError("ablation config: base.out_dir is required");
  return c;
}

datapipe::DatasetManifest export_features(const datapipe::DatasetManifest& manifest, const encoder2d::ToyPatchEncoder& encoder,
                                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  datapipe::DatasetManifest out = manifest;
  for (auto& e : out.entries) {
    if (e.features_path) continue;
    const Volume v = read_volume(e.volume_path);
    const auto path = out_dir / (e.volume_path.stem().generic_string() + ".mstf");
    encoder2d::write_features(path, encoder.features(v));
    e.features_path = path;
  }
  return out;
}

nlohmann::json ablate(const AblationConfig& config) {
  const auto root = config.base.out_dir / "ablation";
  std::filesystem::create_directories(root);
  const auto manifest = datapipe::read_manifest(config.base.manifest);

  // (aggregation, encoder) -> per-seed results, in seed order.
  std::map<std::pair<std::string, std::string>, std::vector<RunScores>> results;
  std::map<std::uint64_t, std::filesystem::path> feature_manifests;

  for (std::uint64_t seed : config.seeds) {
    for (const auto& enc : config.encoders) {
      for (auto agg : config.aggregations) {
        TrainConfig tc = config.base;
        tc.seed = seed;
        tc.mst.aggregation = agg;
        tc.model = ModelKind::mst;
        tc.out_dir = root / (slice::to_string(agg) + "_" + enc + "_s" + std::to_string(seed));
        if (enc == "toy") {
          tc.encoder = EncoderKind::toy;
          tc.freeze_encoder = false;
          tc.mst.feature_dim = tc.encoder_config.embed_dim;
        } else if (enc == "frozen-toy") {
          tc.encoder = EncoderKind::toy;
          tc.freeze_encoder = true;
          tc.mst.feature_dim = tc.encoder_config.embed_dim;
        } else {
          auto it = feature_manifests.find(seed);
          if (it == feature_manifests.end()) {
            // Fixed features from a seeded, untrained toy encoder.
            const encoder2d::ToyPatchEncoder exporter(tc.encoder_config, detail::mix_seed(seed, kExportStream));
            const auto dir = root / ("features_s" + std::to_string(seed));
            const auto m = export_features(manifest, exporter, dir);
            datapipe::write_manifest(dir / "manifest.jsonl", m);
            it = feature_manifests.emplace(seed, dir / "manifest.jsonl").first;
          }
          tc.encoder = EncoderKind::precomputed;
          tc.freeze_encoder = false;
          tc.manifest = it->second;
          tc.mst.feature_dim = tc.encoder_config.embed_dim;
        }
        TrainResult r = train(tc);
        const auto test_manifest = datapipe::read_manifest(tc.manifest);
        const auto samples = load_samples(test_manifest, test_manifest.indices(datapipe::Split::test), tc);
        RunScores rs;
        for (const auto& s : samples) {
          rs.scores.push_back(r.model->positive_probability(s));
          rs.labels.push_back(s.label);
        }
        const stats::ScoredSet set{rs.scores, rs.labels};
        rs.auc = stats::roc_auc(set);
        rs.sd = stats::bootstrap_auc(set, tc.bootstrap_iterations, seed).sd;
        results[{slice::to_string(agg), enc}].push_back(std::move(rs));
      }
    }
  }

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& enc : config.encoders) {
    for (auto agg : config.aggregations) {
      const auto name = slice::to_string(agg);
      const auto& runs = results.at({name, enc});
      const auto ref = results.find({slice::to_string(slice::Aggregation::transformer), enc});
      nlohmann::json per_seed = nlohmann::json::array();
      double auc_sum = 0.0;
      double sd_sum = 0.0;
      for (std::size_t k = 0; k < runs.size(); ++k) {
        nlohmann::json e = {{"seed", config.seeds[k]}, {"auc", runs[k].auc}, {"sd", runs[k].sd}};
        if (agg != slice::Aggregation::transformer && ref != results.end()) {
          const auto d = stats::delong_test(runs[k].scores, ref->second[k].scores, runs[k].labels);
          e["delong_p_vs_transformer"] = d.p;
        }
        per_seed.push_back(e);
        auc_sum += runs[k].auc;
        sd_sum += runs[k].sd;
      }
      const auto n = static_cast<double>(runs.size());
      rows.push_back({{"aggregation", name},
                      {"encoder", enc},
                      {"auc_mean", auc_sum / n},
                      {"bootstrap_sd_mean", sd_sum / n},
                      {"runs", per_seed}});
    }
  }
  nlohmann::json table = {{"rows", rows}};
  std::ofstream(root / "table.json") << table.dump(2) << "\n";
  return table;
}

}  // namespace mst::harness
