// mst: command-line front end. Reports go to stdout as JSON unless --out is given.
// Exit codes: 0 ok, 2 config/usage error, 3 data/format error, 4 numeric failure.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mst/encoder2d.hpp"
#include "mst/errors.hpp"
#include "mst/evalstats.hpp"
#include "mst/harness.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw mst::ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw mst::ConfigError(path.string() + ": " + e.what());
  }
}

void emit(const json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw mst::ConfigError("cannot write " + out);
  f << report.dump(2) << "\n";
}

mst::stats::ScoredSet read_scored(const fs::path& path) {
  const json j = read_json(path);
  try {
    return {j.at("scores").get<std::vector<double>>(), j.at("labels").get<std::vector<int>>()};
  } catch (const json::exception& e) {
    throw mst::ConfigError(path.string() + ": expected {\"scores\": [...], \"labels\": [...]}: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slice transformer training, evaluation and statistics"};
  app.require_subcommand(1);
  std::string out;
  app.add_option("--out", out, "Write the JSON report here instead of stdout");

  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic lesion dataset");
  synth->add_option("--config", synth_config)->required();
  synth->add_option("--out", synth_out)->required();

  std::string train_config;
  auto* train = app.add_subcommand("train", "Train a classifier");
  train->add_option("--config", train_config)->required();

  std::string ckpt, split = "test", saliency_dir;
  std::size_t boot = 1000;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--split", split);
  eval->add_option("--saliency", saliency_dir, "Write saliency volumes and localisation tallies");
  eval->add_option("--bootstrap", boot);

  std::string ablate_config;
  auto* ablate = app.add_subcommand("ablate", "Run the aggregation/encoder ablation grid");
  ablate->add_option("--config", ablate_config)->required();

  auto* stats = app.add_subcommand("stats", "Statistics on score files");
  stats->require_subcommand(1);
  std::string score_a, score_b;
  auto* delong = stats->add_subcommand("delong", "Paired DeLong test between two score files");
  delong->add_option("--a", score_a)->required();
  delong->add_option("--b", score_b)->required();

  auto* features = app.add_subcommand("features", "Feature file utilities");
  features->require_subcommand(1);
  std::string import_path;
  auto* import = features->add_subcommand("import", "Validate an MSTF feature file");
  import->add_option("path", import_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      const auto cfg = mst::datapipe::SynthConfig::from_json(read_json(synth_config));
      const auto manifest = mst::datapipe::synth_gen(cfg, synth_out);
      emit({{"cases", manifest.entries.size()}, {"manifest", (fs::path(synth_out) / "manifest.jsonl").generic_string()}}, out);
    } else if (*train) {
      const auto cfg = mst::harness::TrainConfig::from_json(read_json(train_config), fs::path(train_config).parent_path());
      const auto result = mst::harness::train(cfg);
      emit(result.record.to_json(), out);
    } else if (*eval) {
      mst::harness::EvalOptions opts;
      opts.bootstrap_iterations = boot;
      if (!saliency_dir.empty()) {
        opts.saliency = true;
        opts.saliency_dir = saliency_dir;
      }
      emit(mst::harness::evaluate_checkpoint(ckpt, mst::datapipe::parse_split(split), opts), out);
    } else if (*ablate) {
      const auto cfg = mst::harness::AblationConfig::from_json(read_json(ablate_config), fs::path(ablate_config).parent_path());
      emit(mst::harness::ablate(cfg), out);
    } else if (*delong) {
      const auto a = read_scored(score_a);
      const auto b = read_scored(score_b);
      if (a.labels != b.labels) throw mst::UsageError("score files must share the same labels in the same order");
      const auto r = mst::stats::delong_test(a.scores, b.scores, a.labels);
      emit({{"auc_a", r.auc_a}, {"auc_b", r.auc_b}, {"variance", r.variance}, {"z", r.z}, {"p", r.p}}, out);
    } else if (*import) {
      mst::encoder2d::FeatureLoadInfo info;
      const auto f = mst::encoder2d::load_features(import_path, &info);
      emit({{"valid", true},
            {"num_slices", f.num_slices},
            {"feature_dim", f.feature_dim},
            {"grid", {f.grid_h, f.grid_w}},
            {"encoder_id", f.encoder_id},
            {"renormalized_slices", info.renormalized_slices}},
           out);
    }
  } catch (const mst::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mst::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const mst::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const mst::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const mst::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
