#pragma once

// Training/evaluation orchestration: weighted sampling, augmentation, early
// stopping on validation AUC, checkpointing, evaluation reports with saliency
// tallies, and the aggregation/backbone ablation grid.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mst/adamw.hpp"
#include "mst/baseline3d.hpp"
#include "mst/checkpoint.hpp"
#include "mst/datapipe.hpp"
#include "mst/encoder2d.hpp"
#include "mst/evalstats.hpp"
#include "mst/saliency.hpp"
#include "mst/slice_transformer.hpp"

namespace mst::harness {

enum class ModelKind { mst, cnn3d };
enum class EncoderKind { toy, precomputed };

struct TrainConfig {
  ModelKind model = ModelKind::mst;
  EncoderKind encoder = EncoderKind::toy;
  bool freeze_encoder = false;
  std::optional<double> lr;  // unset: derived from model/encoder kind
  double weight_decay = 1e-2;
  std::size_t batch_size = 2;
  std::size_t patience = 10;
  std::size_t max_epochs = 60;
  std::uint64_t seed = 0;
  bool augment = true;
  datapipe::AugmentConfig augment_config;
  std::size_t bootstrap_iterations = 1000;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  encoder2d::ToyPatchEncoderConfig encoder_config;
  slice::MstConfig mst{.feature_dim = 32, .heads = 4, .ffn_dim = 32};  // feature_dim must match the encoder width
  cnn::Cnn3dConfig cnn;

  /// 1e-4 for cnn3d, 1e-5 for a trainable toy encoder, 1e-6 for fixed features.
  double effective_lr() const;
  void validate() const;
  nlohmann::json to_json() const;
  /// Relative paths are resolved against base_dir.
  static TrainConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

ModelKind parse_model_kind(const std::string& text);
EncoderKind parse_encoder_kind(const std::string& text);
std::string to_string(ModelKind k);
std::string to_string(EncoderKind k);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  std::filesystem::path checkpoint;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Stops once `patience` consecutive epochs pass without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Records the metric of `epoch` (1-based). Returns true when training should stop.
  bool update(std::size_t epoch, double metric);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = -1.0;
  bool improved_ = false;
};

/// In-memory case: the volume plus precomputed features when the encoder is external.
struct Sample {
  Volume volume;
  std::optional<encoder2d::SliceFeatures> features;
  int label = 0;
};

std::vector<Sample> load_samples(const datapipe::DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                 const TrainConfig& config);

struct Prediction {
  ad::Tensor logits;
  std::vector<float> slice_attention;
  std::vector<float> patch_attention;  // S × g × g, empty if unavailable
  std::size_t grid = 0;
};

/// Either a slice transformer (with toy encoder or external features) or the 3D CNN.
class Classifier {
 public:
  explicit Classifier(const TrainConfig& config);

  Prediction predict(const Sample& sample, const Volume* augmented = nullptr, std::mt19937_64* dropout_rng = nullptr) const;
  double positive_probability(const Sample& sample) const;

  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> trainable_parameters() const;

  const TrainConfig& config() const { return config_; }
  const std::optional<encoder2d::ToyPatchEncoder>& encoder() const { return encoder_; }
  const std::optional<slice::MstModel>& mst() const { return mst_; }
  const std::optional<cnn::Cnn3dModel>& cnn() const { return cnn_; }

  nlohmann::json checkpoint_header() const;
  void save(const std::filesystem::path& path, const nlohmann::json& history) const;
  static Classifier load(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  std::optional<encoder2d::ToyPatchEncoder> encoder_;
  std::optional<slice::MstModel> mst_;
  std::optional<cnn::Cnn3dModel> cnn_;
};

struct TrainResult {
  RunRecord record;
  std::unique_ptr<Classifier> model;  // holds the best-epoch weights
};

/// Full training run; writes best.mstc and run.json into config.out_dir.
TrainResult train(const TrainConfig& config);

struct EvalOptions {
  std::optional<std::filesystem::path> saliency_dir;  // write MSTV saliency volumes here
  bool saliency = false;                               // compute localisation tallies
  std::size_t bootstrap_iterations = 1000;
  std::uint64_t seed = 0;
};

/// Metric report for one split; adds "localization" when saliency is requested.
nlohmann::json evaluate(const Classifier& model, const datapipe::DatasetManifest& manifest, datapipe::Split split,
                        const EvalOptions& options);
nlohmann::json evaluate_checkpoint(const std::filesystem::path& checkpoint, datapipe::Split split, const EvalOptions& options);

/// Saliency for one case (fused for MST, gradient×activation for the CNN).
std::optional<saliency::SaliencyVolume> saliency_for(const Classifier& model, const Sample& sample);

struct AblationConfig {
  TrainConfig base;
  std::vector<slice::Aggregation> aggregations{slice::Aggregation::transformer, slice::Aggregation::transformer_adpe,
                                               slice::Aggregation::linear, slice::Aggregation::mean};
  std::vector<std::string> encoders{"toy", "precomputed", "frozen-toy"};
  std::vector<std::uint64_t> seeds{0};

  static AblationConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

/// Runs aggregation × encoder × seed; returns {"rows": [...]} with test AUC,
/// bootstrap SD and paired DeLong p against the transformer row.
nlohmann::json ablate(const AblationConfig& config);

/// Exports toy-encoder features for every manifest entry lacking them and
/// returns the manifest rewritten with features_path set.
datapipe::DatasetManifest export_features(const datapipe::DatasetManifest& manifest, const encoder2d::ToyPatchEncoder& encoder,
                                          const std::filesystem::path& out_dir);

}  // namespace mst::harness
