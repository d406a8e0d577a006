#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "mst/detail/seed.hpp"
#include "mst/errors.hpp"
#include "mst/harness.hpp"

namespace mst::harness {

using detail::mix_seed;

namespace {

constexpr std::uint64_t kEncoderStream = 1;
constexpr std::uint64_t kMstStream = 2;
constexpr std::uint64_t kCnnStream = 3;
constexpr std::uint64_t kSamplerStream = 4;
constexpr std::uint64_t kAugmentStream = 5;
constexpr std::uint64_t kDropoutStream = 6;

std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<double> scores_of(const Classifier& model, const std::vector<Sample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.positive_probability(s));
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// A case the configured model cannot consume, e.g. a checkpoint evaluated on another dataset.
void check_compatible(const Sample& s, const TrainConfig& config, const std::filesystem::path& where) {
  const auto& shape = s.volume.shape;
  auto fail = [&](const std::string& why) { throw UsageError(where.string() + ": " + why); };
  if (config.model == ModelKind::cnn3d) {
    if (shape != config.cnn.input_shape) fail("volume shape does not match the cnn input shape");
    return;
  }
  if (config.encoder == EncoderKind::toy) {
    const std::size_t side = config.encoder_config.image_side;
    if (shape[1] != side || shape[2] != side) fail("slices are not " + std::to_string(side) + "x" + std::to_string(side));
  } else if (s.features->feature_dim != config.mst.feature_dim) {
    fail("feature width " + std::to_string(s.features->feature_dim) + " does not match mst.feature_dim " +
         std::to_string(config.mst.feature_dim));
  }
}

}  // namespace

std::vector<Sample> load_samples(const datapipe::DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                 const TrainConfig& config) {
  const bool need_features = config.model == ModelKind::mst && config.encoder == EncoderKind::precomputed;
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& entry = manifest.entries.at(i);
    Sample s;
    s.volume = read_volume(entry.volume_path);
    s.label = entry.label;
    if (need_features) {
      if (!entry.features_path) throw UsageError("manifest entry " + entry.volume_path.string() + " has no features_path");
      s.features = encoder2d::load_features(*entry.features_path);
      if (s.features->num_slices != s.volume.depth()) {
        throw DimensionError("features for " + entry.volume_path.string() + " have " + std::to_string(s.features->num_slices) +
                             " slices, volume has " + std::to_string(s.volume.depth()));
      }
    }
    check_compatible(s, config, entry.volume_path);
    out.push_back(std::move(s));
  }
  return out;
}

Classifier::Classifier(const TrainConfig& config) : config_(config) {
  config_.validate();
  if (config_.model == ModelKind::cnn3d) {
    cnn_.emplace(config_.cnn, mix_seed(config_.seed, kCnnStream));
    return;
  }
  if (config_.encoder == EncoderKind::toy) {
    encoder_.emplace(config_.encoder_config, mix_seed(config_.seed, kEncoderStream));
    encoder_->set_frozen(config_.freeze_encoder);
  }
  mst_.emplace(config_.mst, mix_seed(config_.seed, kMstStream));
}

Prediction Classifier::predict(const Sample& sample, const Volume* augmented, std::mt19937_64* dropout_rng) const {
  const Volume& volume = augmented != nullptr ? *augmented : sample.volume;
  Prediction p;
  if (cnn_) {
    p.logits = cnn_->forward(volume).logits;
    return p;
  }
  slice::MstOutput out;
  if (encoder_) {
    encoder2d::EncodedVolume enc = encoder_->encode_volume(volume);
    out = mst_->run(enc.features, dropout_rng);
    p.patch_attention = std::move(enc.patch_attention);
    p.grid = encoder_->config().grid();
  } else {
    if (!sample.features) throw UsageError("predict: sample has no precomputed features");
    out = mst_->run(sample.features->feature_tensor(), dropout_rng);
    if (sample.features->has_attention() && sample.features->grid_h == sample.features->grid_w) {
      p.patch_attention = sample.features->patch_attention;
      p.grid = sample.features->grid_h;
    }
  }
  p.logits = out.logits;
  p.slice_attention = std::move(out.slice_attention);
  return p;
}

double Classifier::positive_probability(const Sample& sample) const {
  ad::NoGradGuard no_grad;
  const Prediction p = predict(sample);
  const auto logits = p.logits.data();
  if (logits.size() < 2) throw UsageError("positive_probability needs at least two classes");
  const double m = std::max<double>(logits[0], logits[1]);
  double denom = 0.0;
  for (float l : logits) denom += std::exp(static_cast<double>(l) - m);
  return std::exp(static_cast<double>(logits[1]) - m) / denom;
}

std::vector<std::pair<std::string, ad::Tensor>> Classifier::named_parameters() const {
  NamedTensors out;
  if (encoder_) {
    auto e = encoder_->named_parameters();
    out.insert(out.end(), e.begin(), e.end());
  }
  if (mst_) {
    auto m = mst_->named_parameters();
    out.insert(out.end(), m.begin(), m.end());
  }
  if (cnn_) {
    auto c = cnn_->named_parameters();
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

std::vector<ad::Tensor> Classifier::trainable_parameters() const {
  std::vector<ad::Tensor> out;
  if (encoder_ && !encoder_->frozen()) {
    auto e = encoder_->parameters();
    out.insert(out.end(), e.begin(), e.end());
  }
  if (mst_) {
    auto m = mst_->parameters();
    out.insert(out.end(), m.begin(), m.end());
  }
  if (cnn_) {
    auto c = cnn_->parameters();
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

nlohmann::json Classifier::checkpoint_header() const {
  // out_dir is a property of the run, not the model; leaving it out keeps
  // checkpoints of identical runs byte-identical wherever they are written.
  nlohmann::json cfg = config_.to_json();
  cfg.erase("out_dir");
  cfg["manifest"] = std::filesystem::absolute(config_.manifest).lexically_normal().generic_string();
  nlohmann::json h = {{"kind", to_string(config_.model)}, {"train_config", cfg}};
  if (encoder_) h["encoder_id"] = encoder_->id();
  return h;
}

void Classifier::save(const std::filesystem::path& path, const nlohmann::json& history) const {
  nlohmann::json h = checkpoint_header();
  h["history"] = history;
  write_checkpoint(path, h, named_parameters());
}

Classifier Classifier::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (!ck.header.contains("train_config")) throw FormatError("checkpoint header lacks train_config", 0);
  TrainConfig cfg = TrainConfig::from_json(ck.header["train_config"]);
  Classifier model(cfg);
  load_parameters(ck.params, model.named_parameters());
  return model;
}

TrainResult train(const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (config.out_dir.empty()) throw ConfigError("out_dir is required for training");
  std::filesystem::create_directories(config.out_dir);

  const auto manifest = datapipe::read_manifest(config.manifest);
  const auto train_idx = manifest.indices(datapipe::Split::train);
  const auto val_idx = manifest.indices(datapipe::Split::val);
  if (train_idx.empty()) throw UsageError("manifest has no train cases");
  if (val_idx.empty()) throw UsageError("manifest has no val cases; early stopping needs a validation split");
  const auto train_set = load_samples(manifest, train_idx, config);
  const auto val_set = load_samples(manifest, val_idx, config);
  const auto train_labels = labels_of(train_set);
  const auto val_labels = labels_of(val_set);

  TrainResult result;
  result.model = std::make_unique<Classifier>(config);
  Classifier& model = *result.model;
  const NamedTensors named = model.named_parameters();
  ad::AdamW opt(model.trainable_parameters(), {.lr = config.effective_lr(), .weight_decay = config.weight_decay});
  EarlyStopping stopper(config.patience);
  std::vector<std::vector<float>> best = snapshot(named);
  std::mt19937_64 dropout_rng(mix_seed(config.seed, kDropoutStream));
  const bool augment = config.augment && !(config.model == ModelKind::mst && config.encoder == EncoderKind::precomputed);
  const auto ckpt = config.out_dir / "best.mstc";
  nlohmann::json history = nlohmann::json::array();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = datapipe::weighted_sample_order(train_labels, mix_seed(mix_seed(config.seed, kSamplerStream), epoch),
                                                       train_set.size());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      opt.zero_grad();
      ad::Tensor total;
      for (std::size_t pos = start; pos < end; ++pos) {
        const Sample& s = train_set[order[pos]];
        std::optional<Volume> aug;
        if (augment) {
          aug = datapipe::augment(s.volume, mix_seed(mix_seed(mix_seed(config.seed, kAugmentStream), epoch), pos),
                                  config.augment_config);
        }
        const Prediction p = model.predict(s, aug ? &*aug : nullptr, &dropout_rng);
        const ad::Tensor ce = ad::cross_entropy(p.logits, static_cast<std::size_t>(s.label));
        total = total.defined() ? ad::add(total, ce) : ce;
      }
      const ad::Tensor loss = ad::scale(total, 1.0F / static_cast<float>(end - start));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      ad::backward(loss);
      opt.step();
      loss_sum += value;
      ++batches;
    }

    const double val_auc = stats::roc_auc({scores_of(model, val_set), val_labels});
    const EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), val_auc};
    result.record.epochs.push_back(rec);
    history.push_back({{"epoch", rec.epoch}, {"train_loss", rec.train_loss}, {"val_auc", rec.val_auc}});
    const bool stop = stopper.update(epoch, val_auc);
    if (stopper.improved()) best = snapshot(named);
    if (stop) break;
  }

  restore(named, best);
  opt.zero_grad();
  result.record.best_epoch = stopper.best_epoch();
  result.record.best_val_auc = stopper.best();
  result.record.checkpoint = ckpt;
  model.save(ckpt, history);
  result.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json run = result.record.to_json();
  run["config"] = config.to_json();
  write_json(config.out_dir / "run.json", run);
  return result;
}

}  // namespace mst::harness
