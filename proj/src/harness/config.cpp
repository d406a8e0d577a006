#include "mst/errors.hpp"
#include "mst/harness.hpp"

namespace mst::harness {

ModelKind parse_model_kind(const std::string& text) {
  if (text == "mst") return ModelKind::mst;
  if (text == "cnn3d") return ModelKind::cnn3d;
  throw ConfigError("unknown model kind \"" + text + "\"");
}

EncoderKind parse_encoder_kind(const std::string& text) {
  if (text == "toy") return EncoderKind::toy;
  if (text == "precomputed") return EncoderKind::precomputed;
  throw ConfigError("unknown encoder kind \"" + text + "\"");
}

std::string to_string(ModelKind k) { return k == ModelKind::mst ? "mst" : "cnn3d"; }
std::string to_string(EncoderKind k) { return k == EncoderKind::toy ? "toy" : "precomputed"; }

double TrainConfig::effective_lr() const {
  if (lr) return *lr;
  if (model == ModelKind::cnn3d) return 1e-4;
  return encoder == EncoderKind::toy && !freeze_encoder ? 1e-5 : 1e-6;
}

void TrainConfig::validate() const {
  if (!(effective_lr() > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (bootstrap_iterations < 2) throw ConfigError("bootstrap_iterations must be at least 2");
  if (manifest.empty()) throw ConfigError("manifest path is required");
  encoder_config.validate();
  mst.validate();
  cnn.validate();
  if (model == ModelKind::mst && encoder == EncoderKind::toy && mst.feature_dim != encoder_config.embed_dim) {
    throw ConfigError("mst.feature_dim must equal the toy encoder embed_dim");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {
      {"model", to_string(model)},
      {"encoder", to_string(encoder)},
      {"freeze_encoder", freeze_encoder},
      {"aggregation", slice::to_string(mst.aggregation)},
      {"lr", effective_lr()},
      {"weight_decay", weight_decay},
      {"batch_size", batch_size},
      {"patience", patience},
      {"max_epochs", max_epochs},
      {"seed", seed},
      {"augment", augment},
      {"augment_config",
       {{"flip_p", augment_config.flip_p},
        {"noise_p", augment_config.noise_p},
        {"noise_rel_sigma", augment_config.noise_rel_sigma},
        {"rotate_p", augment_config.rotate_p},
        {"rotate_max_deg", augment_config.rotate_max_deg},
        {"invert_p", augment_config.invert_p}}},
      {"bootstrap_iterations", bootstrap_iterations},
      {"manifest", manifest.generic_string()},
      {"out_dir", out_dir.generic_string()},
      {"encoder_config", encoder_config.to_json()},
      {"mst", mst.to_json()},
      {"cnn", cnn.to_json()},
  };
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  TrainConfig c;
  try {
    auto path = [&](const char* key) {
      std::filesystem::path p(j.at(key).get<std::string>());
      return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    c.model = parse_model_kind(j.value("model", std::string("mst")));
    c.encoder = parse_encoder_kind(j.value("encoder", std::string("toy")));
    c.freeze_encoder = j.value("freeze_encoder", false);
    if (j.contains("lr") && !j["lr"].is_null()) c.lr = j["lr"].get<double>();
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augment_config")) {
      const auto& a = j["augment_config"];
      auto& ac = c.augment_config;
      ac.flip_p = a.value("flip_p", ac.flip_p);
      ac.noise_p = a.value("noise_p", ac.noise_p);
      ac.noise_rel_sigma = a.value("noise_rel_sigma", ac.noise_rel_sigma);
      ac.rotate_p = a.value("rotate_p", ac.rotate_p);
      ac.rotate_max_deg = a.value("rotate_max_deg", ac.rotate_max_deg);
      ac.invert_p = a.value("invert_p", ac.invert_p);
    }
    c.bootstrap_iterations = j.value("bootstrap_iterations", c.bootstrap_iterations);
    c.manifest = path("manifest");
    if (j.contains("out_dir")) c.out_dir = path("out_dir");
    if (j.contains("encoder_config")) c.encoder_config = encoder2d::ToyPatchEncoderConfig::from_json(j["encoder_config"]);

    nlohmann::json mst_json = j.value("mst", nlohmann::json::object());
    if (!mst_json.contains("feature_dim")) {
      if (c.encoder == EncoderKind::precomputed) throw ConfigError("mst.feature_dim is required with precomputed features");
      mst_json["feature_dim"] = c.encoder_config.embed_dim;
      if (!mst_json.contains("heads")) mst_json["heads"] = c.encoder_config.heads;
    }
    if (j.contains("aggregation")) mst_json["aggregation"] = j["aggregation"];
    c.mst = slice::MstConfig::from_json(mst_json);
    if (j.contains("cnn")) c.cnn = cnn::Cnn3dConfig::from_json(j["cnn"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auc", e.val_auc}});
  return {{"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"best_val_auc", best_val_auc},
          {"checkpoint", checkpoint.generic_string()},
          {"wall_seconds", wall_seconds}};
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("patience must be at least 1");
}

bool EarlyStopping::update(std::size_t epoch, double metric) {
  improved_ = best_epoch_ == 0 || metric > best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch;
    return false;
  }
  return epoch - best_epoch_ >= patience_;
}

}  // namespace mst::harness
