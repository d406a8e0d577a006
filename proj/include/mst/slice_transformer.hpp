#pragma once

// The slice-level aggregator: a CLS token prepended to per-slice features,
// one pre-norm Transformer encoder layer and a linear head, plus the
// ablation aggregators (additive positional embedding, linear layer, mean).

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mst/autodiff.hpp"

namespace mst::slice {

enum class Aggregation { transformer, transformer_adpe, linear, mean };

std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& text);

struct MstConfig {
  std::size_t feature_dim = 384;
  std::size_t heads = 12;
  std::size_t ffn_dim = 384;
  std::size_t num_classes = 2;
  Aggregation aggregation = Aggregation::transformer;
  std::size_t max_slices = 32;
  float dropout = 0.0F;

  /// Head count for the common ViT feature widths: 12 for 384, 16 for 512/768.
  static MstConfig preset(std::size_t feature_dim, Aggregation aggregation = Aggregation::transformer);
  void validate() const;
  nlohmann::json to_json() const;
  static MstConfig from_json(const nlohmann::json& j);
};

struct MstOutput {
  ad::Tensor logits;                  // [1 × num_classes]
  std::vector<float> slice_attention;  // CLS→slice weights; empty for linear/mean
};

struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> parts;
  std::size_t transformer = 0;  // everything except the classifier head
  std::size_t head = 0;
  std::size_t total = 0;
};

class MstModel {
 public:
  MstModel(const MstConfig& config, std::uint64_t seed);

  /// transformer / transformer_adpe only. features is [S × C].
  /// `dropout_rng` enables dropout (training); null means inference.
  MstOutput forward(const ad::Tensor& features, std::mt19937_64* dropout_rng = nullptr) const;
  /// logits = W·flatten(S_max × C) + b; requires S == max_slices.
  ad::Tensor forward_linear(const ad::Tensor& features) const;
  /// logits = head(mean over slices).
  ad::Tensor forward_mean(const ad::Tensor& features) const;
  /// Dispatches on the configured aggregation.
  MstOutput run(const ad::Tensor& features, std::mt19937_64* dropout_rng = nullptr) const;

  const MstConfig& config() const { return config_; }
  ParamCount param_count() const;
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;

 private:
  void check_features(const ad::Tensor& features) const;

  MstConfig config_;
  // transformer
  ad::Tensor cls_, ln1_g_, ln1_b_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  ad::Tensor ln2_g_, ln2_b_, ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_, lnf_g_, lnf_b_;
  ad::Tensor pos_;  // transformer_adpe
  // head shared by transformer and mean
  ad::Tensor head_w_, head_b_;
  // linear aggregation
  ad::Tensor lin_w_, lin_b_;
};

}  // namespace mst::slice
