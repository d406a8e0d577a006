#include "mst/slice_transformer.hpp"

#include <cmath>

#include "mst/errors.hpp"

namespace mst::slice {

using ad::Tensor;

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::transformer:
      return "transformer";
    case Aggregation::transformer_adpe:
      return "transformer_adpe";
    case Aggregation::linear:
      return "linear";
    case Aggregation::mean:
      return "mean";
  }
  return "transformer";
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "transformer") return Aggregation::transformer;
  if (text == "transformer_adpe") return Aggregation::transformer_adpe;
  if (text == "linear") return Aggregation::linear;
  if (text == "mean") return Aggregation::mean;
  throw ConfigError("unknown aggregation \"" + text + "\"");
}

MstConfig MstConfig::preset(std::size_t feature_dim, Aggregation aggregation) {
  MstConfig c;
  c.feature_dim = feature_dim;
  c.heads = feature_dim == 384 ? 12 : 16;
  c.ffn_dim = feature_dim;
  c.aggregation = aggregation;
  c.validate();
  return c;
}

void MstConfig::validate() const {
  if (feature_dim == 0 || heads == 0 || ffn_dim == 0 || num_classes < 2 || max_slices == 0) {
    throw ConfigError("mst config: sizes must be positive and num_classes >= 2");
  }
  if (feature_dim % heads != 0) throw ConfigError("mst config: feature_dim must be divisible by heads");
  if (dropout < 0.0F || dropout >= 1.0F) throw ConfigError("mst config: dropout must lie in [0, 1)");
}

nlohmann::json MstConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"heads", heads},         {"ffn_dim", ffn_dim},
          {"num_classes", num_classes}, {"aggregation", to_string(aggregation)}, {"max_slices", max_slices},
          {"dropout", dropout}};
}

MstConfig MstConfig::from_json(const nlohmann::json& j) {
  MstConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  const bool vit_width = c.feature_dim == 384 || c.feature_dim == 512 || c.feature_dim == 768;
  c.heads = j.value("heads", vit_width ? preset(c.feature_dim).heads : c.heads);
  c.ffn_dim = j.value("ffn_dim", c.feature_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.aggregation = parse_aggregation(j.value("aggregation", to_string(c.aggregation)));
  c.max_slices = j.value("max_slices", c.max_slices);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

MstModel::MstModel(const MstConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = config_.feature_dim;
  const std::size_t f = config_.ffn_dim;
  const std::size_t n = config_.num_classes;
  const float proj = 1.0F / std::sqrt(static_cast<float>(c));
  switch (config_.aggregation) {
    case Aggregation::transformer_adpe:
      pos_ = Tensor::zeros({config_.max_slices, c}, true);
      [[fallthrough]];
    case Aggregation::transformer:
      cls_ = Tensor::randn({1, c}, 1.0F, rng, true);
      ln1_g_ = Tensor::full({c}, 1.0F, true);
      ln1_b_ = Tensor::zeros({c}, true);
      wq_ = Tensor::randn({c, c}, proj, rng, true);
      bq_ = Tensor::zeros({c}, true);
      wk_ = Tensor::randn({c, c}, proj, rng, true);
      bk_ = Tensor::zeros({c}, true);
      wv_ = Tensor::randn({c, c}, proj, rng, true);
      bv_ = Tensor::zeros({c}, true);
      wo_ = Tensor::randn({c, c}, proj, rng, true);
      bo_ = Tensor::zeros({c}, true);
      ln2_g_ = Tensor::full({c}, 1.0F, true);
      ln2_b_ = Tensor::zeros({c}, true);
      ffn_w1_ = Tensor::randn({c, f}, proj, rng, true);
      ffn_b1_ = Tensor::zeros({f}, true);
      ffn_w2_ = Tensor::randn({f, c}, 1.0F / std::sqrt(static_cast<float>(f)), rng, true);
      ffn_b2_ = Tensor::zeros({c}, true);
      lnf_g_ = Tensor::full({c}, 1.0F, true);
      lnf_b_ = Tensor::zeros({c}, true);
      head_w_ = Tensor::randn({c, n}, proj, rng, true);
      head_b_ = Tensor::zeros({n}, true);
      break;
    case Aggregation::mean:
      head_w_ = Tensor::randn({c, n}, proj, rng, true);
      head_b_ = Tensor::zeros({n}, true);
      break;
    case Aggregation::linear:
      lin_w_ = Tensor::randn({config_.max_slices * c, n}, 1.0F / std::sqrt(static_cast<float>(config_.max_slices * c)), rng, true);
      lin_b_ = Tensor::zeros({n}, true);
      break;
  }
}

std::vector<std::pair<std::string, Tensor>> MstModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  add("mst.cls", cls_);
  add("mst.pos", pos_);
  add("mst.ln1_g", ln1_g_);
  add("mst.ln1_b", ln1_b_);
  add("mst.wq", wq_);
  add("mst.bq", bq_);
  add("mst.wk", wk_);
  add("mst.bk", bk_);
  add("mst.wv", wv_);
  add("mst.bv", bv_);
  add("mst.wo", wo_);
  add("mst.bo", bo_);
  add("mst.ln2_g", ln2_g_);
  add("mst.ln2_b", ln2_b_);
  add("mst.ffn_w1", ffn_w1_);
  add("mst.ffn_b1", ffn_b1_);
  add("mst.ffn_w2", ffn_w2_);
  add("mst.ffn_b2", ffn_b2_);
  add("mst.lnf_g", lnf_g_);
  add("mst.lnf_b", lnf_b_);
  add("mst.head_w", head_w_);
  add("mst.head_b", head_b_);
  add("mst.lin_w", lin_w_);
  add("mst.lin_b", lin_b_);
  return out;
}

std::vector<Tensor> MstModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ParamCount MstModel::param_count() const {
  ParamCount pc;
  auto size = [](std::initializer_list<const Tensor*> ts) {
    std::size_t n = 0;
    for (const Tensor* t : ts) n += t->defined() ? t->numel() : 0;
    return n;
  };
  auto part = [&](const char* name, std::size_t n, bool is_head) {
    if (n == 0) return;
    pc.parts.emplace_back(name, n);
    (is_head ? pc.head : pc.transformer) += n;
  };
  part("cls_token", size({&cls_}), false);
  part("positional_table", size({&pos_}), false);
  part("attention_norm", size({&ln1_g_, &ln1_b_}), false);
  part("attention", size({&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_}), false);
  part("ffn_norm", size({&ln2_g_, &ln2_b_}), false);
  part("ffn", size({&ffn_w1_, &ffn_b1_, &ffn_w2_, &ffn_b2_}), false);
  part("final_norm", size({&lnf_g_, &lnf_b_}), false);
  part("linear_aggregator", size({&lin_w_, &lin_b_}), true);
  part("head", size({&head_w_, &head_b_}), true);
  pc.total = pc.transformer + pc.head;
  return pc;
}

void MstModel::check_features(const Tensor& features) const {
  if (!features.defined() || features.rank() != 2) throw DimensionError("slice features must be a [S x C] tensor");
  if (features.dim(1) != config_.feature_dim) {
    throw DimensionError("feature width " + std::to_string(features.dim(1)) + " does not match model width " +
                         std::to_string(config_.feature_dim));
  }
}

MstOutput MstModel::forward(const Tensor& features, std::mt19937_64* dropout_rng) const {
  if (config_.aggregation != Aggregation::transformer && config_.aggregation != Aggregation::transformer_adpe) {
    throw UsageError("forward() needs a transformer aggregation; use forward_linear/forward_mean");
  }
  check_features(features);
  const std::size_t slices = features.dim(0);
  const std::size_t c = config_.feature_dim;
  const std::size_t heads = config_.heads;
  const std::size_t dh = c / heads;

  Tensor tokens = features;
  if (config_.aggregation == Aggregation::transformer_adpe) {
    if (slices > config_.max_slices) {
      throw CapacityError(std::to_string(slices) + " slices exceed the positional table of " +
                          std::to_string(config_.max_slices));
    }
    tokens = ad::add(tokens, ad::slice_rows(pos_, 0, slices));
  }
  const Tensor x = ad::concat_rows({cls_, tokens});
  const Tensor h = ad::layernorm(x, ln1_g_, ln1_b_);
  // Only the CLS row feeds the head, and with a single layer no other
  // token's output is consumed, so queries are computed for CLS alone.
  const Tensor q = ad::add_rowwise(ad::matmul(ad::slice_rows(h, 0, 1), wq_), bq_);
  const Tensor k = ad::add_rowwise(ad::matmul(h, wk_), bk_);
  const Tensor v = ad::add_rowwise(ad::matmul(h, wv_), bv_);

  MstOutput out;
  out.slice_attention.assign(slices, 0.0F);
  std::vector<Tensor> head_out;
  for (std::size_t i = 0; i < heads; ++i) {
    ad::Attention att = ad::scaled_dot_attention(ad::slice_cols(q, i * dh, dh), ad::slice_cols(k, i * dh, dh),
                                                 ad::slice_cols(v, i * dh, dh));
    head_out.push_back(att.out);
    const auto w = att.weights.data();
    double slice_mass = 0.0;
    for (std::size_t s = 1; s <= slices; ++s) slice_mass += w[s];
    for (std::size_t s = 0; s < slices; ++s) {
      out.slice_attention[s] += static_cast<float>(w[s + 1] / slice_mass / static_cast<double>(heads));
    }
  }
  const float p = dropout_rng ? config_.dropout : 0.0F;
  std::mt19937_64 unused;
  std::mt19937_64& rng = dropout_rng ? *dropout_rng : unused;

  Tensor attn = ad::add_rowwise(ad::matmul(ad::concat_cols(head_out), wo_), bo_);
  const Tensor x0 = ad::add(ad::slice_rows(x, 0, 1), ad::dropout(attn, p, rng));
  const Tensor hidden = ad::gelu(ad::add_rowwise(ad::matmul(ad::layernorm(x0, ln2_g_, ln2_b_), ffn_w1_), ffn_b1_));
  const Tensor ffn = ad::add_rowwise(ad::matmul(hidden, ffn_w2_), ffn_b2_);
  const Tensor y = ad::add(x0, ad::dropout(ffn, p, rng));
  out.logits = ad::add_rowwise(ad::matmul(ad::layernorm(y, lnf_g_, lnf_b_), head_w_), head_b_);
  return out;
}

Tensor MstModel::forward_linear(const Tensor& features) const {
  if (config_.aggregation != Aggregation::linear) throw UsageError("forward_linear() on a non-linear model");
  check_features(features);
  if (features.dim(0) != config_.max_slices) {
    throw DimensionError("linear aggregation needs exactly " + std::to_string(config_.max_slices) + " slices, got " +
                         std::to_string(features.dim(0)));
  }
  const Tensor flat = ad::reshape(features, {1, features.numel()});
  return ad::add_rowwise(ad::matmul(flat, lin_w_), lin_b_);
}

Tensor MstModel::forward_mean(const Tensor& features) const {
  if (config_.aggregation != Aggregation::mean) throw UsageError("forward_mean() on a non-mean model");
  check_features(features);
  const Tensor pooled = ad::reshape(ad::mean_pool(features, {0}), {1, config_.feature_dim});
  return ad::add_rowwise(ad::matmul(pooled, head_w_), head_b_);
}

MstOutput MstModel::run(const Tensor& features, std::mt19937_64* dropout_rng) const {
  switch (config_.aggregation) {
    case Aggregation::transformer:
    case Aggregation::transformer_adpe:
      return forward(features, dropout_rng);
    case Aggregation::linear:
      return {forward_linear(features), {}};
    case Aggregation::mean:
      return {forward_mean(features), {}};
  }
  throw UsageError("unknown aggregation");
}

}  // namespace mst::slice
