#include <cmath>
#include <random>

#include "mst/encoder2d.hpp"
#include "mst/errors.hpp"

namespace mst::encoder2d {

using ad::Tensor;

void SliceFeatures::validate() const {
  if (num_slices == 0 || feature_dim == 0) throw DimensionError("slice features need S >= 1 and C >= 1");
  if (features.size() != num_slices * feature_dim) throw DimensionError("feature payload length mismatch");
  if (!has_attention()) {
    if (!patch_attention.empty()) throw DimensionError("attention payload present without a grid");
    return;
  }
  const std::size_t cells = grid_cells();
  if (patch_attention.size() != num_slices * cells) throw DimensionError("attention payload length mismatch");
  for (std::size_t s = 0; s < num_slices; ++s) {
    double total = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
      const float a = patch_attention[s * cells + i];
      if (a < 0.0F) throw NumericError("negative patch attention in slice " + std::to_string(s));
      total += a;
    }
    if (std::abs(total - 1.0) > 1e-5) throw NumericError("patch attention of slice " + std::to_string(s) + " sums to " + std::to_string(total));
  }
}

Tensor SliceFeatures::feature_tensor() const { return Tensor::from({num_slices, feature_dim}, features); }

void ToyPatchEncoderConfig::validate() const {
  if (patch_size == 0 || embed_dim == 0 || heads == 0 || image_side == 0) throw ConfigError("toy encoder: sizes must be positive");
  if (image_side % patch_size != 0) {
    throw DimensionError("toy encoder: image side " + std::to_string(image_side) + " is not divisible by patch size " +
                         std::to_string(patch_size));
  }
  if (embed_dim % heads != 0) throw ConfigError("toy encoder: embed_dim must be divisible by heads");
}

nlohmann::json ToyPatchEncoderConfig::to_json() const {
  return {{"patch_size", patch_size}, {"embed_dim", embed_dim}, {"heads", heads}, {"image_side", image_side}};
}

ToyPatchEncoderConfig ToyPatchEncoderConfig::from_json(const nlohmann::json& j) {
  ToyPatchEncoderConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.image_side = j.value("image_side", c.image_side);
  return c;
}

ToyPatchEncoder::ToyPatchEncoder(const ToyPatchEncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = config_.embed_dim;
  const std::size_t p2 = config_.patch_size * config_.patch_size;
  const float proj_std = 1.0F / std::sqrt(static_cast<float>(c));
  patch_w_ = Tensor::randn({p2, c}, 1.0F / std::sqrt(static_cast<float>(p2)), rng, true);
  patch_b_ = Tensor::zeros({c}, true);
  cls_ = Tensor::randn({1, c}, 1.0F, rng, true);
  wq_ = Tensor::randn({c, c}, proj_std, rng, true);
  bq_ = Tensor::zeros({c}, true);
  wk_ = Tensor::randn({c, c}, proj_std, rng, true);
  bk_ = Tensor::zeros({c}, true);
  wv_ = Tensor::randn({c, c}, proj_std, rng, true);
  bv_ = Tensor::zeros({c}, true);
  wo_ = Tensor::randn({c, c}, proj_std, rng, true);
  bo_ = Tensor::zeros({c}, true);
}

std::string ToyPatchEncoder::id() const {
  return "toy-p" + std::to_string(config_.patch_size) + "-c" + std::to_string(config_.embed_dim) + "-h" +
         std::to_string(config_.heads);
}

void ToyPatchEncoder::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(!frozen);
}

std::vector<std::pair<std::string, Tensor>> ToyPatchEncoder::named_parameters() const {
  return {{"encoder.patch_w", patch_w_}, {"encoder.patch_b", patch_b_}, {"encoder.cls", cls_},
          {"encoder.wq", wq_},
          {"encoder.bq", bq_},           {"encoder.wk", wk_},           {"encoder.bk", bk_},
          {"encoder.wv", wv_},           {"encoder.bv", bv_},           {"encoder.wo", wo_},
          {"encoder.bo", bo_}};
}

std::vector<Tensor> ToyPatchEncoder::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ToyPatchEncoder::param_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

EncodedVolume ToyPatchEncoder::encode_slice(std::span<const float> image) const {
  if (image.size() != config_.image_side * config_.image_side) {
    throw DimensionError("encode_slice: expected a " + std::to_string(config_.image_side) + "x" +
                         std::to_string(config_.image_side) + " image");
  }
  return encode_slices(image, 1);
}

EncodedVolume ToyPatchEncoder::encode_volume(const Volume& volume) const {
  if (volume.depth() == 0 || volume.data.empty()) throw UsageError("encode_volume: empty volume");
  if (volume.height() != config_.image_side || volume.width() != config_.image_side) {
    throw DimensionError("encode_volume: slices are " + std::to_string(volume.height()) + "x" +
                         std::to_string(volume.width()) + ", encoder expects side " + std::to_string(config_.image_side));
  }
  return encode_slices(volume.data, volume.depth());
}

SliceFeatures ToyPatchEncoder::features(const Volume& volume) const {
  ad::NoGradGuard no_grad;
  EncodedVolume enc = encode_volume(volume);
  SliceFeatures f;
  f.num_slices = volume.depth();
  f.feature_dim = config_.embed_dim;
  f.grid_h = f.grid_w = config_.grid();
  f.features.assign(enc.features.data().begin(), enc.features.data().end());
  f.patch_attention = std::move(enc.patch_attention);
  f.encoder_id = id();
  f.frozen = frozen_;
  return f;
}

EncodedVolume ToyPatchEncoder::encode_slices(std::span<const float> voxels, std::size_t num_slices) const {
  const std::size_t side = config_.image_side;
  const std::size_t p = config_.patch_size;
  const std::size_t g = config_.grid();
  const std::size_t cells = g * g;
  const std::size_t c = config_.embed_dim;
  const std::size_t heads = config_.heads;
  const std::size_t dh = c / heads;

  // Patch rows ordered (slice, grid row, grid col); pixels row-major within a patch.
  std::vector<float> patches(num_slices * cells * p * p);
  std::size_t o = 0;
  for (std::size_t s = 0; s < num_slices; ++s) {
    const float* img = voxels.data() + s * side * side;
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) patches[o++] = img[(gy * p + y) * side + gx * p + x];
        }
      }
    }
  }
  const Tensor patch_in = Tensor::from({num_slices * cells, p * p}, std::move(patches));
  const Tensor embedded = ad::add_rowwise(ad::matmul(patch_in, patch_w_), patch_b_);
  // No normalisation before attention: it would discard the patch intensity
  // scale, which is what separates a lesion patch from background.
  const Tensor keys = ad::add_rowwise(ad::matmul(embedded, wk_), bk_);
  const Tensor values = ad::add_rowwise(ad::matmul(embedded, wv_), bv_);
  const Tensor query = ad::add_rowwise(ad::matmul(cls_, wq_), bq_);
  const Tensor cls_key = ad::add_rowwise(ad::matmul(cls_, wk_), bk_);
  const Tensor cls_value = ad::add_rowwise(ad::matmul(cls_, wv_), bv_);

  std::vector<Tensor> head_q, head_k, head_v, head_ck, head_cv;
  for (std::size_t h = 0; h < heads; ++h) {
    head_q.push_back(ad::slice_cols(query, h * dh, dh));
    head_k.push_back(ad::slice_cols(keys, h * dh, dh));
    head_v.push_back(ad::slice_cols(values, h * dh, dh));
    head_ck.push_back(ad::slice_cols(cls_key, h * dh, dh));
    head_cv.push_back(ad::slice_cols(cls_value, h * dh, dh));
  }

  EncodedVolume out;
  out.patch_attention.assign(num_slices * cells, 0.0F);
  std::vector<Tensor> rows;
  rows.reserve(num_slices);
  for (std::size_t s = 0; s < num_slices; ++s) {
    std::vector<Tensor> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor k = ad::concat_rows({head_ck[h], ad::slice_rows(head_k[h], s * cells, cells)});
      const Tensor v = ad::concat_rows({head_cv[h], ad::slice_rows(head_v[h], s * cells, cells)});
      ad::Attention att = ad::scaled_dot_attention(head_q[h], k, v);
      head_out.push_back(att.out);
      const auto w = att.weights.data();
      double patch_mass = 0.0;
      for (std::size_t i = 1; i <= cells; ++i) patch_mass += w[i];
      for (std::size_t i = 0; i < cells; ++i) {
        out.patch_attention[s * cells + i] += static_cast<float>(w[i + 1] / patch_mass / static_cast<double>(heads));
      }
    }
    const Tensor mixed = ad::add_rowwise(ad::matmul(ad::concat_cols(head_out), wo_), bo_);
    rows.push_back(ad::add(cls_, mixed));
  }
  out.features = ad::concat_rows(rows);
  return out;
}

}  // namespace mst::encoder2d
