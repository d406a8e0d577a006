#include "mst/baseline3d.hpp"

#include <cmath>
#include <random>

#include "mst/errors.hpp"

namespace mst::cnn {

using ad::Tensor;

void Cnn3dConfig::validate() const {
  if (widths.empty()) throw ConfigError("cnn3d: need at least one stage");
  if (stem_width == 0 || blocks_per_stage == 0 || num_classes < 2) throw ConfigError("cnn3d: sizes must be positive");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("cnn3d: stage widths must be positive");
  }
  for (std::size_t n : input_shape) {
    if (n < 2) throw ConfigError("cnn3d: every input extent must be at least 2 for the stem pool");
  }
}

std::array<std::size_t, 3> Cnn3dConfig::feature_shape() const {
  std::array<std::size_t, 3> s = input_shape;
  for (auto& n : s) n /= 2;  // stem max pool
  for (std::size_t stage = 0; stage < widths.size(); ++stage) {
    for (auto& n : s) n = (n - 1) / 2 + 1;
  }
  return s;
}

nlohmann::json Cnn3dConfig::to_json() const {
  return {{"stem_width", stem_width},   {"widths", widths},
          {"blocks_per_stage", blocks_per_stage}, {"num_classes", num_classes},
          {"input_shape", input_shape}};
}

Cnn3dConfig Cnn3dConfig::from_json(const nlohmann::json& j) {
  Cnn3dConfig c;
  c.stem_width = j.value("stem_width", c.stem_width);
  c.widths = j.value("widths", c.widths);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.input_shape = j.value("input_shape", c.input_shape);
  c.validate();
  return c;
}

Cnn3dModel::Cnn3dModel(const Cnn3dConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  auto conv = [&](std::size_t cout, std::size_t cin, std::size_t k) {
    const float he = std::sqrt(2.0F / static_cast<float>(cin * k * k * k));
    return Conv{Tensor::randn({cout, cin, k, k, k}, he, rng, true), Tensor::zeros({cout}, true)};
  };
  stem_ = conv(config_.stem_width, 1, 3);
  std::size_t cin = config_.stem_width;
  for (std::size_t w : config_.widths) {
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      Block block;
      block.stride = b == 0 ? 2 : 1;
      block.conv1 = conv(w, cin, 3);
      block.conv2 = conv(w, w, 3);
      if (block.stride != 1 || cin != w) block.shortcut = conv(w, cin, 1);
      blocks_.push_back(std::move(block));
      cin = w;
    }
  }
  head_w_ = Tensor::randn({cin, config_.num_classes}, 1.0F / std::sqrt(static_cast<float>(cin)), rng, true);
  head_b_ = Tensor::zeros({config_.num_classes}, true);
}

std::vector<std::pair<std::string, Tensor>> Cnn3dModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out{{"cnn.stem.kernel", stem_.kernel}, {"cnn.stem.bias", stem_.bias}};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "cnn.block" + std::to_string(i);
    const Block& b = blocks_[i];
    out.emplace_back(p + ".conv1.kernel", b.conv1.kernel);
    out.emplace_back(p + ".conv1.bias", b.conv1.bias);
    out.emplace_back(p + ".conv2.kernel", b.conv2.kernel);
    out.emplace_back(p + ".conv2.bias", b.conv2.bias);
    if (b.shortcut.kernel.defined()) {
      out.emplace_back(p + ".shortcut.kernel", b.shortcut.kernel);
      out.emplace_back(p + ".shortcut.bias", b.shortcut.bias);
    }
  }
  out.emplace_back("cnn.head_w", head_w_);
  out.emplace_back("cnn.head_b", head_b_);
  return out;
}

std::vector<Tensor> Cnn3dModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Cnn3dModel::param_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

CnnOutput Cnn3dModel::forward(const Volume& volume) const {
  if (volume.shape != config_.input_shape) {
    throw DimensionError("cnn3d: volume shape does not match the configured input shape");
  }
  return forward(Tensor::from({1, volume.depth(), volume.height(), volume.width()}, volume.data));
}

CnnOutput Cnn3dModel::forward(const Tensor& input) const {
  if (input.rank() != 4 || input.dim(0) != 1 || input.dim(1) != config_.input_shape[0] ||
      input.dim(2) != config_.input_shape[1] || input.dim(3) != config_.input_shape[2]) {
    throw DimensionError("cnn3d: input must be [1 x D x H x W] matching the configured shape");
  }
  Tensor x = ad::relu(ad::conv3d(input, stem_.kernel, stem_.bias, 1, 1));
  x = ad::max_pool3d(x, 2, 2);
  for (const Block& b : blocks_) {
    Tensor y = ad::relu(ad::conv3d(x, b.conv1.kernel, b.conv1.bias, b.stride, 1));
    y = ad::conv3d(y, b.conv2.kernel, b.conv2.bias, 1, 1);
    const Tensor skip = b.shortcut.kernel.defined() ? ad::conv3d(x, b.shortcut.kernel, b.shortcut.bias, b.stride, 0) : x;
    x = ad::relu(ad::add(y, skip));
  }
  CnnOutput out;
  out.activations = x;
  const Tensor pooled = ad::reshape(ad::mean_pool(x, {1, 2, 3}), {1, x.dim(0)});
  out.logits = ad::add_rowwise(ad::matmul(pooled, head_w_), head_b_);
  return out;
}

}  // namespace mst::cnn
