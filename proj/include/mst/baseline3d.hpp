#pragma once

// Small residual 3D CNN: stem conv + max pool, one down-sampling residual
// stage per width, global average pool and a linear head.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mst/autodiff.hpp"
#include "mst/volume.hpp"

namespace mst::cnn {

struct Cnn3dConfig {
  std::size_t stem_width = 8;
  std::vector<std::size_t> widths{8, 16, 32, 64};
  std::size_t blocks_per_stage = 1;
  std::size_t num_classes = 2;
  std::array<std::size_t, 3> input_shape{32, 64, 64};

  /// Throws ConfigError when a stage would collapse the map below 1×1×1.
  void validate() const;
  /// Spatial extent of the last-stage activation map.
  std::array<std::size_t, 3> feature_shape() const;
  nlohmann::json to_json() const;
  static Cnn3dConfig from_json(const nlohmann::json& j);
};

struct CnnOutput {
  ad::Tensor logits;       // [1 × num_classes]
  ad::Tensor activations;  // last-stage post-ReLU map [C × d × h × w]
};

class Cnn3dModel {
 public:
  Cnn3dModel(const Cnn3dConfig& config, std::uint64_t seed);

  CnnOutput forward(const Volume& volume) const;
  CnnOutput forward(const ad::Tensor& input) const;  // [1 × D × H × W]

  const Cnn3dConfig& config() const { return config_; }
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;
  std::size_t param_count() const;

 private:
  struct Conv {
    ad::Tensor kernel;
    ad::Tensor bias;
  };
  struct Block {
    Conv conv1, conv2, shortcut;  // shortcut.kernel undefined for identity
    std::size_t stride = 1;
  };

  Cnn3dConfig config_;
  Conv stem_;
  std::vector<Block> blocks_;
  ad::Tensor head_w_, head_b_;
};

}  // namespace mst::cnn
