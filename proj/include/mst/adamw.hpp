#pragma once

#include <cstdint>
#include <vector>

#include "mst/autodiff.hpp"

namespace mst::ad {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter list; m[i]/v[i] track params[i].
struct AdamWState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  AdamWOptions options;
};

/// Decoupled weight decay (θ ← θ − lr·wd·θ) followed by the bias-corrected
/// Adam update. Arithmetic is carried in double and rounded once per element.
/// Throws UsageError if any parameter lacks a gradient.
void adamw_step(std::vector<Tensor>& params, AdamWState& state);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);

  void step() { adamw_step(params_, state_); }
  void zero_grad();

  const AdamWState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWState state_;
};

}  // namespace mst::ad
