#include "mst/adamw.hpp"

#include <cmath>

#include "mst/errors.hpp"

namespace mst::ad {

void adamw_step(std::vector<Tensor>& params, AdamWState& state) {
  if (state.options.lr <= 0.0) throw UsageError("AdamW learning rate must be positive");
  if (state.options.weight_decay < 0.0) throw UsageError("AdamW weight decay must be non-negative");
  for (const Tensor& p : params) {
    if (!p.has_grad()) throw UsageError("AdamW step: parameter of shape " + to_string(p.shape()) + " has no gradient");
  }
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0F);
      state.v.emplace_back(p.numel(), 0.0F);
    }
  }
  if (state.m.size() != params.size()) throw UsageError("AdamW state tracks a different parameter list");

  ++state.step;
  const AdamWOptions& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_data();
    const auto grad = params[p].grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != theta.size()) throw UsageError("AdamW moment buffer size mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double value = theta[i];
      value -= o.lr * o.weight_decay * value;
      value -= o.lr * (mi / correction1) / (std::sqrt(vi / correction2) + o.eps);
      theta[i] = static_cast<float>(value);
    }
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options) : params_(std::move(params)) {
  state_.options = options;
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace mst::ad
