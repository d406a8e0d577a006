#pragma once

// Dense float32 tensors with tape-free reverse-mode differentiation.
//
// Every op returns a new Tensor whose node keeps shared ownership of its
// inputs and a closure that pushes the output gradient back into them. The
// graph lives exactly as long as the last Tensor referencing it.
//
// Gradient policy is reset-before-backward: backward() refuses to run when a
// leaf it would write to already holds a gradient. Call zero_grad() (or
// AdamW::zero_grad()) between steps. Batches are formed by summing per-sample
// losses into one scalar before a single backward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mst::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty means "no gradient"
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  // Zero-initialised on first use.
  float* grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor randn(Shape shape, float stddev, std::mt19937_64& rng, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  // Views into the node; deleted on temporaries, whose storage would dangle.
  std::span<const float> data() const&;
  std::span<const float> data() const&& = delete;
  // Writable access for leaves only (parameters, inputs).
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const float> grad() const&;
  std::span<const float> grad() const&& = delete;
  std::span<float> mutable_grad();
  void zero_grad();

  // Fresh leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Runs reverse-mode differentiation from a one-element loss.
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

// ---- elementwise / shape ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
/// a[m×n] + bias broadcast over rows; bias has n elements.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng);

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
/// Averages over the listed axes and drops them; reducing every axis gives shape {1}.
Tensor mean_pool(const Tensor& x, const std::vector<std::size_t>& axes);

// ---- linear algebra / nn -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalises over the last axis with eps = 1e-5.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
/// Mean cross-entropy of one logit vector (any shape with num_classes elements).
Tensor cross_entropy(const Tensor& logits, std::size_t label);

struct Attention {
  Tensor out;      // [Tq × d]
  Tensor weights;  // [Tq × Tk]
};

/// softmax(q·kᵀ/√d)·v. q is [Tq × d]; k and v are [Tk × d].
Attention scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// x [Cin×D×H×W], kernel [Cout×Cin×k×k×k], bias [Cout] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// Cubic windows, no padding; trailing voxels that do not fill a window are dropped.
Tensor max_pool3d(const Tensor& x, std::size_t window, std::size_t stride);

}  // namespace mst::ad
