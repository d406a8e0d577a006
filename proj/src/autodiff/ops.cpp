#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mst/autodiff.hpp"
#include "mst/errors.hpp"

namespace mst::ad {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

using BackwardFn = std::function<void(Node&)>;

Tensor make_op(Shape shape, std::vector<float> value, std::vector<Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined input");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

std::vector<float> copy_values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      float* g = in.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      const float sign = p == 0 ? 1.0F : -1.0F;
      float* g = in.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    if (x.requires_grad) {
      float* g = x.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      float* g = y.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out = copy_values(a);
  for (float& v : out) v *= factor;
  return make_op(a.shape(), std::move(out), {a}, [factor](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_rowwise");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  if (bias.numel() != cols) {
    throw DimensionError("add_rowwise: bias has " + std::to_string(bias.numel()) + " values for " +
                         std::to_string(cols) + " columns");
  }
  std::vector<float> out = copy_values(a);
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  return make_op(a.shape(), std::move(out), {a, bias}, [rows, cols](Node& self) {
    Node& x = parent(self, 0);
    Node& b = parent(self, 1);
    if (x.requires_grad) {
      float* g = x.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad) {
      float* g = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out = copy_values(x);
  for (float& v : out) v = v > 0.0F ? v : 0.0F;
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (self.value[i] > 0.0F) g[i] += self.grad[i];
    }
  });
}

constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);

Tensor gelu(const Tensor& x) {
  std::vector<float> out = copy_values(x);
  for (float& v : out) v = 0.5F * v * (1.0F + std::erf(v * kInvSqrt2));
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& in = parent(self, 0);
    float* g = in.grad_buffer();
    const float inv_sqrt_2pi = static_cast<float>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const float v = in.value[i];
      const float cdf = 0.5F * (1.0F + std::erf(v * kInvSqrt2));
      const float pdf = inv_sqrt_2pi * std::exp(-0.5F * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (ad::numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  }
  return make_op(std::move(shape), copy_values(x), {x}, [](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xd[r * cols + c];
  }
  return make_op({cols, rows}, std::move(out), {x}, [rows, cols](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c * rows + r];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t cols = x.dim(1);
  if (count == 0 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + to_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<float> out(xd.begin() + static_cast<std::ptrdiff_t>(start * cols),
                         xd.begin() + static_cast<std::ptrdiff_t>((start + count) * cols));
  return make_op({count, cols}, std::move(out), {x}, [start, cols](Node& self) {
    float* g = parent(self, 0).grad_buffer() + start * cols;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  if (count == 0 || start + count > cols) {
    throw DimensionError("slice_cols: columns out of range for " + to_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<float> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(r * cols + start), count, out.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return make_op({rows, count}, std::move(out), {x}, [rows, cols, start, count](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) g[r * cols + start + c] += self.grad[r * count + c];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op({rows, cols}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        float* g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.dim(1);
  }
  std::vector<float> out(rows * cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.dim(1);
    const auto pd = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(r * pc), pc, out.begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
    }
    offset += pc;
  }
  return make_op({rows, cols}, std::move(out), parts, [rows, cols](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t pc = p->shape[1];
      if (p->requires_grad) {
        float* g = p->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += self.grad[r * cols + offset + c];
        }
      }
      offset += pc;
    }
  });
}

Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng) {
  if (p < 0.0F || p >= 1.0F) throw UsageError("dropout probability must lie in [0, 1)");
  if (p == 0.0F) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<float> mask(x.numel());
  const float inv = 1.0F / (1.0F - p);
  for (float& m : mask) m = keep(rng) ? inv : 0.0F;
  std::vector<float> out = copy_values(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  return make_op({1}, {static_cast<float>(total)}, {x}, [](Node& self) {
    Node& in = parent(self, 0);
    float* g = in.grad_buffer();
    for (std::size_t i = 0; i < in.value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0F / static_cast<float>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw DimensionError("dot: length mismatch");
  return sum(mul(a, reshape(b, a.shape())));
}

Tensor mean_pool(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = x.shape();
  std::vector<bool> reduced(in_shape.size(), false);
  for (std::size_t a : axes) {
    if (a >= in_shape.size()) throw DimensionError("mean_pool: axis out of range");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t group = 1;
  for (std::size_t i = 0; i < in_shape.size(); ++i) {
    if (reduced[i]) {
      group *= in_shape[i];
    } else {
      out_shape.push_back(in_shape[i]);
    }
  }
  if (out_shape.empty()) out_shape = {1};

  // Flat input index -> flat output index.
  std::vector<std::size_t> target(x.numel());
  std::vector<std::size_t> index(in_shape.size(), 0);
  for (std::size_t flat = 0; flat < target.size(); ++flat) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < in_shape.size(); ++i) {
      if (!reduced[i]) out = out * in_shape[i] + index[i];
    }
    target[flat] = out;
    for (std::size_t i = in_shape.size(); i-- > 0;) {
      if (++index[i] < in_shape[i]) break;
      index[i] = 0;
    }
  }
  const float inv = 1.0F / static_cast<float>(group);
  std::vector<double> acc(ad::numel(out_shape), 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < target.size(); ++i) acc[target[i]] += xd[i];
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]) * inv;
  return make_op(std::move(out_shape), std::move(out), {x}, [target = std::move(target), inv](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < target.size(); ++i) g[i] += self.grad[target[i]] * inv;
  });
}

// ---- linear algebra / nn ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<float> out(m * n);
  const auto ai = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  MapR(out.data(), ai, ni).noalias() = CMapR(a.data().data(), ai, ki) * CMapR(b.data().data(), ki, ni);
  return make_op({m, n}, std::move(out), {a, b}, [ai, ki, ni](Node& self) {
    Node& x = parent(self, 0);
    Node& y = parent(self, 1);
    CMapR dc(self.grad.data(), ai, ni);
    if (x.requires_grad) {
      MapR(x.grad_buffer(), ai, ki).noalias() += dc * CMapR(y.value.data(), ki, ni).transpose();
    }
    if (y.requires_grad) {
      MapR(y.grad_buffer(), ki, ni).noalias() += CMapR(x.value.data(), ai, ki).transpose() * dc;
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  const auto xd = x.data();
  std::vector<float> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const float e = std::exp(xd[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  return make_op(shape, std::move(out), {x}, [outer, inner, n](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double proj = 0.0;
        for (std::size_t j = 0; j < n; ++j) proj += self.grad[base + j * inner] * self.value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - static_cast<float>(proj));
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  constexpr float kEps = 1e-5F;
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) throw DimensionError("layernorm: affine size mismatch");
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<float> normed(x.numel());
  std::vector<float> rstd(rows);
  std::vector<float> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xd[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xd[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[r] = static_cast<float>(1.0 / std::sqrt(var + kEps));
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = r * n + c;
      normed[i] = static_cast<float>((xd[i] - mu) * rstd[r]);
      out[i] = normed[i] * gd[c] + bd[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [n, rows, normed = std::move(normed), rstd = std::move(rstd)](Node& self) {
                   Node& in = parent(self, 0);
                   Node& g = parent(self, 1);
                   Node& b = parent(self, 2);
                   if (g.requires_grad) {
                     float* gg = g.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % n] += self.grad[i] * normed[i];
                   }
                   if (b.requires_grad) {
                     float* bg = b.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) bg[i % n] += self.grad[i];
                   }
                   if (!in.requires_grad) return;
                   float* xg = in.grad_buffer();
                   std::vector<float> dn(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_dn = 0.0;
                     double mean_dn_x = 0.0;
                     for (std::size_t c = 0; c < n; ++c) {
                       const std::size_t i = r * n + c;
                       dn[c] = self.grad[i] * g.value[c];
                       mean_dn += dn[c];
                       mean_dn_x += dn[c] * normed[i];
                     }
                     mean_dn /= static_cast<double>(n);
                     mean_dn_x /= static_cast<double>(n);
                     for (std::size_t c = 0; c < n; ++c) {
                       const std::size_t i = r * n + c;
                       xg[i] += rstd[r] * static_cast<float>(dn[c] - mean_dn - normed[i] * mean_dn_x);
                     }
                   }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t n = logits.numel();
  if (label >= n) throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range");
  const auto ld = logits.data();
  const float peak = *std::max_element(ld.begin(), ld.end());
  double total = 0.0;
  for (float v : ld) total += std::exp(static_cast<double>(v - peak));
  const double lse = peak + std::log(total);
  std::vector<float> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = static_cast<float>(std::exp(ld[i] - lse));
  const float loss = static_cast<float>(lse - ld[label]);
  return make_op({1}, {loss}, {logits}, [probs = std::move(probs), label](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < probs.size(); ++i) {
      g[i] += self.grad[0] * (probs[i] - (i == label ? 1.0F : 0.0F));
    }
  });
}

Attention scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_rank(q, 2, "scaled_dot_attention");
  require_rank(k, 2, "scaled_dot_attention");
  require_rank(v, 2, "scaled_dot_attention");
  const std::size_t d = q.dim(1);
  if (d == 0 || k.dim(1) != d) throw DimensionError("scaled_dot_attention: query/key widths differ");
  if (v.dim(0) != k.dim(0)) throw DimensionError("scaled_dot_attention: key/value lengths differ");
  const float inv_sqrt_d = 1.0F / std::sqrt(static_cast<float>(d));
  Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), 1);
  Tensor out = matmul(weights, v);
  return {std::move(out), std::move(weights)};
}

namespace {

struct ConvGeometry {
  std::size_t cin, d, h, w, cout, k, stride, pad, od, oh, ow;
  std::size_t positions() const { return od * oh * ow; }
  std::size_t patch() const { return cin * k * k * k; }
};

template <typename Visit>
void for_each_tap(const ConvGeometry& g, Visit&& visit) {
  // visit(col_index, input_index_or_npos)
  const std::size_t npos = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t kz = 0; kz < g.k; ++kz) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::size_t row = ((c * g.k + kz) * g.k + ky) * g.k + kx;
          std::size_t pos = 0;
          for (std::size_t z = 0; z < g.od; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z * g.stride + kz) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t y = 0; y < g.oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              for (std::size_t x = 0; x < g.ow; ++x, ++pos) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                const bool inside = iz >= 0 && iy >= 0 && ix >= 0 && iz < static_cast<std::ptrdiff_t>(g.d) &&
                                    iy < static_cast<std::ptrdiff_t>(g.h) && ix < static_cast<std::ptrdiff_t>(g.w);
                const std::size_t src =
                    inside ? ((c * g.d + static_cast<std::size_t>(iz)) * g.h + static_cast<std::size_t>(iy)) * g.w +
                                 static_cast<std::size_t>(ix)
                           : static_cast<std::size_t>(-1);
                visit(row * npos + pos, src);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv3d");
  require_rank(kernel, 5, "conv3d");
  if (stride == 0) throw UsageError("conv3d: stride must be positive");
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k || kernel.dim(4) != k) throw DimensionError("conv3d: kernel must be cubic");
  if (kernel.dim(1) != x.dim(0)) throw DimensionError("conv3d: input channels differ from kernel");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), k, stride, pad, 0, 0, 0};
  auto out_extent = [&](std::size_t n) -> std::size_t {
    if (n + 2 * pad < k) throw DimensionError("conv3d: input smaller than kernel");
    return (n + 2 * pad - k) / stride + 1;
  };
  g.od = out_extent(g.d);
  g.oh = out_extent(g.h);
  g.ow = out_extent(g.w);
  if (bias.defined() && bias.numel() != g.cout) throw DimensionError("conv3d: bias size mismatch");

  const std::size_t npos = g.positions();
  const std::size_t patch = g.patch();
  std::vector<float> col(patch * npos);
  const auto xd = x.data();
  for_each_tap(g, [&](std::size_t ci, std::size_t src) {
    col[ci] = src == static_cast<std::size_t>(-1) ? 0.0F : xd[src];
  });

  std::vector<float> out(g.cout * npos);
  const auto co = static_cast<Eigen::Index>(g.cout);
  const auto pa = static_cast<Eigen::Index>(patch);
  const auto np = static_cast<Eigen::Index>(npos);
  MapR(out.data(), co, np).noalias() = CMapR(kernel.data().data(), co, pa) * CMapR(col.data(), pa, np);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t c = 0; c < g.cout; ++c) {
      for (std::size_t p = 0; p < npos; ++p) out[c * npos + p] += bd[c];
    }
  }

  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op({g.cout, g.od, g.oh, g.ow}, std::move(out), std::move(inputs),
                 [g, col = std::move(col), has_bias, co, pa, np](Node& self) {
                   Node& in = parent(self, 0);
                   Node& kern = parent(self, 1);
                   CMapR dout(self.grad.data(), co, np);
                   if (kern.requires_grad) {
                     MapR(kern.grad_buffer(), co, pa).noalias() += dout * CMapR(col.data(), pa, np).transpose();
                   }
                   if (has_bias && parent(self, 2).requires_grad) {
                     float* bg = parent(self, 2).grad_buffer();
                     const std::size_t npos = g.positions();
                     for (std::size_t c = 0; c < g.cout; ++c) {
                       double acc = 0.0;
                       for (std::size_t p = 0; p < npos; ++p) acc += self.grad[c * npos + p];
                       bg[c] += static_cast<float>(acc);
                     }
                   }
                   if (in.requires_grad) {
                     std::vector<float> dcol(col.size());
                     MapR(dcol.data(), pa, np).noalias() = CMapR(kern.value.data(), co, pa).transpose() * dout;
                     float* xg = in.grad_buffer();
                     for_each_tap(g, [&](std::size_t ci, std::size_t src) {
                       if (src != static_cast<std::size_t>(-1)) xg[src] += dcol[ci];
                     });
                   }
                 });
}

Tensor max_pool3d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "max_pool3d");
  if (window == 0 || stride == 0) throw UsageError("max_pool3d: window and stride must be positive");
  const std::size_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (d < window || h < window || w < window) throw DimensionError("max_pool3d: input smaller than window");
  const std::size_t od = (d - window) / stride + 1;
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  const auto xd = x.data();
  std::vector<float> out(c * od * oh * ow);
  std::vector<std::size_t> arg(out.size());
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t kz = 0; kz < window; ++kz) {
            for (std::size_t ky = 0; ky < window; ++ky) {
              for (std::size_t kx = 0; kx < window; ++kx) {
                const std::size_t idx =
                    ((ch * d + z * stride + kz) * h + y * stride + ky) * w + xx * stride + kx;
                if (xd[idx] > best) {
                  best = xd[idx];
                  best_idx = idx;
                }
              }
            }
          }
          out[o] = best;
          arg[o] = best_idx;
        }
      }
    }
  }
  return make_op({c, od, oh, ow}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    float* g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

}  // namespace mst::ad
