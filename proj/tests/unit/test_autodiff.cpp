#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "mst/adamw.hpp"
#include "mst/errors.hpp"

using namespace mst;
using ad::Tensor;

TEST_CASE("every op matches central differences") {
  std::mt19937_64 rng(11);
  for (const auto& op : testing::gradient_suite()) {
    CAPTURE(op.name);
    for (int rep = 0; rep < 20; ++rep) {
      const auto r = op.run(rng);
      CHECK(r.rel_error < 1e-3);
    }
  }
}

namespace {

void check_close(std::span<const float> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

void check_close(const Tensor& got, const std::vector<double>& want, double tol) { check_close(got.data(), want, tol); }

}  // namespace

TEST_CASE("matmul") {
  const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  check_close(ad::matmul(eye, m), {1, 2, 3, 4}, 0);
  check_close(ad::matmul(m, Tensor::from({2, 1}, {0, 1})), {2, 4}, 0);
  CHECK_THROWS_AS(ad::matmul(m, Tensor::zeros({3, 2})), DimensionError);

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = Tensor::randn({3, 3}, 1.0F, rng);
    const auto b = Tensor::randn({3, 3}, 1.0F, rng);
    std::vector<double> want(9, 0.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 3; ++k) want[i * 3 + j] += static_cast<double>(a.data()[i * 3 + k]) * b.data()[k * 3 + j];
      }
    }
    check_close(ad::matmul(a, b), want, 1e-6);
  }
}

TEST_CASE("softmax") {
  check_close(ad::softmax(Tensor::from({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-7);
  check_close(ad::softmax(Tensor::from({2}, {0, std::log(2.0F)}), 0), {1.0 / 3, 2.0 / 3}, 1e-7);
  std::mt19937_64 rng(5);
  const auto x = Tensor::randn({4, 6}, 2.0F, rng);
  const auto shifted = ad::add(x, Tensor::full({4, 6}, 100.0F));
  const auto s = ad::softmax(x, 1);
  const auto t = ad::softmax(shifted, 1);
  for (std::size_t i = 0; i < 24; ++i) CHECK(std::abs(s.data()[i] - t.data()[i]) <= 1e-6);
  for (std::size_t r = 0; r < 4; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 6; ++c) row += s.data()[r * 6 + c];
    CHECK(std::abs(row - 1.0) <= 1e-6);
  }
}

TEST_CASE("scaled dot attention") {
  const auto v1 = Tensor::from({1, 3}, {1, 2, 3});
  const auto single = ad::scaled_dot_attention(Tensor::from({1, 3}, {0.5F, -1, 2}), Tensor::from({1, 3}, {4, 4, 4}), v1);
  check_close(single.weights.data(), {1.0}, 0);
  check_close(single.out.data(), {1, 2, 3}, 0);

  const auto same_k = Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2});
  const auto uni = ad::scaled_dot_attention(Tensor::from({3, 2}, {1, 0, -3, 1, 0.2F, 7}), same_k, same_k);
  for (float w : uni.weights.data()) CHECK(std::abs(w - 1.0F / 3) <= 1e-7);

  const auto id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto two = ad::scaled_dot_attention(id, id, id);
  const double big = std::exp(1 / std::sqrt(2.0));
  const double hi = big / (big + 1.0);
  check_close(two.weights.data(), {hi, 1 - hi, 1 - hi, hi}, 1e-7);
  check_close(two.out.data(), {hi, 1 - hi, 1 - hi, hi}, 1e-7);
  CHECK_THROWS_AS(ad::scaled_dot_attention(Tensor::zeros({2, 0}), Tensor::zeros({2, 0}), Tensor::zeros({2, 0})), Error);
}

TEST_CASE("layernorm, cross entropy, conv identity") {
  check_close(ad::layernorm(Tensor::full({1, 5}, 3.0F), Tensor::full({5}, 1.0F), Tensor::zeros({5})), {0, 0, 0, 0, 0}, 0);
  CHECK(ad::cross_entropy(Tensor::from({1, 2}, {0, 0}), 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-7));

  std::mt19937_64 rng(9);
  const auto x = Tensor::randn({2, 3, 4, 5}, 1.0F, rng);
  const auto k = Tensor::from({2, 2, 1, 1, 1}, {1, 0, 0, 1});
  const auto y = ad::conv3d(x, k, Tensor(), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("backward basics and reset policy") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  ad::backward(ad::sum(x));
  check_close(x.grad(), {1, 1, 1}, 0);
  CHECK_THROWS_AS(ad::backward(ad::sum(x)), UsageError);
  x.zero_grad();

  auto y = Tensor::from({2}, {1, 2}, true);
  ad::backward(ad::dot(y, y));
  check_close(y.grad(), {2, 4}, 0);

  CHECK_THROWS_AS(ad::backward(ad::scale(x, 2.0F)), UsageError);
  CHECK_THROWS_AS(ad::backward(ad::sum(Tensor::from({2}, {1, 2}))), UsageError);
}

TEST_CASE("no-grad guard builds no graph") {
  auto x = Tensor::from({2}, {1, 2}, true);
  ad::Tensor y;
  {
    ad::NoGradGuard ng;
    y = ad::sum(ad::mul(x, x));
    CHECK_FALSE(ad::grad_enabled());
  }
  CHECK(ad::grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

namespace {

// Gives the leaf the gradient g via loss = Σ g ⊙ p.
void set_grad(Tensor& p, std::vector<float> g) {
  p.zero_grad();
  ad::backward(ad::dot(p, Tensor::from(p.shape(), std::move(g))));
}

}  // namespace

TEST_CASE("adamw") {
  SUBCASE("decay only") {
    std::vector<Tensor> p{Tensor::from({1}, {1}, true)};
    set_grad(p[0], {0});
    ad::AdamWState st;
    st.options.lr = 0.1;
    st.options.weight_decay = 0.01;
    ad::adamw_step(p, st);
    CHECK(p[0].data()[0] == static_cast<float>(0.999));
    CHECK(st.step == 1);
  }
  SUBCASE("no decay, zero grad") {
    std::vector<Tensor> p{Tensor::from({2}, {1, -2}, true)};
    set_grad(p[0], {0, 0});
    ad::AdamWState st;
    st.options.weight_decay = 0.0;
    ad::adamw_step(p, st);
    CHECK(p[0].data()[0] == 1.0F);
    CHECK(p[0].data()[1] == -2.0F);
  }
  SUBCASE("one step matches the hand update") {
    std::vector<Tensor> p{Tensor::from({1}, {1}, true)};
    set_grad(p[0], {1});
    ad::AdamWState st;
    st.options.lr = 0.01;
    ad::adamw_step(p, st);
    // m̂ = 1, v̂ = 1 after bias correction.
    const double decayed = 1.0 - 0.01 * 0.01 * 1.0;
    const double want = decayed - 0.01 * 1.0 / (1.0 + 1e-8);
    CHECK(std::abs(p[0].data()[0] - static_cast<float>(want)) <= 1e-8);
    REQUIRE(st.m.size() == 1);
    CHECK(st.m[0].size() == 1);
    CHECK(st.v[0].size() == 1);
  }
  SUBCASE("missing gradient") {
    std::vector<Tensor> p{Tensor::from({1}, {1}, true)};
    ad::AdamWState st;
    CHECK_THROWS_AS(ad::adamw_step(p, st), UsageError);
  }
}

TEST_CASE("identical seeds give bit-identical tensors") {
  std::mt19937_64 a(42), b(42);
  const auto x = Tensor::randn({5, 7}, 1.0F, a);
  const auto y = Tensor::randn({5, 7}, 1.0F, b);
  const auto fx = ad::softmax(ad::matmul(x, ad::transpose(x)), 1);
  const auto fy = ad::softmax(ad::matmul(y, ad::transpose(y)), 1);
  for (std::size_t i = 0; i < fx.numel(); ++i) CHECK(fx.data()[i] == fy.data()[i]);
}
