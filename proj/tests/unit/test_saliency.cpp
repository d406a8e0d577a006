#include <algorithm>
#include <cmath>
#include <numeric>

#include <doctest.h>

#include "mst/errors.hpp"
#include "mst/saliency.hpp"

using namespace mst;
using namespace mst::saliency;

namespace {

std::vector<float> normalized(std::vector<float> v) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  for (float& x : v) x = static_cast<float>(x / total);
  return v;
}

SaliencyVolume map_of(std::array<std::size_t, 3> shape, float fill = 0.0F) {
  SaliencyVolume s;
  s.shape = shape;
  s.values.assign(shape[0] * shape[1] * shape[2], fill);
  return s;
}

}  // namespace

TEST_CASE("fuse attention") {
  const auto two = fuse_attention(std::vector<float>{0.25F, 0.75F}, std::vector<float>{1.0F, 1.0F}, 1, 1, 3, 3);
  CHECK(two.raw == std::vector<float>{0.25F, 0.75F});
  const auto mass = slice_masses(two.volume);
  CHECK(mass[0] / (mass[0] + mass[1]) == doctest::Approx(0.25));
  CHECK(*std::max_element(two.volume.values.begin(), two.volume.values.end()) == 1.0F);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<float> w(5), patch(5 * 9);
    for (float& x : w) x = u(rng);
    w[2] = 0.0F;
    w = normalized(w);
    for (std::size_t s = 0; s < 5; ++s) {
      std::vector<float> g(9);
      for (float& x : g) x = u(rng);
      g = normalized(g);
      std::copy(g.begin(), g.end(), patch.begin() + s * 9);
    }
    const auto f = fuse_attention(w, patch, 3, 3, 7, 5);
    CHECK(std::accumulate(f.raw.begin(), f.raw.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(f.volume.shape == std::array<std::size_t, 3>{5, 7, 5});
    for (std::size_t i = 0; i < 35; ++i) CHECK(f.volume.values[2 * 35 + i] == 0.0F);
    for (float v : f.volume.values) CHECK(v >= 0.0F);
    CHECK(*std::max_element(f.volume.values.begin(), f.volume.values.end()) == doctest::Approx(1.0));
  }

  CHECK_THROWS_AS(fuse_attention(std::vector<float>{0.5F, 0.5F}, std::vector<float>(12, 0.25F), 2, 2, 4, 4), DimensionError);
  CHECK_THROWS_AS(fuse_attention(std::vector<float>{0.5F, 0.6F}, std::vector<float>(8, 0.25F), 2, 2, 4, 4), UsageError);
  CHECK_THROWS_AS(fuse_attention(std::vector<float>{1.0F}, std::vector<float>{}, 0, 0, 4, 4), UsageError);
}

TEST_CASE("bilinear interpolation") {
  CHECK(interpolate_bilinear(std::vector<float>{0.0F, 1.0F}, 1, 2, 1, 3) == std::vector<float>{0.0F, 0.5F, 1.0F});

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  std::vector<float> g(16);
  for (float& x : g) x = u(rng);
  CHECK(interpolate_bilinear(g, 4, 4, 4, 4) == g);

  // Per-pixel weight formula: each node contributes max(0, 1 - |pos - node|) per axis.
  const auto out = interpolate_bilinear(g, 4, 4, 9, 9);
  for (std::size_t y = 0; y < 9; ++y) {
    for (std::size_t x = 0; x < 9; ++x) {
      const double py = y * 3.0 / 8.0, px = x * 3.0 / 8.0;
      double want = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        for (std::size_t i = 0; i < 4; ++i) {
          want += std::max(0.0, 1.0 - std::abs(py - j)) * std::max(0.0, 1.0 - std::abs(px - i)) * g[j * 4 + i];
        }
      }
      CHECK(std::abs(out[y * 9 + x] - want) <= 1e-6);
    }
  }
  CHECK(out[0] == g[0]);
  CHECK(out[80] == g[15]);

  CHECK_THROWS_AS(interpolate_bilinear(g, 4, 4, 0, 3), UsageError);
  CHECK_THROWS_AS(interpolate_bilinear(g, 0, 4, 3, 3), UsageError);
}

TEST_CASE("trilinear interpolation of a constant stays constant") {
  const std::vector<float> g(2 * 3 * 4, 0.4F);
  for (float v : interpolate_trilinear(g, {2, 3, 4}, {5, 7, 9})) CHECK(v == doctest::Approx(0.4F));
}

TEST_CASE("slice-only saliency") {
  const auto s = slice_only_saliency(std::vector<float>{0.2F, 0.8F}, 2, 2);
  CHECK(s.values == std::vector<float>{0.25F, 0.25F, 0.25F, 0.25F, 1.0F, 1.0F, 1.0F, 1.0F});
  CHECK(s.source == Source::mst_slice_only);
}

TEST_CASE("slice correctness") {
  auto s = map_of({32, 4, 4});
  std::fill_n(s.values.begin() + 12 * 16, 16, 1.0F);
  CHECK(slice_correctness(s, {12}));
  CHECK(slice_correctness(s, {13}));
  CHECK_FALSE(slice_correctness(s, {14}));

  auto far = map_of({32, 4, 4});
  std::fill_n(far.values.begin() + 20 * 16, 16, 1.0F);
  CHECK_FALSE(slice_correctness(far, {12}));

  // Ties resolve to the lowest slice index.
  const auto uniform = map_of({32, 4, 4}, 0.5F);
  CHECK(slice_correctness(uniform, {0}));
  CHECK(slice_correctness(uniform, {1}));
  CHECK_FALSE(slice_correctness(uniform, {2}));
  CHECK_FALSE(slice_correctness(uniform, {31}));

  CHECK_THROWS_AS(slice_correctness(map_of({4, 2, 2}), {1}), UsageError);
  CHECK_THROWS_AS(slice_correctness(s, {}), UsageError);
}

TEST_CASE("lesion correctness") {
  auto s = map_of({6, 10, 10}, 0.1F);
  std::vector<std::uint8_t> mask(600, 0);
  for (std::size_t y = 4; y < 7; ++y) {
    for (std::size_t x = 4; x < 7; ++x) mask[(3 * 10 + y) * 10 + x] = 1;
  }
  auto peak = [&](std::size_t z, std::size_t y, std::size_t x) {
    auto t = s;
    t.values[(z * 10 + y) * 10 + x] = 1.0F;
    return lesion_correctness(t, mask);
  };
  CHECK(peak(3, 5, 5));
  CHECK(peak(3, 5, 8));   // two voxels outside
  CHECK(peak(1, 5, 5));
  CHECK_FALSE(peak(3, 5, 9));
  CHECK_FALSE(peak(0, 5, 5));
  CHECK_FALSE(peak(3, 8, 8));  // diagonal distance sqrt(8)

  // Ties resolve to the lowest flat index, here voxel 0.
  CHECK_FALSE(lesion_correctness(s, mask));
  CHECK_THROWS_AS(lesion_correctness(s, std::vector<std::uint8_t>(600, 0)), UsageError);
  CHECK_THROWS_AS(lesion_correctness(s, std::vector<std::uint8_t>(10, 1)), DimensionError);
  CHECK_THROWS_AS(lesion_correctness(map_of({6, 10, 10}), mask), UsageError);
}

TEST_CASE("gradient-activation map") {
  cnn::Cnn3dConfig cfg;
  cfg.stem_width = 2;
  cfg.widths = {3, 4};
  cfg.input_shape = {4, 8, 8};
  cnn::Cnn3dModel model(cfg, 3);
  Volume v(4, 8, 8);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n01(0.0F, 1.0F);
  for (float& x : v.data) x = n01(rng);

  // The head is linear after mean pooling, so G[c, p] = W[c, k] / P and the
  // raw map is Σ_c A[c, p] · W[c, k] / P.
  const auto raw = grad_activation_raw(model, v, 1);
  const auto out = model.forward(v);
  const auto a = out.activations.data();
  const std::size_t channels = out.activations.dim(0);
  const std::size_t positions = a.size() / channels;
  REQUIRE(raw.size() == positions);
  const auto w = model.named_parameters()[model.named_parameters().size() - 2].second.data();
  for (std::size_t p = 0; p < positions; ++p) {
    double want = 0.0;
    for (std::size_t c = 0; c < channels; ++c) want += static_cast<double>(a[c * positions + p]) * w[c * 2 + 1] / static_cast<double>(positions);
    CHECK(raw[p] == doctest::Approx(want).epsilon(1e-5).scale(1e-6));
  }

  const auto map = grad_activation_map(model, v, 1);
  CHECK(map.shape == v.shape);
  CHECK(map.source == Source::grad_activation);
  for (float x : map.values) CHECK(x >= 0.0F);

  for (auto& [name, t] : model.named_parameters()) {
    if (name == "cnn.head_w") std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0F);
  }
  const auto zero = grad_activation_map(model, v, 1);
  CHECK(std::all_of(zero.values.begin(), zero.values.end(), [](float x) { return x == 0.0F; }));
  CHECK_THROWS_AS(grad_activation_map(model, v, 2), UsageError);
  CHECK_THROWS_AS(grad_activation_map(model, Volume(4, 8, 9), 1), DimensionError);
}
