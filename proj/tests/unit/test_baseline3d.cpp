#include <algorithm>

#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "mst/baseline3d.hpp"
#include "mst/checkpoint.hpp"
#include "mst/errors.hpp"
#include "temp_dir.hpp"

using namespace mst;
using namespace mst::cnn;

namespace {

Cnn3dConfig toy_config() {
  Cnn3dConfig cfg;
  cfg.stem_width = 2;
  cfg.widths = {2, 3};
  cfg.input_shape = {4, 6, 6};
  return cfg;
}

Volume lesion_volume(std::array<std::size_t, 3> shape, std::size_t cz, std::size_t cy, std::size_t cx) {
  Volume v(shape[0], shape[1], shape[2]);
  for (std::size_t z = 0; z < shape[0]; ++z) {
    for (std::size_t y = 0; y < shape[1]; ++y) {
      for (std::size_t x = 0; x < shape[2]; ++x) {
        const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
        v.at(z, y, x) = static_cast<float>(3.0 * std::exp(-d2 / 4.0));
      }
    }
  }
  return v;
}

}  // namespace

TEST_CASE("cnn shapes and head bias") {
  Cnn3dModel model(Cnn3dConfig{}, 1);
  CHECK(model.config().feature_shape() == std::array<std::size_t, 3>{1, 2, 2});
  for (auto& [name, t] : model.named_parameters()) {
    if (name == "cnn.head_w") std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0F);
    if (name == "cnn.head_b") {
      t.mutable_data()[0] = 0.3F;
      t.mutable_data()[1] = -1.25F;
    }
  }
  const auto out = model.forward(Volume(32, 64, 64));
  CHECK(out.logits.shape() == ad::Shape{1, 2});
  CHECK(out.logits.data()[0] == 0.3F);
  CHECK(out.logits.data()[1] == -1.25F);
  CHECK(out.activations.shape() == ad::Shape{64, 1, 2, 2});
  CHECK_THROWS_AS(model.forward(Volume(32, 64, 63)), DimensionError);

  auto bad = Cnn3dConfig{};
  bad.widths.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(Cnn3dConfig::from_json(Cnn3dConfig{}.to_json()).to_json() == Cnn3dConfig{}.to_json());
}

TEST_CASE("cnn gradient matches finite differences") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 3; ++rep) {
    Cnn3dModel model(toy_config(), 10 + rep);
    // Zero-initialised biases can leave a pre-activation at exactly 0, where
    // ReLU has no two-sided derivative.
    std::uniform_real_distribution<float> bias(0.05F, 0.2F);
    for (auto& [name, t] : model.named_parameters()) {
      if (name.ends_with("bias")) {
        for (float& b : t.mutable_data()) b = bias(rng);
      }
    }
    std::vector<ad::Tensor> inputs{testing::random_leaf({1, 4, 6, 6}, rng)};
    for (const auto& p : model.parameters()) inputs.push_back(p);
    const auto r = testing::grad_check(
        [&model](const std::vector<ad::Tensor>& in) { return model.forward(in[0]).logits; }, inputs, rng);
    CHECK(r.rel_error <= 1e-3);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("cnn is deterministic and not translation invariant") {
  const auto cfg = toy_config();
  const auto v = lesion_volume(cfg.input_shape, 1, 2, 2);
  const auto a = Cnn3dModel(cfg, 5).forward(v).logits;
  const auto b = Cnn3dModel(cfg, 5).forward(v).logits;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  // Shift by the stem pool stride (2 voxels) along x.
  const auto shifted = lesion_volume(cfg.input_shape, 1, 2, 4);
  const auto c = Cnn3dModel(cfg, 5).forward(shifted).logits;
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  Cnn3dModel model(toy_config(), 6);
  nlohmann::json header = {{"kind", "cnn3d"}, {"note", "x"}};
  write_checkpoint(dir / "m.mstc", header, model.named_parameters());
  const auto ck = read_checkpoint(dir / "m.mstc");
  CHECK(ck.header["kind"] == "cnn3d");
  CHECK(ck.header["params"].size() == model.named_parameters().size());

  Cnn3dModel other(toy_config(), 7);
  load_parameters(ck.params, other.named_parameters());
  const auto v = lesion_volume(toy_config().input_shape, 2, 3, 3);
  const auto a = model.forward(v).logits;
  const auto b = other.forward(v).logits;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  Cnn3dConfig wider = toy_config();
  wider.widths = {2, 4};
  Cnn3dModel mismatch(wider, 8);
  CHECK_THROWS(load_parameters(ck.params, mismatch.named_parameters()));

  std::filesystem::resize_file(dir / "m.mstc", std::filesystem::file_size(dir / "m.mstc") - 4);
  CHECK_THROWS_AS(read_checkpoint(dir / "m.mstc"), FormatError);

  const auto snap = snapshot(model.named_parameters());
  model.named_parameters()[0].second.mutable_data()[0] += 1.0F;
  restore(model.named_parameters(), snap);
  CHECK(model.named_parameters()[0].second.data()[0] == snap[0][0]);
}
