#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <doctest.h>

#include "mst/datapipe.hpp"
#include "mst/errors.hpp"
#include "temp_dir.hpp"

using namespace mst;
using namespace mst::datapipe;

namespace {

Volume random_volume(std::array<std::size_t, 3> shape, std::uint64_t seed, std::array<double, 3> spacing = {1, 1, 1}) {
  Volume v(shape[0], shape[1], shape[2]);
  v.spacing_mm = spacing;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n01(0.0F, 1.0F);
  for (float& x : v.data) x = n01(rng);
  return v;
}

// Trilinear sample with the resampling convention (centre alignment, edge clamp).
double sample(const Volume& v, double z, double y, double x) {
  auto axis = [](double c, std::size_t n) {
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(c));
    return std::tuple{lo, std::min(lo + 1, n - 1), c - static_cast<double>(lo)};
  };
  const auto [z0, z1, fz] = axis(z, v.shape[0]);
  const auto [y0, y1, fy] = axis(y, v.shape[1]);
  const auto [x0, x1, fx] = axis(x, v.shape[2]);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
        acc += w * v.at(dz ? z1 : z0, dy ? y1 : y0, dx ? x1 : x0);
      }
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("resample") {
  const auto v = random_volume({4, 5, 6}, 1, {2.0, 1.0, 1.0});
  const auto same = resample(v, {2.0, 1.0, 1.0});
  CHECK(same.shape == v.shape);
  CHECK(same.data == v.data);

  Volume c(5, 6, 7, 3.25F);
  const auto rc = resample(c, {0.7, 1.3, 2.0});
  CHECK(rc.shape == std::array<std::size_t, 3>{7, 5, 4});
  for (float x : rc.data) CHECK(x == 3.25F);

  Volume ramp(2, 3, 8);
  for (std::size_t z = 0; z < 2; ++z) {
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 8; ++x) ramp.at(z, y, x) = static_cast<float>(x);
    }
  }
  const auto coarse = resample(ramp, {1.0, 1.0, 2.0});
  REQUIRE(coarse.shape == std::array<std::size_t, 3>{2, 3, 4});
  CHECK(coarse.spacing_mm[2] == 2.0);
  for (std::size_t x = 0; x < 4; ++x) CHECK(std::abs(coarse.at(1, 1, x) - (2.0 * x + 0.5)) <= 1e-5);

  CHECK_THROWS_AS(resample(v, {0.0, 1.0, 1.0}), UsageError);
}

TEST_CASE("interpolation never leaves the input range") {
  const auto v = random_volume({5, 7, 6}, 3);
  const auto r = resample(v, {0.6, 0.45, 1.7});
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  for (float x : r.data) CHECK((x >= *lo && x <= *hi));
}

TEST_CASE("subtraction") {
  const auto pre = random_volume({3, 4, 5}, 4);
  const auto post = random_volume({3, 4, 5}, 5);
  const auto zero = subtraction(pre, pre);
  for (float x : zero.data) CHECK(x == 0.0F);
  const auto from_zero = subtraction(Volume(3, 4, 5), post);
  CHECK(from_zero.data == post.data);
  const auto d = subtraction(pre, post);
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    CHECK(d.data[i] == post.data[i] - pre.data[i]);
    CHECK(d.data[i] + pre.data[i] == doctest::Approx(post.data[i]).epsilon(1e-6));
  }
  const auto rev = subtraction(pre, post, SubtractionOrder::pre_minus_post);
  for (std::size_t i = 0; i < d.data.size(); ++i) CHECK(rev.data[i] == -d.data[i]);
  CHECK_THROWS_AS(subtraction(pre, random_volume({3, 4, 6}, 6)), UsageError);
  CHECK_THROWS_AS(subtraction(pre, random_volume({3, 4, 5}, 6, {2, 1, 1})), UsageError);
}

TEST_CASE("crop or pad") {
  auto v = random_volume({4, 6, 5}, 7);
  v.mask.emplace(v.voxels(), 0);
  for (std::size_t i = 0; i < v.voxels(); i += 7) (*v.mask)[i] = 1;
  v.refresh_lesion_slices();

  const auto same = crop_or_pad(v, v.shape, volume_center(v));
  CHECK(same.data == v.data);
  CHECK(*same.mask == *v.mask);

  const auto corner = crop_or_pad(v, {2, 4, 4}, {0, 0, 0});
  for (std::size_t z = 0; z < 2; ++z) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        const bool outside = z < 1 || y < 2 || x < 2;
        if (outside) CHECK(corner.at(z, y, x) == 0.0F);
        else CHECK(corner.at(z, y, x) == v.at(z - 1, y - 2, x - 2));
      }
    }
  }

  const std::array<std::size_t, 3> size{3, 3, 4};
  const std::array<std::ptrdiff_t, 3> centre{2, 1, 4};
  const auto w = crop_or_pad(v, size, centre);
  std::size_t direct = 0;
  for (std::ptrdiff_t z = 1; z < 4; ++z) {
    for (std::ptrdiff_t y = 0; y < 3; ++y) {
      for (std::ptrdiff_t x = 2; x < 6; ++x) {
        if (y < 6 && x < 5) direct += (*v.mask)[v.index(z, y, x)];
      }
    }
  }
  CHECK(static_cast<std::size_t>(std::count(w.mask->begin(), w.mask->end(), 1)) == direct);
  Volume check = w;
  check.refresh_lesion_slices();
  CHECK(check.lesion_slices == w.lesion_slices);
}

TEST_CASE("duke recipe matches a fused single-pass oracle") {
  const auto pre = random_volume({5, 9, 11}, 8, {2.5, 0.9, 0.8});
  const auto post = random_volume({5, 9, 11}, 9, {2.5, 0.9, 0.8});
  const std::array<double, 3> target{3.0, 0.7, 0.7};
  const std::array<std::size_t, 3> size{3, 8, 8};
  const auto rs_pre = resample(pre, target);
  const auto rs_post = resample(post, target);
  const auto sub = subtraction(rs_pre, rs_post);
  const auto center = volume_center(sub);
  const auto out = crop_or_pad(sub, size, center);

  for (std::size_t z = 0; z < size[0]; ++z) {
    for (std::size_t y = 0; y < size[1]; ++y) {
      for (std::size_t x = 0; x < size[2]; ++x) {
        const std::array<std::ptrdiff_t, 3> r{center[0] - 1 + static_cast<std::ptrdiff_t>(z), center[1] - 4 + static_cast<std::ptrdiff_t>(y),
                                              center[2] - 4 + static_cast<std::ptrdiff_t>(x)};
        double want = 0.0;
        bool inside = true;
        for (int a = 0; a < 3; ++a) inside = inside && r[a] >= 0 && r[a] < static_cast<std::ptrdiff_t>(sub.shape[a]);
        if (inside) {
          std::array<double, 3> c{};
          for (int a = 0; a < 3; ++a) c[a] = (static_cast<double>(r[a]) + 0.5) * target[a] / pre.spacing_mm[a] - 0.5;
          want = sample(post, c[0], c[1], c[2]) - sample(pre, c[0], c[1], c[2]);
        }
        CHECK(std::abs(out.at(z, y, x) - want) <= 1e-5);
      }
    }
  }
}

TEST_CASE("consensus mask") {
  RaterAnnotation a;
  a.rater_masks = {{1, 1, 0}, {1, 0, 0}, {0, 0, 0}, {0, 0, 1}};
  CHECK(consensus_mask(a) == std::vector<std::uint8_t>{1, 0, 0});
  RaterAnnotation same;
  same.rater_masks = {{1, 0, 1, 1}, {1, 0, 1, 1}, {1, 0, 1, 1}};
  CHECK(consensus_mask(same) == same.rater_masks[0]);
  CHECK_THROWS_AS(consensus_mask(RaterAnnotation{}), UsageError);

  // Adding a vote never removes a voxel.
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    RaterAnnotation r;
    r.rater_masks.assign(4, std::vector<std::uint8_t>(20));
    for (auto& m : r.rater_masks) {
      for (auto& x : m) x = rng() % 2;
    }
    const auto before = consensus_mask(r);
    const std::size_t rater = rng() % 4, voxel = rng() % 20;
    r.rater_masks[rater][voxel] = 1;
    const auto after = consensus_mask(r);
    for (std::size_t i = 0; i < 20; ++i) CHECK(after[i] >= before[i]);
  }
}

TEST_CASE("dignity labels") {
  CHECK(dignity_label({4, 5, 4, 4}) == Dignity::malignant);
  CHECK(dignity_label({3, 3, 3, 3}) == Dignity::excluded);
  CHECK(dignity_label({1, 2, 2, 1}) == Dignity::benign);
  CHECK(dignity_label({2, 4, 3}) == Dignity::excluded);
  CHECK(dignity_label({3, 4}) == Dignity::malignant);
  CHECK_THROWS_AS(dignity_label({0, 3}), ValidationError);
  CHECK_THROWS_AS(dignity_label({6}), ValidationError);
}

TEST_CASE("small nodule exclusion") {
  std::vector<std::uint8_t> single(27, 0);
  single[13] = 1;
  CHECK(equivalent_diameter_mm(single, {1, 1, 1}) == doctest::Approx(std::cbrt(6.0 / M_PI)));
  CHECK(equivalent_diameter_mm(single, {1, 1, 1}) == doctest::Approx(1.2407).epsilon(1e-4));
  CHECK_FALSE(exclude_small(single, {1, 1, 1}));

  // A voxel whose volume is that of a 3 mm sphere sits exactly on the boundary.
  const double side = std::cbrt(M_PI * 27.0 / 6.0);
  CHECK(exclude_small(single, {side, side, side}));

  std::vector<std::uint8_t> ball(21 * 21 * 21, 0);
  for (int z = 0; z < 21; ++z) {
    for (int y = 0; y < 21; ++y) {
      for (int x = 0; x < 21; ++x) {
        if ((z - 10) * (z - 10) + (y - 10) * (y - 10) + (x - 10) * (x - 10) <= 25) ball[(z * 21 + y) * 21 + x] = 1;
      }
    }
  }
  CHECK(exclude_small(ball, {1, 1, 1}));
  CHECK_FALSE(exclude_small(std::vector<std::uint8_t>(8, 0), {1, 1, 1}));
}

TEST_CASE("augmentation") {
  auto v = random_volume({4, 16, 16}, 11);
  v.mask.emplace(v.voxels(), 0);
  for (std::size_t y = 3; y < 6; ++y) {
    for (std::size_t x = 2; x < 5; ++x) (*v.mask)[v.index(1, y, x)] = 1;
  }
  v.refresh_lesion_slices();

  const auto a = augment(v, 99);
  const auto b = augment(v, 99);
  CHECK(a.data == b.data);
  CHECK(a.mask == b.mask);

  const auto twice = invert_signal(invert_signal(v));
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(twice.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));

  auto centroid_x = [](const Volume& u) {
    double sx = 0.0, n = 0.0;
    for (std::size_t z = 0; z < u.depth(); ++z) {
      for (std::size_t y = 0; y < u.height(); ++y) {
        for (std::size_t x = 0; x < u.width(); ++x) {
          if ((*u.mask)[u.index(z, y, x)]) {
            sx += static_cast<double>(x);
            n += 1.0;
          }
        }
      }
    }
    return sx / n;
  };
  const auto f = flip(v, 2);
  CHECK(centroid_x(f) == doctest::Approx(15.0 - centroid_x(v)));
  CHECK(f.lesion_slices == v.lesion_slices);
  const auto fz = flip(v, 0);
  CHECK(fz.lesion_slices == std::vector<int>{2});

  AugmentConfig off{0, 0, 0.05, 0, 10, 0};
  CHECK(augment(v, 5, off).data == v.data);
  const auto r0 = rotate_inplane(v, 0.0);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(r0.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
}

TEST_CASE("stratified split") {
  std::vector<int> labels(100, 0);
  std::fill(labels.begin(), labels.begin() + 30, 1);
  const auto s = stratified_split(labels, {0.8, 0.0, 0.2}, 3);
  std::size_t test_pos = 0, test_neg = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (s[i] == Split::test) (labels[i] ? test_pos : test_neg)++;
  }
  CHECK(test_pos == 6);
  CHECK(test_neg == 14);
  CHECK(stratified_split(labels, {0.8, 0.0, 0.2}, 3) == s);
  CHECK_THROWS_AS(stratified_split(std::vector<int>(10, 1), {0.8, 0.0, 0.2}, 3), UsageError);
  CHECK_THROWS_AS(stratified_split(labels, {0.8, 0.1, 0.2}, 3), ConfigError);
}

TEST_CASE("weighted sampling balances classes") {
  std::vector<int> labels(100, 0);
  std::fill(labels.begin(), labels.begin() + 10, 1);
  const auto order = weighted_sample_order(labels, 17, 10000);
  const auto pos = std::count_if(order.begin(), order.end(), [&](std::size_t i) { return labels[i] == 1; });
  CHECK(std::abs(static_cast<double>(pos) / 10000.0 - 0.5) <= 0.02);
  CHECK(weighted_sample_order(labels, 17, 50) == weighted_sample_order(labels, 17, 50));
  CHECK_THROWS_AS(weighted_sample_order(std::vector<int>(5, 0), 1, 10), UsageError);
}

TEST_CASE("volume file round trip") {
  testing::TempDir dir;
  auto v = random_volume({3, 4, 5}, 21, {3.0, 0.7, 0.7000000001});
  v.label = 1;
  v.mask.emplace(v.voxels(), 0);
  (*v.mask)[7] = 1;
  v.refresh_lesion_slices();
  write_volume(dir / "a.mstv", v);
  const auto r = read_volume(dir / "a.mstv");
  CHECK(r.shape == v.shape);
  CHECK(r.spacing_mm == v.spacing_mm);
  CHECK(r.data == v.data);
  CHECK(r.mask == v.mask);
  CHECK(r.label == v.label);
  CHECK(r.lesion_slices == v.lesion_slices);
  CHECK(r.kind == "image");

  const auto size = std::filesystem::file_size(dir / "a.mstv");
  std::filesystem::resize_file(dir / "a.mstv", size - 3);
  CHECK_THROWS_AS(read_volume(dir / "a.mstv"), FormatError);

  {
    std::ofstream bad(dir / "b.mstv", std::ios::binary);
    bad << "MSTX0000";
  }
  try {
    read_volume(dir / "b.mstv");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("manifest round trip") {
  testing::TempDir dir;
  DatasetManifest m;
  m.entries.push_back({dir / "x" / "a.mstv", 1, Split::train, std::nullopt});
  m.entries.push_back({dir / "b.mstv", 0, Split::test, dir / "f" / "b.mstf"});
  std::filesystem::create_directories(dir / "x");
  std::filesystem::create_directories(dir / "f");
  for (const char* name : {"x/a.mstv", "b.mstv", "f/b.mstf"}) std::ofstream(dir / name) << "";
  write_manifest(dir / "manifest.jsonl", m);
  const auto r = read_manifest(dir / "manifest.jsonl");
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].volume_path.lexically_normal() == m.entries[0].volume_path.lexically_normal());
  CHECK(r.entries[1].features_path->lexically_normal() == m.entries[1].features_path->lexically_normal());
  CHECK(r.entries[1].split == Split::test);
  CHECK(r.indices(Split::train) == std::vector<std::size_t>{0});

  std::filesystem::remove(dir / "b.mstv");
  CHECK_THROWS_AS(read_manifest(dir / "manifest.jsonl"), ConfigError);
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.count = 6;
  cfg.shape = {8, 32, 32};
  cfg.lesion_radius_min_px = 3;
  cfg.lesion_radius_max_px = 5;
  cfg.distractor_radius_px = 4;
  cfg.split = {0.5, 0.0, 0.5};
  cfg.seed = 4;

  for (std::size_t i = 0; i < 10; ++i) {
    const auto pos = synth_case(cfg, i, true);
    REQUIRE(pos.mask);
    CHECK_FALSE(pos.lesion_slices.empty());
    CHECK(pos.lesion_slices.size() <= 3);
    Volume copy = pos;
    copy.refresh_lesion_slices();
    CHECK(copy.lesion_slices == pos.lesion_slices);
    // Inside-lesion mean exceeds background by roughly the configured contrast.
    double in = 0.0, out = 0.0, n_in = 0.0, n_out = 0.0;
    for (std::size_t k = 0; k < pos.voxels(); ++k) {
      if ((*pos.mask)[k]) {
        in += pos.data[k];
        n_in += 1;
      } else {
        out += pos.data[k];
        n_out += 1;
      }
    }
    CHECK(in / n_in - out / n_out >= 2.0 * cfg.noise_sigma);

    const auto neg = synth_case(cfg, i, false);
    CHECK_FALSE(neg.mask);
    CHECK(neg.lesion_slices.empty());
  }
  const auto a = synth_case(cfg, 3, true);
  const auto b = synth_case(cfg, 3, true);
  CHECK(a.data == b.data);

  testing::TempDir dir;
  const auto m = synth_gen(cfg, dir.path());
  CHECK(m.entries.size() == 6);
  const auto r = read_manifest(dir / "manifest.jsonl");
  CHECK(r.entries.size() == 6);
  const int positives = std::accumulate(r.entries.begin(), r.entries.end(), 0, [](int s, const ManifestEntry& e) { return s + e.label; });
  CHECK(positives == 3);

  auto bad = cfg;
  bad.lesion_radius_max_px = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  nlohmann::json j = cfg.to_json();
  CHECK(SynthConfig::from_json(j).to_json() == j);
  j.erase("noise_sigma");
  CHECK_THROWS_AS(SynthConfig::from_json(j), ConfigError);
}
