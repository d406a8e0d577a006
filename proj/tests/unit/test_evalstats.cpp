#include <algorithm>
#include <cmath>
#include <limits>

#include <doctest.h>

#include "../support/oracles.hpp"
#include "mst/errors.hpp"
#include "mst/evalstats.hpp"

using namespace mst;
using stats::ScoredSet;

TEST_CASE("midranks") {
  auto eq = [](const std::vector<double>& got, const std::vector<double>& want) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
  };
  eq(stats::midranks(std::vector<double>{1, 2, 2, 3}), {1, 2.5, 2.5, 4});
  eq(stats::midranks(std::vector<double>{1, 2, 3, 4, 5}), {1, 2, 3, 4, 5});
  eq(stats::midranks(std::vector<double>{7, 7, 7, 7}), {2.5, 2.5, 2.5, 2.5});
  eq(stats::midranks(std::vector<double>{3, 1, 2}), {3, 1, 2});
}

TEST_CASE("roc auc") {
  CHECK(stats::roc_auc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 1.0);
  CHECK(stats::roc_auc({{0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}}) == 0.0);
  CHECK(stats::roc_auc({{0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}) == 0.75);
  CHECK_THROWS_AS(stats::roc_auc({{0.1, 0.2}, {1, 1}}), NumericError);
  CHECK_THROWS_AS(stats::roc_auc({{0.1, 0.2}, {1}}), UsageError);
}

TEST_CASE("roc auc equals pair counting") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto r = testing::random_scores(rng, 200);
    CHECK(std::abs(stats::roc_auc({r.a, r.labels}) - testing::pair_count_auc(r.a, r.labels)) <= 1e-12);
  }
}

TEST_CASE("roc auc is invariant under monotone transforms") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = testing::random_scores(rng, 100);
    std::vector<double> t;
    for (double x : r.a) t.push_back(std::exp(3.0 * x) + 2.0);
    CHECK(stats::roc_auc({r.a, r.labels}) == stats::roc_auc({t, r.labels}));
  }
}

TEST_CASE("delong matches the naive structural components") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const auto r = testing::random_scores(rng, 100);
    const auto fast = stats::delong_covariance(r.a, r.b, r.labels);
    const auto slow = testing::naive_delong_covariance(r.a, r.b, r.labels);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(std::abs(fast[i][j] - slow[i][j]) <= 1e-10);
    }
    const auto d = stats::delong_test(r.a, r.b, r.labels);
    CHECK(std::abs(d.variance - (slow[0][0] + slow[1][1] - 2 * slow[0][1])) <= 1e-10);
    CHECK((d.p >= 0.0 && d.p <= 1.0));
    const auto swapped = stats::delong_test(r.b, r.a, r.labels);
    CHECK(swapped.z == doctest::Approx(-d.z).epsilon(1e-12));
    CHECK(std::abs(swapped.p - d.p) <= 1e-12);
  }
}

TEST_CASE("delong degenerate and errors") {
  const std::vector<double> a{0.1, 0.7, 0.3, 0.9, 0.5};
  const std::vector<int> y{0, 1, 0, 1, 1};
  const auto d = stats::delong_test(a, a, y);
  CHECK(d.z == 0.0);
  CHECK(d.p == 1.0);
  CHECK_THROWS_AS(stats::delong_test(a, std::vector<double>{0.1, 0.2}, y), UsageError);
  CHECK_THROWS(stats::delong_test(a, a, std::vector<int>{1, 1, 1, 1, 1}));
}

TEST_CASE("bootstrap") {
  const ScoredSet sep{{0.1, 0.2, 0.3, 0.7, 0.8, 0.9}, {0, 0, 0, 1, 1, 1}};
  const auto b = stats::bootstrap_auc(sep, 1000, 4);
  CHECK(b.mean == 1.0);
  CHECK(b.sd == 0.0);
  CHECK(b.ci_low == 1.0);
  CHECK(b.ci_high == 1.0);
  CHECK(b.iterations == 1000);

  std::mt19937_64 rng(5);
  const auto r = testing::random_scores(rng, 80);
  const ScoredSet s{r.a, r.labels};
  const auto x = stats::bootstrap_auc(s, 200, 9);
  const auto y = stats::bootstrap_auc(s, 200, 9);
  CHECK(x.mean == y.mean);
  CHECK(x.sd == y.sd);
  CHECK(x.ci_low == y.ci_low);
  CHECK(x.ci_high == y.ci_high);
  CHECK(x.ci_low <= x.ci_high);

  const auto many = stats::bootstrap_auc(s, 10000, 1);
  CHECK(std::abs(many.mean - stats::roc_auc(s)) <= 0.01);
}

TEST_CASE("bootstrap sd tracks the sampling sd") {
  // Binormal scores with separation 1.19 give a true AUC of about 0.8.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&] {
    ScoredSet s;
    for (int i = 0; i < 200; ++i) {
      const int y = i % 2;
      s.labels.push_back(y);
      s.scores.push_back(n01(rng) + 1.19 * y);
    }
    return s;
  };
  std::vector<double> aucs;
  for (int rep = 0; rep < 200; ++rep) aucs.push_back(stats::roc_auc(draw()));
  double m = 0.0;
  for (double a : aucs) m += a;
  m /= static_cast<double>(aucs.size());
  double var = 0.0;
  for (double a : aucs) var += (a - m) * (a - m);
  const double sampling_sd = std::sqrt(var / static_cast<double>(aucs.size() - 1));
  CHECK(std::abs(m - 0.8) < 0.02);
  const auto boot = stats::bootstrap_auc(draw(), 1000, 7);
  CHECK(std::abs(boot.sd - sampling_sd) <= 0.25 * sampling_sd);
}

TEST_CASE("confusion matrix") {
  const ScoredSet s{{0.1, 0.6, 0.4, 0.9, 0.5}, {0, 0, 1, 1, 1}};
  const auto c = stats::confusion_matrix(s);
  CHECK(c.tn == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tp == 2);
  const auto perfect = stats::confusion_matrix({{0.1, 0.2, 0.8}, {0, 0, 1}});
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);
  const auto all = stats::confusion_matrix(s, -std::numeric_limits<double>::infinity());
  CHECK(all.tp + all.fp == 5);

  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = testing::random_scores(rng, 60);
    const auto got = stats::confusion_matrix({r.a, r.labels}, 0.3);
    stats::Confusion want;
    for (std::size_t i = 0; i < r.a.size(); ++i) {
      const bool pred = r.a[i] >= 0.3;
      if (r.labels[i] == 1) (pred ? want.tp : want.fn)++;
      else (pred ? want.fp : want.tn)++;
    }
    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.tn == want.tn);
    CHECK(got.fn == want.fn);
  }
}

TEST_CASE("metric report") {
  const ScoredSet s{{0.1, 0.6, 0.4, 0.9, 0.5}, {0, 0, 1, 1, 1}};
  const auto j = stats::metric_report(s, 100, 1);
  CHECK(j["auc"].get<double>() == stats::roc_auc(s));
  CHECK(j["n"].get<int>() == 5);
  CHECK(j["ci95"].size() == 2);
  CHECK(j["confusion"]["tp"].get<int>() == 2);
}
