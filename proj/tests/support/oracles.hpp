#pragma once

// Brute-force reference implementations used as test oracles.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace mst::testing {

inline double psi(double pos, double neg) { return pos > neg ? 1.0 : (pos == neg ? 0.5 : 0.0); }

/// AUC by exhaustive pair counting.
inline double pair_count_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      wins += psi(scores[i], scores[j]);
      pairs += 1.0;
    }
  }
  return wins / pairs;
}

/// DeLong covariance from explicitly enumerated structural components, O(n²).
inline std::array<std::array<double, 2>, 2> naive_delong_covariance(std::span<const double> a, std::span<const double> b,
                                                                    std::span<const int> labels) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());
  const std::array<std::span<const double>, 2> sc{a, b};
  std::array<std::vector<double>, 2> v10, v01;
  for (int r = 0; r < 2; ++r) {
    for (std::size_t i : pos) {
      double s = 0.0;
      for (std::size_t j : neg) s += psi(sc[r][i], sc[r][j]);
      v10[r].push_back(s / n);
    }
    for (std::size_t j : neg) {
      double s = 0.0;
      for (std::size_t i : pos) s += psi(sc[r][i], sc[r][j]);
      v01[r].push_back(s / m);
    }
  }
  auto cov = [](const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) c += (x[i] - mx) * (y[i] - my);
    return c / static_cast<double>(x.size() - 1);
  };
  std::array<std::array<double, 2>, 2> out{};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) out[r][c] = cov(v10[r], v10[c]) / m + cov(v01[r], v01[c]) / n;
  }
  return out;
}

/// Random scored set with both classes and injected ties (scores on a coarse grid part of the time).
struct RandomScores {
  std::vector<double> a, b;
  std::vector<int> labels;
};

inline RandomScores random_scores(std::mt19937_64& rng, std::size_t n_max) {
  std::uniform_int_distribution<std::size_t> size(4, n_max);
  const std::size_t n = size(rng);
  RandomScores r;
  r.labels.assign(n, 0);
  std::bernoulli_distribution coin(0.5);
  for (auto& l : r.labels) l = coin(rng) ? 1 : 0;
  r.labels[0] = 1;
  r.labels[1] = 0;
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool coarse = coin(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double x = noise(rng) + 0.8 * r.labels[i];
    double y = 0.6 * x + 0.8 * noise(rng);
    if (coarse) {
      x = std::round(x * 2.0) / 2.0;
      y = std::round(y * 2.0) / 2.0;
    }
    r.a.push_back(x);
    r.b.push_back(y);
  }
  return r;
}

}  // namespace mst::testing
