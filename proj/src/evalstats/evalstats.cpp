#include "mst/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mst/errors.hpp"

namespace mst::stats {

void ScoredSet::validate() const {
  if (scores.size() != labels.size()) throw UsageError("scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw UsageError("labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite score");
  }
}

std::size_t ScoredSet::positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
std::size_t ScoredSet::negatives() const { return labels.size() - positives(); }

std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    // Positions i..j-1 (0-based) are tied: average of ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double roc_auc(const ScoredSet& s) {
  s.validate();
  const auto m = static_cast<double>(s.positives());
  const auto n = static_cast<double>(s.negatives());
  if (m == 0 || n == 0) throw NumericError("AUC is undefined when only one class is present");
  const auto ranks = midranks(s.scores);
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (s.labels[i] == 1) positive_rank_sum += ranks[i];
  }
  return (positive_rank_sum - m * (m + 1.0) / 2.0) / (m * n);
}

namespace {

struct Components {
  std::array<double, 2> auc{};
  std::array<std::vector<double>, 2> v_pos;  // per positive case
  std::array<std::vector<double>, 2> v_neg;  // per negative case
};

Components structural_components(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
  if (a.size() != labels.size() || b.size() != labels.size()) throw UsageError("delong: score/label length mismatch");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos.push_back(i);
    } else if (labels[i] == 0) {
      neg.push_back(i);
    } else {
      throw UsageError("delong: labels must be 0 or 1");
    }
  }
  if (pos.empty() || neg.empty()) throw UsageError("delong: both classes must be present");
  const auto m = static_cast<double>(pos.size());
  const auto n = static_cast<double>(neg.size());
  Components c;
  const std::array<std::span<const double>, 2> models{a, b};
  for (int r = 0; r < 2; ++r) {
    std::vector<double> x, y, z;
    for (std::size_t i : pos) x.push_back(models[r][i]);
    for (std::size_t i : neg) y.push_back(models[r][i]);
    z = x;
    z.insert(z.end(), y.begin(), y.end());
    const auto tx = midranks(x);
    const auto ty = midranks(y);
    const auto tz = midranks(z);
    double sum_pos = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum_pos += tz[i];
      c.v_pos[r].push_back((tz[i] - tx[i]) / n);
    }
    for (std::size_t j = 0; j < y.size(); ++j) c.v_neg[r].push_back(1.0 - (tz[x.size() + j] - ty[j]) / m);
    c.auc[r] = (sum_pos - m * (m + 1.0) / 2.0) / (m * n);
  }
  return c;
}

double covariance(const std::vector<double>& u, const std::vector<double>& v) {
  const std::size_t k = u.size();
  if (k < 2) return 0.0;
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(k);
  const double mv = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += (u[i] - mu) * (v[i] - mv);
  return acc / static_cast<double>(k - 1);
}

}  // namespace

std::array<std::array<double, 2>, 2> delong_covariance(std::span<const double> a_scores, std::span<const double> b_scores,
                                                       std::span<const int> labels) {
  const Components c = structural_components(a_scores, b_scores, labels);
  const auto m = static_cast<double>(c.v_pos[0].size());
  const auto n = static_cast<double>(c.v_neg[0].size());
  std::array<std::array<double, 2>, 2> s{};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) s[i][j] = covariance(c.v_pos[i], c.v_pos[j]) / m + covariance(c.v_neg[i], c.v_neg[j]) / n;
  }
  return s;
}

DelongResult delong_test(std::span<const double> a_scores, std::span<const double> b_scores, std::span<const int> labels) {
  const Components c = structural_components(a_scores, b_scores, labels);
  const auto s = delong_covariance(a_scores, b_scores, labels);
  DelongResult r;
  r.auc_a = c.auc[0];
  r.auc_b = c.auc[1];
  r.variance = std::max(0.0, s[0][0] + s[1][1] - 2.0 * s[0][1]);
  const double diff = r.auc_a - r.auc_b;
  if (r.variance == 0.0) {
    r.z = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    r.p = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.z = diff / std::sqrt(r.variance);
  r.p = std::clamp(std::erfc(std::abs(r.z) / std::sqrt(2.0)), 0.0, 1.0);
  return r;
}

BootstrapResult bootstrap_auc(const ScoredSet& s, std::size_t iterations, std::uint64_t seed) {
  roc_auc(s);  // validates and rejects single-class input
  if (iterations < 2) throw UsageError("bootstrap needs at least 2 iterations");
  const std::size_t n = s.scores.size();
  std::vector<double> aucs;
  aucs.reserve(iterations);
  ScoredSet sample;
  sample.scores.resize(n);
  sample.labels.resize(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(it), static_cast<std::uint32_t>(it >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (true) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        sample.scores[i] = s.scores[j];
        sample.labels[i] = s.labels[j];
        pos += static_cast<std::size_t>(s.labels[j]);
      }
      if (pos > 0 && pos < n) break;
    }
    aucs.push_back(roc_auc(sample));
  }
  BootstrapResult r;
  r.iterations = iterations;
  r.mean = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(iterations);
  double var = 0.0;
  for (double a : aucs) var += (a - r.mean) * (a - r.mean);
  r.sd = std::sqrt(var / static_cast<double>(iterations - 1));
  std::sort(aucs.begin(), aucs.end());
  auto percentile = [&](double q) {
    const double pos = q * static_cast<double>(iterations - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, iterations - 1);
    return aucs[lo] + (pos - static_cast<double>(lo)) * (aucs[hi] - aucs[lo]);
  };
  r.ci_low = percentile(0.025);
  r.ci_high = percentile(0.975);
  return r;
}

Confusion confusion_matrix(const ScoredSet& s, double threshold) {
  s.validate();
  Confusion c;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool predicted = s.scores[i] >= threshold;
    if (s.labels[i] == 1) {
      (predicted ? c.tp : c.fn)++;
    } else {
      (predicted ? c.fp : c.tn)++;
    }
  }
  return c;
}

nlohmann::json metric_report(const ScoredSet& s, std::size_t bootstrap_iterations, std::uint64_t seed) {
  const double auc = roc_auc(s);
  const BootstrapResult boot = bootstrap_auc(s, bootstrap_iterations, seed);
  const Confusion c = confusion_matrix(s);
  return {
      {"auc", auc},
      {"sd", boot.sd},
      {"ci95", {boot.ci_low, boot.ci_high}},
      {"n", s.scores.size()},
      {"confusion", {{"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}, {"tp", c.tp}}},
      {"scores", s.scores},
      {"labels", s.labels},
  };
}

}  // namespace mst::stats
