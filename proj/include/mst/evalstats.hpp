#pragma once

// ROC AUC, the fast DeLong test for paired AUCs, bootstrap intervals and
// confusion matrices for binary classification.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace mst::stats {

/// Scores with binary labels (0/1), equal lengths.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  void validate() const;  // throws UsageError / NumericError
  std::size_t positives() const;
  std::size_t negatives() const;
};

/// 1-based ranks with ties sharing the mean of their rank range.
std::vector<double> midranks(std::span<const double> x);

/// Mann–Whitney form: (wins + ½·ties)/(n₊·n₋). Throws NumericError if a class is missing.
double roc_auc(const ScoredSet& s);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double variance = 0.0;  // Var(auc_a − auc_b)
  double z = 0.0;
  double p = 1.0;  // two-sided, normal approximation
};

/// Paired DeLong test using the midrank formulation of the structural
/// components. ΔAUC == 0 with zero variance gives z = 0, p = 1.
DelongResult delong_test(std::span<const double> a_scores, std::span<const double> b_scores, std::span<const int> labels);

/// 2×2 covariance of the two AUC estimates (same formulation as delong_test).
std::array<std::array<double, 2>, 2> delong_covariance(std::span<const double> a_scores, std::span<const double> b_scores,
                                                       std::span<const int> labels);

struct BootstrapResult {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation across resamples
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t iterations = 0;
};

/// Case-level resampling with replacement. Resamples missing a class are
/// redrawn, so exactly `iterations` AUCs enter the summary. Resample i uses
/// its own generator seeded from (seed, i).
BootstrapResult bootstrap_auc(const ScoredSet& s, std::size_t iterations = 1000, std::uint64_t seed = 0);

struct Confusion {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
};

/// Predicted positive iff score >= threshold.
Confusion confusion_matrix(const ScoredSet& s, double threshold = 0.5);

/// {"auc","sd","ci95","n","confusion", "scores", "labels"}.
nlohmann::json metric_report(const ScoredSet& s, std::size_t bootstrap_iterations = 1000, std::uint64_t seed = 0);

}  // namespace mst::stats
