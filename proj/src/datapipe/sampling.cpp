#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "mst/datapipe.hpp"
#include "mst/errors.hpp"

namespace mst::datapipe {

std::vector<Split> stratified_split(const std::vector<int>& labels, const SplitFractions& fractions, std::uint64_t seed) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw UsageError("stratified_split: need at least one example of each class");

  std::vector<Split> out(labels.size(), Split::train);
  std::mt19937_64 rng(seed);
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_test = static_cast<std::size_t>(std::llround(n * fractions.test));
    const auto n_val = std::min(members.size() - n_test, static_cast<std::size_t>(std::llround(n * fractions.val)));
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < n_test) {
        out[members[i]] = Split::test;
      } else if (i < n_test + n_val) {
        out[members[i]] = Split::val;
      }
    }
  }
  return out;
}

void stratified_split(DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) labels.push_back(e.label);
  const auto splits = stratified_split(labels, fractions, seed);
  for (std::size_t i = 0; i < splits.size(); ++i) manifest.entries[i].split = splits[i];
}

std::vector<std::size_t> weighted_sample_order(const std::vector<int>& labels, std::uint64_t seed, std::size_t draws) {
  if (labels.empty()) throw UsageError("weighted_sample_order: no labels");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw UsageError("weighted_sample_order: a class is absent");
  std::vector<double> weights;
  weights.reserve(labels.size());
  for (int l : labels) weights.push_back(1.0 / static_cast<double>(counts[l]));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(draws);
  for (auto& i : order) i = pick(rng);
  return order;
}

}  // namespace mst::datapipe
