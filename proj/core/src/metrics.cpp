#include "tsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

namespace tsa {

ConfusionMatrix confusion_matrix(std::span<const LabelPair> pairs) {
  ConfusionMatrix cm{};
  for (const LabelPair& p : pairs) ++cm[index_of(p.gold)][index_of(p.predicted)];
  return cm;
}

double macro_f1(std::span<const LabelPair> pairs) {
  if (pairs.empty()) throw MetricError("macro_f1: empty input");
  const ConfusionMatrix cm = confusion_matrix(pairs);
  double total = 0.0;
  std::size_t classes = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::size_t gold_k = 0;
    std::size_t predicted_k = 0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      gold_k += cm[k][j];
      predicted_k += cm[j][k];
    }
    if (gold_k == 0) continue;
    const std::size_t tp = cm[k][k];
    const std::size_t fn = gold_k - tp;
    const std::size_t fp = predicted_k - tp;
    total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++classes;
  }
  return total / static_cast<double>(classes);
}

std::vector<std::size_t> quantile_bins(std::span<const BinItem> items, std::size_t m) {
  if (m == 0) throw MetricError("quantile_bins: m must be at least 1");
  const std::size_t n = items.size();
  if (n < m) {
    throw MetricError("quantile_bins: " + std::to_string(n) + " items cannot fill " + std::to_string(m) +
                      " bins; lower the bin count");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].confidence != items[b].confidence) return items[a].confidence < items[b].confidence;
    return items[a].id < items[b].id;
  });
  std::vector<std::size_t> bins(n);
  for (std::size_t rank = 0; rank < n; ++rank) bins[order[rank]] = rank * m / n;
  return bins;
}

std::vector<CalibrationBin> calibration_bins(std::span<const ScoredInstance> scored, std::size_t m) {
  std::vector<BinItem> items;
  items.reserve(scored.size());
  for (const auto& s : scored) items.push_back({s.distribution.confidence, s.instance_id});
  const std::vector<std::size_t> assignment = quantile_bins(items, m);

  std::vector<CalibrationBin> bins(m);
  std::vector<double> confidence_sum(m, 0.0);
  std::vector<std::size_t> correct(m, 0);
  for (std::size_t i = 0; i < m; ++i) bins[i].index = i;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const std::size_t b = assignment[i];
    bins[b].members.push_back(scored[i].instance_id);
    confidence_sum[b] += scored[i].distribution.confidence;
    if (scored[i].correct()) ++correct[b];
  }
  for (std::size_t b = 0; b < m; ++b) {
    const double size = static_cast<double>(bins[b].members.size());
    bins[b].mean_confidence = confidence_sum[b] / size;
    bins[b].mean_accuracy = static_cast<double>(correct[b]) / size;
  }
  return bins;
}

double ece(std::span<const ScoredInstance> scored, std::size_t m) {
  const std::vector<CalibrationBin> bins = calibration_bins(scored, m);
  const double n = static_cast<double>(scored.size());
  double total = 0.0;
  for (const auto& bin : bins) {
    total += static_cast<double>(bin.members.size()) / n * std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return total;
}

MajorityVote majority_vote(std::span<const SentimentLabel> labels) {
  if (labels.empty()) throw MetricError("majority_vote: empty input");
  const LabelCounts counts = count_labels(labels);
  MajorityVote vote;
  vote.label = argmax_label(counts);
  vote.count = counts[index_of(vote.label)];
  vote.tied = std::count(counts.begin(), counts.end(), vote.count) > 1;
  return vote;
}

std::vector<VoteBinCell> vote_bin_f1(std::span<const VoteBinInput> instances) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<LabelPair>> cells;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const VoteBinInput& in = instances[i];
    if (!in.raw_labels || in.raw_labels->empty()) {
      throw MetricError("vote_bin_f1: instance " + std::to_string(i) + " has no raw annotator labels");
    }
    if (in.model_votes.empty()) throw MetricError("vote_bin_f1: instance " + std::to_string(i) + " has no model votes");
    const std::size_t annotators = majority_vote(*in.raw_labels).count;
    const std::size_t model = majority_vote(in.model_votes).count;
    cells[{annotators, model}].push_back({in.gold, in.model_argmax});
  }
  std::vector<VoteBinCell> out;
  out.reserve(cells.size());
  for (const auto& [key, pairs] : cells) out.push_back({key.first, key.second, macro_f1(pairs), pairs.size()});
  return out;
}

}  // namespace tsa
