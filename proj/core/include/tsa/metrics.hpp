#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tsa/label.hpp"
#include "tsa/uncertainty.hpp"

namespace tsa {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LabelPair {
  SentimentLabel gold;
  SentimentLabel predicted;
};

/// confusion[gold][predicted], both indexed by index_of(label).
using ConfusionMatrix = std::array<std::array<std::size_t, kNumLabels>, kNumLabels>;

ConfusionMatrix confusion_matrix(std::span<const LabelPair> pairs);

/// Macro-averaged F1 over the classes that occur in the gold labels.
///
/// Per-class F1 is 2TP / (2TP + FP + FN); a gold class that is never
/// predicted correctly scores 0. Classes absent from the gold labels are
/// skipped rather than counted as 0. Throws MetricError on empty input.
double macro_f1(std::span<const LabelPair> pairs);

struct ScoredInstance {
  std::string instance_id;
  SentimentLabel gold = SentimentLabel::Neutral;
  PredictionDistribution distribution;

  bool correct() const { return distribution.argmax == gold; }
};

struct BinItem {
  double confidence = 0.0;
  std::string_view id;
};

/// Rank-based quantile binning.
///
/// Items are ordered by (confidence, id) and the element of rank r goes to
/// bin floor(r * m / n), giving m contiguous bins of size floor(n/m) or
/// ceil(n/m). Equal confidences may straddle a boundary; the id order makes
/// the assignment deterministic. Returns the bin of each item in input order.
/// Throws MetricError if m == 0 or n < m.
std::vector<std::size_t> quantile_bins(std::span<const BinItem> items, std::size_t m);

struct CalibrationBin {
  std::size_t index = 0;
  std::vector<std::string> members;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

std::vector<CalibrationBin> calibration_bins(std::span<const ScoredInstance> scored, std::size_t m);

/// Expected calibration error over quantile bins of the argmax confidence:
/// sum_i |B_i|/n * |acc(B_i) - conf(B_i)|.
double ece(std::span<const ScoredInstance> scored, std::size_t m = 10);

/// Calibration accuracy as reported alongside ECE.
inline double calibration_accuracy(double ece_value) { return 1.0 - ece_value; }

struct MajorityVote {
  SentimentLabel label = SentimentLabel::Neutral;
  std::size_t count = 0;
  bool tied = false;

  bool operator==(const MajorityVote&) const = default;
};

/// Modal label with the fixed tie-break. Throws MetricError on empty input.
MajorityVote majority_vote(std::span<const SentimentLabel> labels);

struct VoteBinInput {
  std::optional<std::vector<SentimentLabel>> raw_labels;
  std::vector<SentimentLabel> model_votes;
  SentimentLabel gold = SentimentLabel::Neutral;
  SentimentLabel model_argmax = SentimentLabel::Neutral;
};

struct VoteBinCell {
  std::size_t annotator_majority = 0;
  std::size_t model_majority = 0;
  double f1 = 0.0;
  std::size_t size = 0;

  bool operator==(const VoteBinCell&) const = default;
};

/// Macro F1 of (gold, model_argmax) per (annotator majority count, model
/// majority count) cell. Only non-empty cells are returned, ordered by
/// (annotator_majority, model_majority). Throws MetricError when an input
/// has no raw labels or no model votes.
std::vector<VoteBinCell> vote_bin_f1(std::span<const VoteBinInput> instances);

}  // namespace tsa
