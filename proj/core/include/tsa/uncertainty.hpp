#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>

#include "tsa/label.hpp"

namespace tsa {

/// Per-instance predictive distribution produced by one UQ protocol.
struct PredictionDistribution {
  /// Probability mass per label, indexed by index_of(label). Sums to 1.
  std::array<double, kNumLabels> masses{};
  SentimentLabel argmax = SentimentLabel::Neutral;
  /// Mass of the argmax label.
  double confidence = 0.0;
  UqMethod method = UqMethod::Scs;
  /// Number of samples or votes backing the masses (1 for VCA).
  std::size_t support = 0;

  double mass(SentimentLabel label) const { return masses[index_of(label)]; }

  bool operator==(const PredictionDistribution&) const = default;
};

class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative label frequencies over the usable samples. Samples lost to parse
/// failures are simply absent; the remaining ones are renormalized.
/// Throws AggregationError when `samples` is empty or longer than `expected_k`.
PredictionDistribution aggregate_scs(std::span<const SentimentLabel> samples, std::size_t expected_k = 6);

/// Same arithmetic as aggregate_scs over exactly six simulated annotator votes.
PredictionDistribution aggregate_dp(std::span<const SentimentLabel> votes);

/// Normalizes verbal confidences to masses. Values must be finite and
/// non-negative with a positive sum; the scale is irrelevant.
PredictionDistribution aggregate_vca(const ClassConfidences& confidences);

}  // namespace tsa
