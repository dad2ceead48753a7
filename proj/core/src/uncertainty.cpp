#include "tsa/uncertainty.hpp"

#include <cmath>
#include <string>

namespace tsa {
namespace {

PredictionDistribution from_masses(const std::array<double, kNumLabels>& masses, UqMethod method,
                                   std::size_t support) {
  PredictionDistribution out;
  out.masses = masses;
  out.argmax = argmax_label(masses);
  out.confidence = masses[index_of(out.argmax)];
  out.method = method;
  out.support = support;
  return out;
}

PredictionDistribution from_votes(std::span<const SentimentLabel> votes, UqMethod method) {
  const LabelCounts counts = count_labels(votes);
  const double n = static_cast<double>(votes.size());
  std::array<double, kNumLabels> masses{};
  for (std::size_t i = 0; i < kNumLabels; ++i) masses[i] = static_cast<double>(counts[i]) / n;
  // Argmax on the integer counts so that ties are exact.
  PredictionDistribution out = from_masses(masses, method, votes.size());
  out.argmax = argmax_label(counts);
  out.confidence = masses[index_of(out.argmax)];
  return out;
}

}  // namespace

PredictionDistribution aggregate_scs(std::span<const SentimentLabel> samples, std::size_t expected_k) {
  if (samples.empty()) throw AggregationError("aggregate_scs: no usable samples");
  if (samples.size() > expected_k) {
    throw AggregationError("aggregate_scs: " + std::to_string(samples.size()) + " samples exceed the expected " +
                           std::to_string(expected_k));
  }
  return from_votes(samples, UqMethod::Scs);
}

PredictionDistribution aggregate_dp(std::span<const SentimentLabel> votes) {
  if (votes.size() != 6) {
    throw AggregationError("aggregate_dp: expected 6 votes, got " + std::to_string(votes.size()));
  }
  return from_votes(votes, UqMethod::Dp);
}

PredictionDistribution aggregate_vca(const ClassConfidences& confidences) {
  std::array<double, kNumLabels> values{};
  values[index_of(SentimentLabel::Positive)] = confidences.positive;
  values[index_of(SentimentLabel::Neutral)] = confidences.neutral;
  values[index_of(SentimentLabel::Negative)] = confidences.negative;
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw AggregationError("aggregate_vca: confidences must be finite and >= 0");
    sum += v;
  }
  if (!(sum > 0.0)) throw AggregationError("aggregate_vca: all confidences are zero");
  std::array<double, kNumLabels> masses{};
  for (std::size_t i = 0; i < kNumLabels; ++i) masses[i] = values[i] / sum;
  PredictionDistribution out = from_masses(masses, UqMethod::Vca, 1);
  // Ties are decided on the raw values, which scaling cannot reorder.
  out.argmax = argmax_label(values);
  out.confidence = masses[index_of(out.argmax)];
  return out;
}

}  // namespace tsa
