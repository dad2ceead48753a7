#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsa {

/// Ternary polarity of the sentiment expressed towards a target entity.
///
/// The enumerator values define the fixed total order used for every
/// deterministic tie-break in the project: Negative < Neutral < Positive.
/// Among tied maxima the greatest label in that order wins.
enum class SentimentLabel : std::uint8_t { Negative = 0, Neutral = 1, Positive = 2 };

inline constexpr std::size_t kNumLabels = 3;

/// Labels in ascending tie-break order.
inline constexpr std::array<SentimentLabel, kNumLabels> kAllLabels{
    SentimentLabel::Negative, SentimentLabel::Neutral, SentimentLabel::Positive};

constexpr std::size_t index_of(SentimentLabel label) { return static_cast<std::size_t>(label); }

constexpr SentimentLabel label_at(std::size_t index) { return static_cast<SentimentLabel>(index); }

/// Lowercase ASCII form: "positive", "neutral" or "negative".
std::string_view to_string(SentimentLabel label);

class LabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Case-insensitive, whitespace-trimmed parse of a single label token.
std::optional<SentimentLabel> try_parse_label_token(std::string_view token);

/// Like try_parse_label_token but throws LabelError naming the offending token.
SentimentLabel parse_label_token(std::string_view token);

/// Per-label counts indexed by index_of(label).
using LabelCounts = std::array<std::size_t, kNumLabels>;

LabelCounts count_labels(std::span<const SentimentLabel> labels);

/// Picks the label with the largest value, breaking ties towards the greatest
/// label in the fixed order (Positive, then Neutral, then Negative).
template <typename T>
constexpr SentimentLabel argmax_label(const std::array<T, kNumLabels>& values) {
  std::size_t best = index_of(SentimentLabel::Positive);
  for (std::size_t i = best; i-- > 0;) {
    if (values[i] > values[best]) best = i;
  }
  return label_at(best);
}

/// One number per class, in the order the model is asked for them
/// (positive, neutral, negative).
struct ClassConfidences {
  double positive = 0.0;
  double neutral = 0.0;
  double negative = 0.0;

  bool operator==(const ClassConfidences&) const = default;
};

/// Uncertainty-quantification protocol used to elicit a prediction.
enum class UqMethod : std::uint8_t {
  Scs,  ///< self-consistency sampling: k independent samples
  Dp,   ///< distribution prompting: one query, six simulated annotators
  Vca,  ///< verbal confidence assessment: one query, a 0-100 score per class
};

inline constexpr std::array<UqMethod, 3> kAllMethods{UqMethod::Scs, UqMethod::Dp, UqMethod::Vca};

/// "SCS", "DP" or "VCA".
std::string_view to_string(UqMethod method);

/// Case-insensitive inverse of to_string(UqMethod); throws std::invalid_argument.
UqMethod parse_uq_method(std::string_view text);

}  // namespace tsa
