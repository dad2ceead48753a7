#include "tsa/label.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "text_util.hpp"

namespace tsa {

std::string_view to_string(SentimentLabel label) {
  switch (label) {
    case SentimentLabel::Negative:
      return "negative";
    case SentimentLabel::Neutral:
      return "neutral";
    case SentimentLabel::Positive:
      return "positive";
  }
  return "unknown";
}

std::optional<SentimentLabel> try_parse_label_token(std::string_view token) {
  const std::string lowered = detail::to_lower_ascii(detail::trim(token));
  if (lowered == "positive") return SentimentLabel::Positive;
  if (lowered == "neutral") return SentimentLabel::Neutral;
  if (lowered == "negative") return SentimentLabel::Negative;
  return std::nullopt;
}

SentimentLabel parse_label_token(std::string_view token) {
  if (auto label = try_parse_label_token(token)) return *label;
  throw LabelError("unknown sentiment label '" + std::string(token) +
                   "' (expected positive, neutral or negative)");
}

LabelCounts count_labels(std::span<const SentimentLabel> labels) {
  LabelCounts counts{};
  for (SentimentLabel label : labels) ++counts[index_of(label)];
  return counts;
}

std::string_view to_string(UqMethod method) {
  switch (method) {
    case UqMethod::Scs:
      return "SCS";
    case UqMethod::Dp:
      return "DP";
    case UqMethod::Vca:
      return "VCA";
  }
  return "unknown";
}

UqMethod parse_uq_method(std::string_view text) {
  const std::string lowered = detail::to_lower_ascii(detail::trim(text));
  if (lowered == "scs") return UqMethod::Scs;
  if (lowered == "dp") return UqMethod::Dp;
  if (lowered == "vca") return UqMethod::Vca;
  throw std::invalid_argument("unknown uncertainty method '" + std::string(text) +
                              "' (expected SCS, DP or VCA)");
}

}  // namespace tsa
