#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsa/label.hpp"

namespace tsa {

/// Outcome of parsing a model response: a value, or the reason it was
/// rejected. Parsers return this instead of throwing, whatever the input bytes.
template <typename T>
class ParseResult {
 public:
  static ParseResult success(T value) {
    ParseResult r;
    r.value_ = std::move(value);
    return r;
  }
  static ParseResult failure(std::string reason) {
    ParseResult r;
    r.error_ = std::move(reason);
    return r;
  }

  bool ok() const { return value_.has_value(); }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    if (!value_) throw std::logic_error("ParseResult::value on a failed parse: " + error_);
    return *value_;
  }
  const std::string& error() const { return error_; }

 private:
  ParseResult() = default;

  std::optional<T> value_;
  std::string error_;
};

/// Final sentiment verdict in free text. Words are compared
/// case-insensitively with punctuation and markdown treated as separators;
/// when several class words occur the last one wins.
ParseResult<SentimentLabel> parse_label(std::string_view response);

/// Six simulated annotator labels from the first JSON object or array in the
/// response (code fences are irrelevant). Accepts the keyed form
/// {"targeted sentiment 1": "...", ...} and a bare 6-element array; when no
/// JSON parses, falls back to scanning for "targeted sentiment k": "..." pairs.
ParseResult<std::vector<SentimentLabel>> parse_dp(std::string_view response);

/// Per-class confidences, clamped to [0, 100], from either a labeled form
/// ("positive: 5, neutral: 90, negative: 5") or the first bracketed list
/// holding three numbers, read as [positive, neutral, negative].
ParseResult<ClassConfidences> parse_vca(std::string_view response);

}  // namespace tsa
