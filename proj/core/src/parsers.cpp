#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <map>
#include <regex>

#include <nlohmann/json.hpp>

#include "text_util.hpp"
#include "tsa/response_parsers.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;

// Only the first candidates are tried; model answers put their JSON early.
constexpr std::size_t kMaxJsonCandidates = 64;

bool is_word_byte(unsigned char c) { return std::isalpha(c) != 0 || c >= 0x80; }

struct Token {
  enum class Kind { Label, Number } kind;
  std::size_t offset;
  SentimentLabel label = SentimentLabel::Neutral;
  double number = 0.0;
};

/// Class words and numbers in order of appearance.
std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_word_byte(c)) {
      const std::size_t start = i;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
      if (auto label = try_parse_label_token(text.substr(start, i - start))) {
        tokens.push_back({Token::Kind::Label, start, *label, 0.0});
      }
      continue;
    }
    const bool minus = c == '-' && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if (std::isdigit(c) || minus) {
      const std::size_t start = i;
      if (minus) ++i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      if (i + 1 < text.size() && text[i] == '.' && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      const std::string literal(text.substr(start, i - start));
      tokens.push_back({Token::Kind::Number, start, SentimentLabel::Neutral, std::strtod(literal.c_str(), nullptr)});
      continue;
    }
    ++i;
  }
  return tokens;
}

/// End (exclusive) of the bracketed region opening at `start`, honouring
/// JSON string literals, or npos when unbalanced.
std::size_t matching_close(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '{':
        stack.push_back('}');
        break;
      case '[':
        stack.push_back(']');
        break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) return std::string_view::npos;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      default:
        break;
    }
  }
  return std::string_view::npos;
}

std::optional<ordered_json> first_json_container(std::string_view text) {
  std::size_t tried = 0;
  for (std::size_t i = 0; i < text.size() && tried < kMaxJsonCandidates; ++i) {
    if (text[i] != '{' && text[i] != '[') continue;
    ++tried;
    const std::size_t end = matching_close(text, i);
    if (end == std::string_view::npos) continue;
    ordered_json value = ordered_json::parse(text.substr(i, end - i), nullptr, false);
    if (!value.is_discarded() && (value.is_object() || value.is_array())) return value;
  }
  return std::nullopt;
}

ParseResult<std::vector<SentimentLabel>> labels_from_strings(const std::vector<std::string>& values) {
  if (values.size() != 6) {
    return ParseResult<std::vector<SentimentLabel>>::failure("expected 6 votes, found " +
                                                             std::to_string(values.size()));
  }
  std::vector<SentimentLabel> labels;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto label = parse_label(values[i]);
    if (!label) {
      return ParseResult<std::vector<SentimentLabel>>::failure("vote " + std::to_string(i + 1) + ": " + label.error());
    }
    labels.push_back(label.value());
  }
  return ParseResult<std::vector<SentimentLabel>>::success(std::move(labels));
}

std::optional<int> voter_index(const std::string& key) {
  static const std::regex pattern(R"(^\s*targeted[ _]sentiment[ _]*(\d+)\s*$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(key, m, pattern)) return std::nullopt;
  return std::atoi(m[1].str().c_str());
}

ParseResult<std::vector<SentimentLabel>> interpret_dp_json(const ordered_json& value) {
  using Result = ParseResult<std::vector<SentimentLabel>>;
  if (value.is_array()) {
    std::vector<std::string> strings;
    for (const auto& element : value) {
      if (element.is_string()) {
        strings.push_back(element.get<std::string>());
      } else if (element.is_object() && element.size() == 1 && element.begin()->is_string()) {
        strings.push_back(element.begin()->get<std::string>());
      } else {
        return Result::failure("array entries must be label strings");
      }
    }
    return labels_from_strings(strings);
  }

  std::map<int, std::string> keyed;
  std::vector<std::string> in_order;
  bool all_keyed = !value.empty();
  for (auto it = value.begin(); it != value.end(); ++it) {
    if (value.size() == 1 && it->is_array()) return interpret_dp_json(*it);
    if (!it->is_string()) return Result::failure("object values must be label strings");
    in_order.push_back(it->get<std::string>());
    if (auto idx = voter_index(it.key())) {
      keyed[*idx] = it->get<std::string>();
    } else {
      all_keyed = false;
    }
  }
  if (all_keyed && keyed.size() == value.size()) {
    std::vector<std::string> ordered;
    int expected = 1;
    for (const auto& [idx, text] : keyed) {
      if (idx != expected++) return Result::failure("voter keys must be numbered 1..6");
      ordered.push_back(text);
    }
    return labels_from_strings(ordered);
  }
  return labels_from_strings(in_order);
}

ParseResult<std::vector<SentimentLabel>> recover_keyed_pairs(std::string_view text) {
  static const std::regex pattern(R"re("\s*targeted[ _]sentiment[ _]*(\d+)\s*"\s*:\s*"([^"]*)")re", std::regex::icase);
  std::map<int, std::string> keyed;
  const std::string owned(text);
  for (std::sregex_iterator it(owned.begin(), owned.end(), pattern), end; it != end; ++it) {
    const int idx = std::atoi((*it)[1].str().c_str());
    if (!keyed.emplace(idx, (*it)[2].str()).second) {
      return ParseResult<std::vector<SentimentLabel>>::failure("voter " + std::to_string(idx) + " appears twice");
    }
  }
  if (keyed.empty()) return ParseResult<std::vector<SentimentLabel>>::failure("no JSON answer found");
  std::vector<std::string> ordered;
  int expected = 1;
  for (const auto& [idx, label] : keyed) {
    if (idx != expected++) return ParseResult<std::vector<SentimentLabel>>::failure("voter keys must be numbered 1..6");
    ordered.push_back(label);
  }
  return labels_from_strings(ordered);
}

double clamp_confidence(double value) { return std::clamp(value, 0.0, 100.0); }

}  // namespace

ParseResult<SentimentLabel> parse_label(std::string_view response) {
  try {
    std::optional<SentimentLabel> last;
    for (const Token& token : tokenize(response)) {
      if (token.kind == Token::Kind::Label) last = token.label;
    }
    if (!last) return ParseResult<SentimentLabel>::failure("no sentiment class word in response");
    return ParseResult<SentimentLabel>::success(*last);
  } catch (const std::exception& e) {
    return ParseResult<SentimentLabel>::failure(std::string("unparseable response: ") + e.what());
  }
}

ParseResult<std::vector<SentimentLabel>> parse_dp(std::string_view response) {
  try {
    if (auto json = first_json_container(response)) return interpret_dp_json(*json);
    return recover_keyed_pairs(response);
  } catch (const std::exception& e) {
    return ParseResult<std::vector<SentimentLabel>>::failure(std::string("unparseable response: ") + e.what());
  }
}

ParseResult<ClassConfidences> parse_vca(std::string_view response) {
  using Result = ParseResult<ClassConfidences>;
  try {
    const std::vector<Token> tokens = tokenize(response);

    // Labeled form: the first number following a class word, before the next
    // class word, belongs to that class.
    std::array<std::optional<double>, kNumLabels> labeled{};
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].kind != Token::Kind::Label || labeled[index_of(tokens[i].label)]) continue;
      for (std::size_t j = i + 1; j < tokens.size() && tokens[j].kind != Token::Kind::Label; ++j) {
        if (tokens[j].kind == Token::Kind::Number) {
          labeled[index_of(tokens[i].label)] = tokens[j].number;
          break;
        }
      }
    }

    ClassConfidences out;
    if (labeled[0] && labeled[1] && labeled[2]) {
      out.positive = *labeled[index_of(SentimentLabel::Positive)];
      out.neutral = *labeled[index_of(SentimentLabel::Neutral)];
      out.negative = *labeled[index_of(SentimentLabel::Negative)];
    } else {
      bool found = false;
      for (std::size_t open = response.find('['); open != std::string_view::npos && !found;
           open = response.find('[', open + 1)) {
        const std::size_t close = response.find(']', open);
        if (close == std::string_view::npos) break;
        std::vector<double> numbers;
        for (const Token& token : tokens) {
          if (token.kind == Token::Kind::Number && token.offset > open && token.offset < close) {
            numbers.push_back(token.number);
          }
        }
        if (numbers.size() >= 3) {
          out = {numbers[0], numbers[1], numbers[2]};
          found = true;
        }
      }
      if (!found) return Result::failure("fewer than three class confidences in response");
    }

    out.positive = clamp_confidence(out.positive);
    out.neutral = clamp_confidence(out.neutral);
    out.negative = clamp_confidence(out.negative);
    if (out.positive == 0.0 && out.neutral == 0.0 && out.negative == 0.0) {
      return Result::failure("all three confidences are zero");
    }
    return Result::success(out);
  } catch (const std::exception& e) {
    return Result::failure(std::string("unparseable response: ") + e.what());
  }
}

}  // namespace tsa
