#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tsa/label.hpp"
#include "tsa/promptkit.hpp"
#include "tsa/response_parsers.hpp"

namespace tsa {

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BackendKind { OpenAiCompatible, OllamaCompatible, Mock };

/// "openai-compatible", "ollama-compatible" or "mock".
std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string base_url;
  std::string model_name;
  /// Name of the environment variable holding the bearer token; empty for none.
  std::string api_key_env;
  /// Temperature for single-query methods (DP, VCA).
  double temperature = 0.0;
  /// Temperature for self-consistency samples.
  double scs_temperature = 0.7;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds backoff_base{500};
  /// Mock only: JSON script of canned responses.
  std::filesystem::path mock_script;

  double temperature_for(UqMethod method) const { return method == UqMethod::Scs ? scs_temperature : temperature; }

  /// Throws GatewayError when a field is out of range.
  void validate() const;
};

enum class ExchangeStatus { Ok, ParseFailed, TransportFailed };

/// "ok", "parse-failed" or "transport-failed".
std::string_view to_string(ExchangeStatus status);
ExchangeStatus parse_exchange_status(std::string_view text);

/// One request/response pair as persisted in the cache.
struct RawExchange {
  std::string cache_key;
  std::string model_name;
  std::string template_hash;
  std::string instance_id;
  int sample_index = 0;
  UqMethod method = UqMethod::Scs;
  int level = 1;
  std::string request_body;
  /// Text content of the model's reply (not the HTTP envelope).
  std::string response_body;
  /// UTC, ISO 8601.
  std::string timestamp;
  ExchangeStatus status = ExchangeStatus::Ok;
  std::string error;

  bool operator==(const RawExchange&) const = default;
};

std::string exchange_to_json(const RawExchange& exchange);
/// Throws GatewayError on malformed input.
RawExchange exchange_from_json(std::string_view text);

/// Hex digest of (model_name, template_hash, instance_id, sample_index).
std::string cache_key(std::string_view model_name, std::string_view template_hash, std::string_view instance_id,
                      int sample_index);

/// Checks a response body with the parser for `method`; the error text on
/// failure, nullopt when it parses.
std::optional<std::string> parse_error_for(UqMethod method, std::string_view response_body);

/// Directory of JSON files, one per exchange, at <root>/<key[0:2]>/<key>.json.
/// Successful entries are never overwritten; a transport failure may be
/// replaced by a later attempt. Writes are serialized and atomic (temp file
/// then rename).
class ExchangeCache {
 public:
  explicit ExchangeCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_for(std::string_view key) const;

  /// Stored exchange, or nullopt when absent. Throws GatewayError when the
  /// file exists but is not a valid exchange.
  std::optional<RawExchange> find(std::string_view key) const;

  /// Returns the exchange now on disk for its key (the existing one if it was
  /// already a transport success).
  RawExchange store(const RawExchange& exchange);

  /// All entry files, sorted by key.
  std::vector<std::filesystem::path> entries() const;

  struct VerifyReport {
    std::size_t entries = 0;
    std::size_t ok = 0;
    std::size_t parse_failed = 0;
    std::size_t transport_failed = 0;
    std::vector<std::string> problems;
  };
  /// Re-derives every key from its stored fields and re-parses every body.
  VerifyReport verify() const;

 private:
  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
};

/// Result of one wire attempt.
struct TransportResult {
  bool ok = false;
  /// Worth another attempt (connection error, 429, 5xx).
  bool retryable = false;
  int http_status = 0;
  std::string content;
  std::string error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string request_body(const RenderedPrompt& prompt, double temperature) const = 0;
  /// Must be safe to call from several threads at once.
  virtual TransportResult send(const RenderedPrompt& prompt, int sample_index, const std::string& body) = 0;
};

/// POST {base_url}/v1/chat/completions, bearer token from api_key_env.
class OpenAiCompatibleBackend : public ChatBackend {
 public:
  explicit OpenAiCompatibleBackend(BackendConfig config);
  std::string request_body(const RenderedPrompt& prompt, double temperature) const override;
  TransportResult send(const RenderedPrompt& prompt, int sample_index, const std::string& body) override;

 private:
  BackendConfig config_;
};

/// POST {base_url}/api/chat with stream disabled.
class OllamaCompatibleBackend : public ChatBackend {
 public:
  explicit OllamaCompatibleBackend(BackendConfig config);
  std::string request_body(const RenderedPrompt& prompt, double temperature) const override;
  TransportResult send(const RenderedPrompt& prompt, int sample_index, const std::string& body) override;

 private:
  BackendConfig config_;
};

/// Canned responses keyed by (instance_id, method, sample_index).
///
/// JSON: {"responses": [{"instance_id": "...", "method": "SCS",
///   "sample_index": 0, "response": "..."}, ...]}. An entry may give
/// "responses": [...] instead, one per sample index from 0; omitting
/// sample_index applies the entry to every index. "transport_error": "..."
/// in place of a response simulates a failed request.
class MockScript {
 public:
  struct Reply {
    std::string text;
    bool transport_error = false;
  };

  static MockScript load(const std::filesystem::path& path);
  static MockScript from_json(std::string_view text);

  void set(std::string instance_id, UqMethod method, std::optional<int> sample_index, Reply reply);
  std::optional<Reply> lookup(std::string_view instance_id, UqMethod method, int sample_index) const;
  std::size_t size() const { return exact_.size() + any_sample_.size(); }

 private:
  std::map<std::tuple<std::string, UqMethod, int>, Reply, std::less<>> exact_;
  std::map<std::tuple<std::string, UqMethod>, Reply, std::less<>> any_sample_;
};

/// Offline backend. Unscripted requests echo the gold label in the format
/// each method asks for.
class MockBackend : public ChatBackend {
 public:
  MockBackend(MockScript script, std::unordered_map<std::string, SentimentLabel> gold_by_id);
  std::string request_body(const RenderedPrompt& prompt, double temperature) const override;
  TransportResult send(const RenderedPrompt& prompt, int sample_index, const std::string& body) override;

  /// Reply a perfect annotator would give for `gold`.
  static std::string echo_gold(UqMethod method, SentimentLabel gold);

 private:
  MockScript script_;
  std::unordered_map<std::string, SentimentLabel> gold_by_id_;
};

/// Network backend for `config.kind`; throws GatewayError for Mock.
std::unique_ptr<ChatBackend> make_http_backend(const BackendConfig& config);

/// Cache-first dispatch with retry and bounded parallelism.
class Gateway {
 public:
  Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend, std::shared_ptr<ExchangeCache> cache);

  /// Cached exchange if one succeeded before; otherwise sends the request,
  /// retrying with exponential backoff, and stores the outcome (including a
  /// final transport failure).
  RawExchange complete(const RenderedPrompt& prompt, int sample_index);

  struct Request {
    const RenderedPrompt* prompt;
    int sample_index;
  };

  /// complete() over `requests` with at most max_in_flight concurrent calls.
  /// Results line up with `requests`. Once any request ends in a transport
  /// failure no new requests are started; those never sent stay nullopt.
  struct BatchResult {
    std::vector<std::optional<RawExchange>> exchanges;
    std::optional<std::string> failure;
  };
  BatchResult complete_all(std::span<const Request> requests);

  /// Wire attempts made so far (cache hits excluded).
  std::size_t network_calls() const { return network_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

  /// Replaces the sleep between retries (tests).
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<ExchangeCache> cache_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  std::atomic<std::size_t> network_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace tsa
