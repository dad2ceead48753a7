#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "tsa/gateway.hpp"

#include <algorithm>
#include <ctime>
#include <exception>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "text_util.hpp"
#include "tsa/digest.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GatewayError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ordered_json chat_messages(const RenderedPrompt& prompt) {
  return ordered_json::array({
      ordered_json{{"role", "system"}, {"content", prompt.system}},
      ordered_json{{"role", "user"}, {"content", prompt.user}},
  });
}

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw GatewayError("base_url '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

TransportResult post_json(const BackendConfig& config, const std::string& path, const std::string& body,
                          const httplib::Headers& headers) {
  TransportResult out;
  SplitUrl url;
  try {
    url = split_url(config.base_url);
  } catch (const GatewayError& e) {
    out.error = e.what();
    return out;
  }
  httplib::Client client(url.origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);
  auto res = client.Post(url.prefix + path, headers, body, "application/json");
  if (!res) {
    out.retryable = true;
    out.error = "connection error: " + httplib::to_string(res.error());
    return out;
  }
  out.http_status = res->status;
  if (res->status < 200 || res->status >= 300) {
    out.retryable = res->status == 429 || res->status >= 500;
    out.error = "HTTP " + std::to_string(res->status);
    return out;
  }
  out.ok = true;
  out.content = res->body;
  return out;
}

/// Replaces the HTTP envelope in `result.content` by the message text at
/// `pointer`.
TransportResult extract_content(TransportResult result, const char* pointer) {
  if (!result.ok) return result;
  const ordered_json envelope = ordered_json::parse(result.content, nullptr, false);
  const ordered_json::json_pointer ptr(pointer);
  if (envelope.is_discarded() || !envelope.contains(ptr) || !envelope.at(ptr).is_string()) {
    result.ok = false;
    result.error = std::string("response has no string at ") + pointer;
    return result;
  }
  result.content = envelope.at(ptr).get<std::string>();
  return result;
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::OpenAiCompatible:
      return "openai-compatible";
    case BackendKind::OllamaCompatible:
      return "ollama-compatible";
    case BackendKind::Mock:
      return "mock";
  }
  return "?";
}

BackendKind parse_backend_kind(std::string_view text) {
  const std::string lower = detail::to_lower_ascii(detail::trim(text));
  if (lower == "openai-compatible" || lower == "openai") return BackendKind::OpenAiCompatible;
  if (lower == "ollama-compatible" || lower == "ollama") return BackendKind::OllamaCompatible;
  if (lower == "mock") return BackendKind::Mock;
  throw GatewayError("unknown backend kind '" + std::string(text) + "'");
}

void BackendConfig::validate() const {
  const std::string who = "backend '" + model_name + "'";
  if (model_name.empty()) throw GatewayError("backend model_name is empty");
  if (kind != BackendKind::Mock) {
    if (!detail::starts_with(base_url, "http://") && !detail::starts_with(base_url, "https://")) {
      throw GatewayError(who + ": base_url must start with http:// or https://");
    }
  }
  auto check_temperature = [&](double t, const char* name) {
    if (!(t >= 0.0 && t <= 2.0)) throw GatewayError(who + ": " + name + " must be in [0, 2]");
  };
  check_temperature(temperature, "temperature");
  check_temperature(scs_temperature, "scs_temperature");
  if (max_retries < 0 || max_retries > 10) throw GatewayError(who + ": max_retries must be in [0, 10]");
  if (max_in_flight < 1) throw GatewayError(who + ": max_in_flight must be at least 1");
  if (timeout.count() <= 0) throw GatewayError(who + ": timeout must be positive");
  if (backoff_base.count() < 0) throw GatewayError(who + ": backoff must not be negative");
}

std::string_view to_string(ExchangeStatus status) {
  switch (status) {
    case ExchangeStatus::Ok:
      return "ok";
    case ExchangeStatus::ParseFailed:
      return "parse-failed";
    case ExchangeStatus::TransportFailed:
      return "transport-failed";
  }
  return "?";
}

ExchangeStatus parse_exchange_status(std::string_view text) {
  if (text == "ok") return ExchangeStatus::Ok;
  if (text == "parse-failed") return ExchangeStatus::ParseFailed;
  if (text == "transport-failed") return ExchangeStatus::TransportFailed;
  throw GatewayError("unknown exchange status '" + std::string(text) + "'");
}

std::string exchange_to_json(const RawExchange& e) {
  ordered_json j;
  j["cache_key"] = e.cache_key;
  j["model_name"] = e.model_name;
  j["template_hash"] = e.template_hash;
  j["instance_id"] = e.instance_id;
  j["sample_index"] = e.sample_index;
  j["method"] = to_string(e.method);
  j["level"] = e.level;
  j["status"] = to_string(e.status);
  j["error"] = e.error;
  j["timestamp"] = e.timestamp;
  j["request_body"] = e.request_body;
  j["response_body"] = e.response_body;
  return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

RawExchange exchange_from_json(std::string_view text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw GatewayError("cache entry is not a JSON object");
  try {
    RawExchange e;
    e.cache_key = j.at("cache_key").get<std::string>();
    e.model_name = j.at("model_name").get<std::string>();
    e.template_hash = j.at("template_hash").get<std::string>();
    e.instance_id = j.at("instance_id").get<std::string>();
    e.sample_index = j.at("sample_index").get<int>();
    e.method = parse_uq_method(j.at("method").get<std::string>());
    e.level = j.at("level").get<int>();
    e.status = parse_exchange_status(j.at("status").get<std::string>());
    e.error = j.at("error").get<std::string>();
    e.timestamp = j.at("timestamp").get<std::string>();
    e.request_body = j.at("request_body").get<std::string>();
    e.response_body = j.at("response_body").get<std::string>();
    return e;
  } catch (const GatewayError&) {
    throw;
  } catch (const std::exception& ex) {
    throw GatewayError(std::string("malformed cache entry: ") + ex.what());
  }
}

std::string cache_key(std::string_view model_name, std::string_view template_hash, std::string_view instance_id,
                      int sample_index) {
  const std::string index = std::to_string(sample_index);
  return tuple_digest({"tsa-exchange-v1", model_name, template_hash, instance_id, index});
}

std::optional<std::string> parse_error_for(UqMethod method, std::string_view response_body) {
  switch (method) {
    case UqMethod::Scs:
      if (auto r = parse_label(response_body); !r) return r.error();
      break;
    case UqMethod::Dp:
      if (auto r = parse_dp(response_body); !r) return r.error();
      break;
    case UqMethod::Vca:
      if (auto r = parse_vca(response_body); !r) return r.error();
      break;
  }
  return std::nullopt;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --- cache -----------------------------------------------------------------

ExchangeCache::ExchangeCache(fs::path root) : root_(std::move(root)) {}

fs::path ExchangeCache::path_for(std::string_view key) const {
  if (key.size() < 3) throw GatewayError("cache key '" + std::string(key) + "' is too short");
  return root_ / std::string(key.substr(0, 2)) / (std::string(key) + ".json");
}

std::optional<RawExchange> ExchangeCache::find(std::string_view key) const {
  const fs::path path = path_for(key);
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  try {
    return exchange_from_json(read_text(path));
  } catch (const GatewayError& e) {
    throw GatewayError(path.string() + ": " + e.what());
  }
}

RawExchange ExchangeCache::store(const RawExchange& exchange) {
  std::lock_guard lock(write_mutex_);
  const fs::path path = path_for(exchange.cache_key);
  if (auto existing = find(exchange.cache_key); existing && existing->status != ExchangeStatus::TransportFailed) {
    return *existing;
  }
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << exchange_to_json(exchange);
    if (!out) throw GatewayError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
  return exchange;
}

std::vector<fs::path> ExchangeCache::entries() const {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(root_, ec)) return out;
  for (const auto& shard : fs::directory_iterator(root_)) {
    if (!shard.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(shard.path())) {
      if (file.is_regular_file() && file.path().extension() == ".json") out.push_back(file.path());
    }
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  return out;
}

ExchangeCache::VerifyReport ExchangeCache::verify() const {
  VerifyReport report;
  for (const fs::path& path : entries()) {
    ++report.entries;
    RawExchange e;
    try {
      e = exchange_from_json(read_text(path));
    } catch (const GatewayError& ex) {
      report.problems.push_back(path.string() + ": " + ex.what());
      continue;
    }
    const std::string expected = cache_key(e.model_name, e.template_hash, e.instance_id, e.sample_index);
    if (e.cache_key != expected) {
      report.problems.push_back(path.string() + ": stored key does not match its fields");
    } else if (path.stem() != e.cache_key) {
      report.problems.push_back(path.string() + ": file name does not match key");
    } else if (path.parent_path().filename() != e.cache_key.substr(0, 2)) {
      report.problems.push_back(path.string() + ": entry is in the wrong shard directory");
    }
    if (e.status == ExchangeStatus::TransportFailed) {
      ++report.transport_failed;
      continue;
    }
    const bool parses = !parse_error_for(e.method, e.response_body);
    if (parses) {
      ++report.ok;
    } else {
      ++report.parse_failed;
    }
    if (parses != (e.status == ExchangeStatus::Ok)) {
      report.problems.push_back(path.string() + ": status '" + std::string(to_string(e.status)) +
                                "' disagrees with the response body");
    }
  }
  return report;
}

// --- HTTP backends ---------------------------------------------------------

OpenAiCompatibleBackend::OpenAiCompatibleBackend(BackendConfig config) : config_(std::move(config)) {}

std::string OpenAiCompatibleBackend::request_body(const RenderedPrompt& prompt, double temperature) const {
  ordered_json body;
  body["model"] = config_.model_name;
  body["messages"] = chat_messages(prompt);
  body["temperature"] = temperature;
  return body.dump();
}

TransportResult OpenAiCompatibleBackend::send(const RenderedPrompt&, int, const std::string& body) {
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      TransportResult out;
      out.error = "environment variable " + config_.api_key_env + " is not set";
      return out;
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  return extract_content(post_json(config_, "/v1/chat/completions", body, headers), "/choices/0/message/content");
}

OllamaCompatibleBackend::OllamaCompatibleBackend(BackendConfig config) : config_(std::move(config)) {}

std::string OllamaCompatibleBackend::request_body(const RenderedPrompt& prompt, double temperature) const {
  ordered_json body;
  body["model"] = config_.model_name;
  body["messages"] = chat_messages(prompt);
  body["options"] = {{"temperature", temperature}};
  body["stream"] = false;
  return body.dump();
}

TransportResult OllamaCompatibleBackend::send(const RenderedPrompt&, int, const std::string& body) {
  return extract_content(post_json(config_, "/api/chat", body, {}), "/message/content");
}

std::unique_ptr<ChatBackend> make_http_backend(const BackendConfig& config) {
  switch (config.kind) {
    case BackendKind::OpenAiCompatible:
      return std::make_unique<OpenAiCompatibleBackend>(config);
    case BackendKind::OllamaCompatible:
      return std::make_unique<OllamaCompatibleBackend>(config);
    case BackendKind::Mock:
      break;
  }
  throw GatewayError("make_http_backend called for a mock backend");
}

// --- mock ------------------------------------------------------------------

MockScript MockScript::from_json(std::string_view text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw GatewayError("mock script is not valid JSON");
  const ordered_json* list = &j;
  if (j.is_object()) {
    if (!j.contains("responses")) throw GatewayError("mock script object needs a \"responses\" array");
    list = &j.at("responses");
  }
  if (!list->is_array()) throw GatewayError("mock script responses must be an array");

  MockScript script;
  std::size_t n = 0;
  for (const auto& entry : *list) {
    const std::string where = "mock script entry " + std::to_string(n++);
    try {
      const std::string id = entry.at("instance_id").get<std::string>();
      const UqMethod method = parse_uq_method(entry.at("method").get<std::string>());
      auto reply_of = [&](const ordered_json& value) {
        if (!value.is_string()) throw GatewayError(where + ": response must be a string");
        return Reply{value.get<std::string>(), false};
      };
      if (entry.contains("responses")) {
        int index = 0;
        for (const auto& r : entry.at("responses")) script.set(id, method, index++, reply_of(r));
        continue;
      }
      Reply reply;
      if (entry.contains("transport_error")) {
        reply = Reply{entry.at("transport_error").get<std::string>(), true};
      } else {
        reply = reply_of(entry.at("response"));
      }
      std::optional<int> index;
      if (entry.contains("sample_index")) index = entry.at("sample_index").get<int>();
      script.set(id, method, index, std::move(reply));
    } catch (const GatewayError&) {
      throw;
    } catch (const std::exception& e) {
      throw GatewayError(where + ": " + e.what());
    }
  }
  return script;
}

MockScript MockScript::load(const fs::path& path) {
  try {
    return from_json(read_text(path));
  } catch (const GatewayError& e) {
    throw GatewayError(path.string() + ": " + e.what());
  }
}

void MockScript::set(std::string instance_id, UqMethod method, std::optional<int> sample_index, Reply reply) {
  if (sample_index) {
    exact_[{std::move(instance_id), method, *sample_index}] = std::move(reply);
  } else {
    any_sample_[{std::move(instance_id), method}] = std::move(reply);
  }
}

std::optional<MockScript::Reply> MockScript::lookup(std::string_view instance_id, UqMethod method,
                                                    int sample_index) const {
  const std::string id(instance_id);
  if (auto it = exact_.find(std::make_tuple(id, method, sample_index)); it != exact_.end()) return it->second;
  if (auto it = any_sample_.find(std::make_tuple(id, method)); it != any_sample_.end()) return it->second;
  return std::nullopt;
}

MockBackend::MockBackend(MockScript script, std::unordered_map<std::string, SentimentLabel> gold_by_id)
    : script_(std::move(script)), gold_by_id_(std::move(gold_by_id)) {}

std::string MockBackend::request_body(const RenderedPrompt& prompt, double temperature) const {
  ordered_json body;
  body["messages"] = chat_messages(prompt);
  body["temperature"] = temperature;
  return body.dump();
}

TransportResult MockBackend::send(const RenderedPrompt& prompt, int sample_index, const std::string&) {
  TransportResult out;
  if (auto reply = script_.lookup(prompt.instance_id, prompt.method, sample_index)) {
    if (reply->transport_error) {
      out.error = reply->text;
    } else {
      out.ok = true;
      out.content = reply->text;
    }
    return out;
  }
  auto gold = gold_by_id_.find(prompt.instance_id);
  if (gold == gold_by_id_.end()) {
    out.error = "mock has no reply for instance '" + prompt.instance_id + "'";
    return out;
  }
  out.ok = true;
  out.content = echo_gold(prompt.method, gold->second);
  return out;
}

std::string MockBackend::echo_gold(UqMethod method, SentimentLabel gold) {
  const std::string word(to_string(gold));
  switch (method) {
    case UqMethod::Scs:
      return word;
    case UqMethod::Dp: {
      ordered_json j;
      for (int k = 1; k <= 6; ++k) j["targeted sentiment " + std::to_string(k)] = word;
      return j.dump();
    }
    case UqMethod::Vca: {
      auto pct = [&](SentimentLabel l) { return l == gold ? "100" : "0"; };
      return std::string("[") + pct(SentimentLabel::Positive) + ", " + pct(SentimentLabel::Neutral) + ", " +
             pct(SentimentLabel::Negative) + "]";
    }
  }
  return word;
}

// --- dispatch --------------------------------------------------------------

Gateway::Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend, std::shared_ptr<ExchangeCache> cache)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  config_.validate();
  if (!backend_ || !cache_) throw GatewayError("gateway needs a backend and a cache");
}

RawExchange Gateway::complete(const RenderedPrompt& prompt, int sample_index) {
  const std::string key = cache_key(config_.model_name, prompt.template_hash, prompt.instance_id, sample_index);
  if (auto cached = cache_->find(key); cached && cached->status != ExchangeStatus::TransportFailed) {
    ++cache_hits_;
    return *cached;
  }

  RawExchange exchange;
  exchange.cache_key = key;
  exchange.model_name = config_.model_name;
  exchange.template_hash = prompt.template_hash;
  exchange.instance_id = prompt.instance_id;
  exchange.sample_index = sample_index;
  exchange.method = prompt.method;
  exchange.level = prompt.level.value();
  exchange.request_body = backend_->request_body(prompt, config_.temperature_for(prompt.method));

  TransportResult result;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    ++network_calls_;
    result = backend_->send(prompt, sample_index, exchange.request_body);
    if (result.ok || !result.retryable) break;
    if (attempt < config_.max_retries) sleeper_(config_.backoff_base * (1LL << std::min(attempt, 16)));
  }

  exchange.timestamp = utc_timestamp();
  if (result.ok) {
    exchange.response_body = result.content;
    if (auto err = parse_error_for(prompt.method, result.content)) {
      exchange.status = ExchangeStatus::ParseFailed;
      exchange.error = *err;
    }
  } else {
    exchange.status = ExchangeStatus::TransportFailed;
    exchange.error = result.error;
  }
  return cache_->store(exchange);
}

Gateway::BatchResult Gateway::complete_all(std::span<const Request> requests) {
  BatchResult out;
  out.exchanges.resize(requests.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex failure_mutex;
  std::optional<std::size_t> first_failure;
  std::exception_ptr error;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        RawExchange e = complete(*requests[i].prompt, requests[i].sample_index);
        const bool failed = e.status == ExchangeStatus::TransportFailed;
        if (failed) {
          std::lock_guard lock(failure_mutex);
          if (!first_failure || i < *first_failure) {
            first_failure = i;
            out.failure = "instance '" + e.instance_id + "' sample " + std::to_string(e.sample_index) + ": " + e.error;
          }
          stop.store(true);
        }
        out.exchanges[i] = std::move(e);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!error) error = std::current_exception();
        stop.store(true);
      }
    }
  };

  const std::size_t threads = std::min(config_.max_in_flight, requests.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace tsa
