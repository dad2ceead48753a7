#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <unistd.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tsa/gateway.hpp"

using tsa::SentimentLabel;
using tsa::UqMethod;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("tsa-gw-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
             std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

tsa::RenderedPrompt prompt(std::string id, UqMethod method = UqMethod::Scs) {
  tsa::RenderedPrompt p;
  p.system = "You classify sentiment.";
  p.user = "Classify " + id;
  p.method = method;
  p.instance_id = std::move(id);
  p.template_hash = std::string(64, 'a');
  return p;
}

tsa::BackendConfig mock_config() {
  tsa::BackendConfig c;
  c.model_name = "mock-model";
  c.backoff_base = std::chrono::milliseconds(1);
  return c;
}

/// Replays a fixed sequence of transport results and counts calls.
class ScriptedBackend : public tsa::ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<tsa::TransportResult> results) : results_(std::move(results)) {}
  std::string request_body(const tsa::RenderedPrompt& p, double t) const override {
    return p.user + "@" + std::to_string(t);
  }
  tsa::TransportResult send(const tsa::RenderedPrompt&, int sample_index, const std::string&) override {
    std::lock_guard lock(mutex_);
    ++calls;
    if (results_.empty()) return {true, false, 200, "neutral sample " + std::to_string(sample_index), ""};
    auto r = results_.front();
    if (results_.size() > 1) results_.erase(results_.begin());
    return r;
  }
  int calls = 0;

 private:
  std::mutex mutex_;
  std::vector<tsa::TransportResult> results_;
};

tsa::TransportResult ok(std::string content) { return {true, false, 200, std::move(content), ""}; }
tsa::TransportResult fail(bool retryable) { return {false, retryable, retryable ? 500 : 400, "", "boom"}; }

}  // namespace

TEST(CacheKey, DistinctPerField) {
  const auto k = tsa::cache_key("m", "h", "i", 0);
  EXPECT_EQ(k.size(), 64u);
  EXPECT_EQ(k, tsa::cache_key("m", "h", "i", 0));
  std::set<std::string> keys{k, tsa::cache_key("m2", "h", "i", 0), tsa::cache_key("m", "h2", "i", 0),
                             tsa::cache_key("m", "h", "i2", 0), tsa::cache_key("m", "h", "i", 1)};
  EXPECT_EQ(keys.size(), 5u);
  // Field boundaries matter.
  EXPECT_NE(tsa::cache_key("ab", "c", "i", 0), tsa::cache_key("a", "bc", "i", 0));
}

TEST(Exchange, JsonRoundTrip) {
  tsa::RawExchange e;
  e.cache_key = tsa::cache_key("m", "h", "i", 3);
  e.model_name = "m";
  e.template_hash = "h";
  e.instance_id = "i";
  e.sample_index = 3;
  e.method = UqMethod::Vca;
  e.level = 4;
  e.request_body = "{\"x\":1}";
  e.response_body = "[1, 2, \"3\"]\nünïcode";
  e.timestamp = "2024-01-01T00:00:00Z";
  e.status = tsa::ExchangeStatus::ParseFailed;
  e.error = "nope";
  EXPECT_EQ(tsa::exchange_from_json(tsa::exchange_to_json(e)), e);
  EXPECT_THROW(tsa::exchange_from_json("{}"), tsa::GatewayError);
}

TEST(Gateway, SecondCallIsServedFromCache) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector{ok("negative")});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  const auto p = prompt("h1");
  const auto first = gw.complete(p, 0);
  const auto second = gw.complete(p, 0);
  EXPECT_EQ(first, second);
  EXPECT_EQ(gw.network_calls(), 1u);
  EXPECT_EQ(gw.cache_hits(), 1u);

  std::ifstream in(tsa::ExchangeCache(dir.path()).path_for(first.cache_key));
  ASSERT_TRUE(in);
  EXPECT_EQ(first.cache_key.substr(0, 2), tsa::ExchangeCache(dir.path()).path_for(first.cache_key).parent_path().filename());

  tsa::Gateway fresh(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  EXPECT_EQ(fresh.complete(p, 0), first);
  EXPECT_EQ(fresh.network_calls(), 0u);
}

TEST(Gateway, ScriptedMockAnswer) {
  TempDir dir;
  tsa::MockScript script;
  script.set("h1", UqMethod::Scs, std::nullopt, {"negative", false});
  auto backend = std::make_shared<tsa::MockBackend>(script, std::unordered_map<std::string, SentimentLabel>{});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  const auto e = gw.complete(prompt("h1"), 2);
  EXPECT_EQ(e.response_body, "negative");
  EXPECT_EQ(e.status, tsa::ExchangeStatus::Ok);
}

TEST(Gateway, UnscriptedMockWithoutGoldIsATransportFailure) {
  TempDir dir;
  auto backend = std::make_shared<tsa::MockBackend>(tsa::MockScript{}, std::unordered_map<std::string, SentimentLabel>{});
  auto cfg = mock_config();
  cfg.max_retries = 0;
  tsa::Gateway gw(cfg, backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  EXPECT_EQ(gw.complete(prompt("unknown"), 0).status, tsa::ExchangeStatus::TransportFailed);
}

TEST(Gateway, SixSamplesGiveSixKeys) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector<tsa::TransportResult>{});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  std::set<std::string> keys, bodies;
  for (int s = 0; s < 6; ++s) {
    const auto e = gw.complete(prompt("h1"), s);
    keys.insert(e.cache_key);
    bodies.insert(e.response_body);
  }
  EXPECT_EQ(keys.size(), 6u);
  EXPECT_EQ(bodies.size(), 6u);
  EXPECT_EQ(tsa::ExchangeCache(dir.path()).entries().size(), 6u);
}

TEST(Gateway, TemperatureDependsOnMethod) {
  auto cfg = mock_config();
  cfg.temperature = 0.0;
  cfg.scs_temperature = 0.7;
  EXPECT_EQ(cfg.temperature_for(UqMethod::Scs), 0.7);
  EXPECT_EQ(cfg.temperature_for(UqMethod::Dp), 0.0);
  EXPECT_EQ(cfg.temperature_for(UqMethod::Vca), 0.0);
}

TEST(Gateway, RetriesRetryableFailuresWithBackoff) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector{fail(true), fail(true), ok("positive")});
  auto cfg = mock_config();
  cfg.backoff_base = std::chrono::milliseconds(100);
  tsa::Gateway gw(cfg, backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  std::vector<std::chrono::milliseconds> sleeps;
  gw.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto e = gw.complete(prompt("h1"), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::Ok);
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100),
                                                            std::chrono::milliseconds(200)}));
}

TEST(Gateway, NonRetryableFailureIsNotRetried) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector{fail(false), ok("positive")});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  gw.set_sleeper([](auto) {});
  EXPECT_EQ(gw.complete(prompt("h1"), 0).status, tsa::ExchangeStatus::TransportFailed);
  EXPECT_EQ(backend->calls, 1);
}

TEST(Gateway, TransportFailureIsRetriedOnLaterRun) {
  TempDir dir;
  auto cache = std::make_shared<tsa::ExchangeCache>(dir.path());
  auto cfg = mock_config();
  cfg.max_retries = 1;
  auto failing = std::make_shared<ScriptedBackend>(std::vector{fail(true)});
  tsa::Gateway first(cfg, failing, cache);
  first.set_sleeper([](auto) {});
  const auto failed = first.complete(prompt("h1"), 0);
  EXPECT_EQ(failed.status, tsa::ExchangeStatus::TransportFailed);
  EXPECT_EQ(failing->calls, 2);
  ASSERT_TRUE(cache->find(failed.cache_key));

  auto working = std::make_shared<ScriptedBackend>(std::vector{ok("neutral")});
  tsa::Gateway second(cfg, working, cache);
  const auto e = second.complete(prompt("h1"), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::Ok);
  EXPECT_EQ(cache->find(e.cache_key)->response_body, "neutral");
}

TEST(Gateway, ParseFailureIsStoredAndNotResent) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector{ok("no idea")});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  const auto e = gw.complete(prompt("h1"), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::ParseFailed);
  EXPECT_FALSE(e.error.empty());
  gw.complete(prompt("h1"), 0);
  EXPECT_EQ(backend->calls, 1);
}

TEST(Cache, SuccessfulEntriesAreImmutable) {
  TempDir dir;
  tsa::ExchangeCache cache(dir.path());
  tsa::RawExchange e;
  e.model_name = "m";
  e.template_hash = "h";
  e.instance_id = "i";
  e.cache_key = tsa::cache_key("m", "h", "i", 0);
  e.response_body = "positive";
  cache.store(e);
  auto other = e;
  other.response_body = "negative";
  EXPECT_EQ(cache.store(other).response_body, "positive");
  EXPECT_EQ(cache.find(e.cache_key)->response_body, "positive");
  EXPECT_FALSE(cache.find(tsa::cache_key("m", "h", "j", 0)));
}

TEST(Cache, VerifyFindsProblems) {
  TempDir dir;
  auto backend = std::make_shared<ScriptedBackend>(std::vector<tsa::TransportResult>{});
  tsa::Gateway gw(mock_config(), backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  for (int s = 0; s < 3; ++s) gw.complete(prompt("h1"), s);
  tsa::ExchangeCache cache(dir.path());
  auto report = cache.verify();
  EXPECT_EQ(report.entries, 3u);
  EXPECT_EQ(report.ok, 3u);
  EXPECT_TRUE(report.problems.empty());

  const auto victim = cache.entries().front();
  std::ofstream(victim, std::ios::trunc) << "{ not json";
  report = cache.verify();
  EXPECT_EQ(report.problems.size(), 1u);
  EXPECT_THROW(cache.find(victim.stem().string()), tsa::GatewayError);
}

TEST(Gateway, ParallelDispatchIsDeterministic) {
  std::vector<tsa::RenderedPrompt> prompts;
  for (int i = 0; i < 40; ++i) prompts.push_back(prompt("h" + std::to_string(i)));
  std::vector<tsa::Gateway::Request> requests;
  for (const auto& p : prompts) {
    for (int s = 0; s < 3; ++s) requests.push_back({&p, s});
  }
  auto collect = [&](std::size_t in_flight) {
    TempDir dir;
    auto cfg = mock_config();
    cfg.max_in_flight = in_flight;
    tsa::Gateway gw(cfg, std::make_shared<ScriptedBackend>(std::vector<tsa::TransportResult>{}),
                    std::make_shared<tsa::ExchangeCache>(dir.path()));
    auto batch = gw.complete_all(requests);
    EXPECT_FALSE(batch.failure);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : batch.exchanges) out.emplace_back(e->cache_key, e->response_body);
    return out;
  };
  EXPECT_EQ(collect(1), collect(8));
}

TEST(Gateway, BatchStopsAtTransportFailure) {
  TempDir dir;
  auto cfg = mock_config();
  cfg.max_in_flight = 1;
  cfg.max_retries = 0;
  auto backend = std::make_shared<ScriptedBackend>(std::vector{ok("neutral"), fail(false), ok("neutral")});
  tsa::Gateway gw(cfg, backend, std::make_shared<tsa::ExchangeCache>(dir.path()));
  std::vector<tsa::RenderedPrompt> prompts{prompt("a"), prompt("b"), prompt("c"), prompt("d")};
  std::vector<tsa::Gateway::Request> requests;
  for (const auto& p : prompts) requests.push_back({&p, 0});
  const auto batch = gw.complete_all(requests);
  ASSERT_TRUE(batch.failure);
  EXPECT_TRUE(batch.exchanges[0]);
  EXPECT_FALSE(batch.exchanges[3]);
}

TEST(MockScript, ParsesVariants) {
  const auto s = tsa::MockScript::from_json(R"({"responses": [
    {"instance_id": "a", "method": "SCS", "responses": ["positive", "negative"]},
    {"instance_id": "a", "method": "DP", "response": "x"},
    {"instance_id": "b", "method": "VCA", "sample_index": 0, "transport_error": "down"}]})");
  EXPECT_EQ(s.lookup("a", UqMethod::Scs, 1)->text, "negative");
  EXPECT_EQ(s.lookup("a", UqMethod::Dp, 4)->text, "x");
  EXPECT_TRUE(s.lookup("b", UqMethod::Vca, 0)->transport_error);
  EXPECT_FALSE(s.lookup("b", UqMethod::Vca, 1));
  EXPECT_THROW(tsa::MockScript::from_json(R"({"responses": [{"method": "SCS"}]})"), tsa::GatewayError);
}

TEST(BackendConfig, Validation) {
  auto c = mock_config();
  EXPECT_NO_THROW(c.validate());
  c.max_in_flight = 0;
  EXPECT_THROW(c.validate(), tsa::GatewayError);
  c = mock_config();
  c.kind = tsa::BackendKind::OpenAiCompatible;
  EXPECT_THROW(c.validate(), tsa::GatewayError);  // no base_url
  EXPECT_EQ(tsa::parse_backend_kind("openai"), tsa::BackendKind::OpenAiCompatible);
  EXPECT_THROW(tsa::parse_backend_kind("grpc"), tsa::GatewayError);
}

class LocalServer : public ::testing::Test {
 protected:
  void SetUp() override {
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(LocalServer, OpenAiCompatibleRoundTrip) {
  std::string seen_auth, seen_body;
  server_.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Sentiment: positive"}}]})",
                    "application/json");
  });
  ::setenv("TSA_TEST_KEY", "secret-token", 1);
  tsa::BackendConfig cfg;
  cfg.kind = tsa::BackendKind::OpenAiCompatible;
  cfg.base_url = base_url();
  cfg.model_name = "gpt-test";
  cfg.api_key_env = "TSA_TEST_KEY";
  cfg.scs_temperature = 0.7;
  TempDir dir;
  tsa::Gateway gw(cfg, tsa::make_http_backend(cfg), std::make_shared<tsa::ExchangeCache>(dir.path()));
  const auto e = gw.complete(prompt("h1"), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::Ok) << e.error;
  EXPECT_EQ(e.response_body, "Sentiment: positive");
  EXPECT_EQ(seen_auth, "Bearer secret-token");
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body["model"], "gpt-test");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "Classify h1");
  // The key is never persisted.
  EXPECT_EQ(tsa::exchange_to_json(e).find("secret-token"), std::string::npos);
}

TEST_F(LocalServer, OllamaCompatibleRoundTrip) {
  std::string seen_body;
  server_.Post("/api/chat", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(R"({"message":{"role":"assistant","content":"[5, 90, 5]"},"done":true})", "application/json");
  });
  tsa::BackendConfig cfg;
  cfg.kind = tsa::BackendKind::OllamaCompatible;
  cfg.base_url = base_url();
  cfg.model_name = "llama3";
  TempDir dir;
  tsa::Gateway gw(cfg, tsa::make_http_backend(cfg), std::make_shared<tsa::ExchangeCache>(dir.path()));
  const auto e = gw.complete(prompt("h1", UqMethod::Vca), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::Ok) << e.error;
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body["stream"], false);
  EXPECT_DOUBLE_EQ(body["options"]["temperature"].get<double>(), 0.0);
}

TEST_F(LocalServer, ServerErrorThenSuccess) {
  std::atomic<int> hits{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"neutral"}}]})", "application/json");
  });
  tsa::BackendConfig cfg;
  cfg.kind = tsa::BackendKind::OpenAiCompatible;
  cfg.base_url = base_url();
  cfg.model_name = "m";
  TempDir dir;
  tsa::Gateway gw(cfg, tsa::make_http_backend(cfg), std::make_shared<tsa::ExchangeCache>(dir.path()));
  gw.set_sleeper([](auto) {});
  EXPECT_EQ(gw.complete(prompt("h1"), 0).status, tsa::ExchangeStatus::Ok);
  EXPECT_EQ(hits.load(), 2);
}

TEST_F(LocalServer, ClientErrorIsFinal) {
  std::atomic<int> hits{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
  });
  tsa::BackendConfig cfg;
  cfg.kind = tsa::BackendKind::OpenAiCompatible;
  cfg.base_url = base_url();
  cfg.model_name = "m";
  TempDir dir;
  tsa::Gateway gw(cfg, tsa::make_http_backend(cfg), std::make_shared<tsa::ExchangeCache>(dir.path()));
  gw.set_sleeper([](auto) {});
  const auto e = gw.complete(prompt("h1"), 0);
  EXPECT_EQ(e.status, tsa::ExchangeStatus::TransportFailed);
  EXPECT_NE(e.error.find("400"), std::string::npos) << e.error;
  EXPECT_EQ(hits.load(), 1);
}
