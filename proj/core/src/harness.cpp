#include "tsa/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "text_util.hpp"
#include "tsa/promptkit.hpp"
#include "tsa/uncertainty.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void check_keys(const ordered_json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      if (key == "api_key") throw ConfigError(where + ": API keys must come from the environment (use api_key_env)");
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_field(const ordered_json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": key '" + key + "' is missing or has the wrong type");
  }
}

template <typename T>
T get_field_or(const ordered_json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get_field<T>(obj, key, where);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

CsvColumns parse_columns(const ordered_json& j, const std::string& where) {
  check_keys(j,
             {"id", "text", "target_entity", "gold", "language", "source_dataset", "raw_labels", "raw_label_prefix",
              "default_language", "default_source"},
             where);
  CsvColumns c;
  c.id = get_field_or<std::string>(j, "id", c.id, where);
  c.text = get_field_or<std::string>(j, "text", c.text, where);
  c.target_entity = get_field_or<std::string>(j, "target_entity", c.target_entity, where);
  c.gold = get_field_or<std::string>(j, "gold", c.gold, where);
  c.language = get_field_or<std::string>(j, "language", c.language, where);
  c.source_dataset = get_field_or<std::string>(j, "source_dataset", c.source_dataset, where);
  c.raw_labels = get_field_or<std::vector<std::string>>(j, "raw_labels", c.raw_labels, where);
  c.raw_label_prefix = get_field_or<std::string>(j, "raw_label_prefix", c.raw_label_prefix, where);
  c.default_language = get_field_or<std::string>(j, "default_language", c.default_language, where);
  if (j.contains("default_source")) {
    try {
      c.default_source = parse_source_dataset(get_field<std::string>(j, "default_source", where));
    } catch (const DatasetError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return c;
}

BackendConfig parse_backend(const ordered_json& j, const fs::path& base, const std::string& where) {
  check_keys(j,
             {"kind", "base_url", "model_name", "api_key_env", "temperature", "scs_temperature", "timeout_ms",
              "max_retries", "max_in_flight", "backoff_ms", "mock_script"},
             where);
  BackendConfig b;
  try {
    b.kind = parse_backend_kind(get_field<std::string>(j, "kind", where));
  } catch (const GatewayError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  b.model_name = get_field<std::string>(j, "model_name", where);
  b.base_url = get_field_or<std::string>(j, "base_url", "", where);
  b.api_key_env = get_field_or<std::string>(j, "api_key_env", "", where);
  b.temperature = get_field_or<double>(j, "temperature", b.temperature, where);
  b.scs_temperature = get_field_or<double>(j, "scs_temperature", b.scs_temperature, where);
  b.timeout = std::chrono::milliseconds(get_field_or<std::int64_t>(j, "timeout_ms", b.timeout.count(), where));
  b.max_retries = get_field_or<int>(j, "max_retries", b.max_retries, where);
  const auto in_flight = get_field_or<std::int64_t>(j, "max_in_flight", 4, where);
  if (in_flight < 1) throw ConfigError(where + ": max_in_flight must be at least 1");
  b.max_in_flight = static_cast<std::size_t>(in_flight);
  b.backoff_base = std::chrono::milliseconds(get_field_or<std::int64_t>(j, "backoff_ms", b.backoff_base.count(), where));
  if (j.contains("mock_script")) b.mock_script = resolve(base, get_field<std::string>(j, "mock_script", where));
  if (b.kind != BackendKind::Mock && !b.mock_script.empty()) {
    throw ConfigError(where + ": mock_script is only valid for mock backends");
  }
  return b;
}

/// Prompts of one (level, method) for every instance, in instance order.
struct PlannedCell {
  int level;
  UqMethod method;
  std::size_t samples;
  std::vector<RenderedPrompt> prompts;
};

std::vector<PlannedCell> plan_cells(const RunConfig& config, const std::vector<HeadlineInstance>& instances) {
  FragmentLibrary library = [&] {
    try {
      return FragmentLibrary::load(config.fragments_dir);
    } catch (const PromptError& e) {
      throw ConfigError(e.what());
    }
  }();
  std::vector<PlannedCell> cells;
  for (int level : config.levels) {
    for (UqMethod method : config.methods) {
      PlannedCell cell{level, method, method == UqMethod::Scs ? config.scs_samples : 1, {}};
      cell.prompts.reserve(instances.size());
      for (const auto& instance : instances) {
        cell.prompts.push_back(render_prompt(PrescriptivenessLevel(level), method, instance, library));
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::shared_ptr<ChatBackend> build_backend(const BackendConfig& b, const std::vector<HeadlineInstance>& all,
                                           const RunOptions& options) {
  if (b.kind == BackendKind::Mock) {
    MockScript script;
    if (!b.mock_script.empty()) {
      try {
        script = MockScript::load(b.mock_script);
      } catch (const GatewayError& e) {
        throw ConfigError(e.what());
      }
    }
    std::unordered_map<std::string, SentimentLabel> gold;
    for (const auto& instance : all) gold.emplace(instance.id, instance.gold);
    return std::make_shared<MockBackend>(std::move(script), std::move(gold));
  }
  if (options.backend_factory) return options.backend_factory(b);
  return make_http_backend(b);
}

std::string missing_line(const std::string& model, const PlannedCell& cell, const std::string& id, std::size_t sample,
                         const std::string& why) {
  return model + " level " + std::to_string(cell.level) + " " + std::string(to_string(cell.method)) + " instance '" +
         id + "' sample " + std::to_string(sample) + ": " + why;
}

CellReport score_cell(const RunConfig& config, const std::string& model, const PlannedCell& cell,
                      const std::vector<HeadlineInstance>& instances, const ExchangeCache& cache,
                      std::vector<std::string>& missing) {
  CellReport report;
  report.model = model;
  report.level = cell.level;
  report.method = cell.method;
  report.instances = instances.size();
  report.requests = instances.size() * cell.samples;

  std::vector<ScoredInstance> scored;
  std::vector<LabelPair> pairs;
  std::vector<VoteBinInput> vote_inputs;
  bool votes_available = cell.method != UqMethod::Vca;

  for (std::size_t i = 0; i < instances.size(); ++i) {
    const HeadlineInstance& instance = instances[i];
    const RenderedPrompt& prompt = cell.prompts[i];

    std::vector<std::string> bodies;
    for (std::size_t s = 0; s < cell.samples; ++s) {
      const std::string key = cache_key(model, prompt.template_hash, instance.id, static_cast<int>(s));
      std::optional<RawExchange> exchange;
      try {
        exchange = cache.find(key);
      } catch (const GatewayError& e) {
        missing.push_back(missing_line(model, cell, instance.id, s, std::string("unreadable entry: ") + e.what()));
        continue;
      }
      if (!exchange) {
        missing.push_back(missing_line(model, cell, instance.id, s, "not in cache"));
      } else if (exchange->status == ExchangeStatus::TransportFailed) {
        missing.push_back(missing_line(model, cell, instance.id, s, "transport failed: " + exchange->error));
      } else {
        bodies.push_back(exchange->response_body);
      }
    }
    if (bodies.size() != cell.samples) continue;

    std::optional<PredictionDistribution> distribution;
    std::vector<SentimentLabel> votes;
    switch (cell.method) {
      case UqMethod::Scs: {
        for (const auto& body : bodies) {
          auto label = parse_label(body);
          if (label) {
            votes.push_back(label.value());
          } else {
            ++report.parse_failures;
          }
        }
        if (!votes.empty()) distribution = aggregate_scs(votes, config.scs_samples);
        break;
      }
      case UqMethod::Dp: {
        auto parsed = parse_dp(bodies.front());
        if (parsed) {
          votes = parsed.value();
          distribution = aggregate_dp(votes);
        } else {
          ++report.parse_failures;
        }
        break;
      }
      case UqMethod::Vca: {
        auto parsed = parse_vca(bodies.front());
        if (parsed) {
          distribution = aggregate_vca(parsed.value());
        } else {
          ++report.parse_failures;
        }
        break;
      }
    }
    if (!distribution) continue;

    scored.push_back({instance.id, instance.gold, *distribution});
    pairs.push_back({instance.gold, distribution->argmax});
    if (!instance.raw_labels) votes_available = false;
    if (votes_available) vote_inputs.push_back({instance.raw_labels, votes, instance.gold, distribution->argmax});
  }

  report.scored = scored.size();
  if (!pairs.empty()) report.f1 = macro_f1(pairs);
  if (scored.size() >= config.ece_bins && !scored.empty()) report.ece = ece(scored, config.ece_bins);
  if (votes_available && !vote_inputs.empty()) report.vote_bins = vote_bin_f1(vote_inputs);
  return report;
}

std::vector<CellReport> score_backend(const RunConfig& config, const std::string& model,
                                      const std::vector<PlannedCell>& cells,
                                      const std::vector<HeadlineInstance>& instances, const ExchangeCache& cache,
                                      std::vector<std::string>& missing) {
  std::vector<CellReport> out;
  for (const auto& cell : cells) out.push_back(score_cell(config, model, cell, instances, cache, missing));
  return out;
}

EvaluationReport report_skeleton(const RunConfig& config, const std::vector<HeadlineInstance>& instances) {
  EvaluationReport report;
  std::set<SourceDataset> sources;
  for (const auto& instance : instances) sources.insert(instance.source);
  if (sources.size() == 1) report.source_dataset = std::string(to_string(*sources.begin()));
  report.split = std::string(to_string(config.dataset.split));
  report.ece_bins = config.ece_bins;
  report.coverage_floor = config.coverage_floor;
  report.include_reference_baselines = config.include_reference_baselines;
  return report;
}

}  // namespace

CsvColumns csv_columns_from_json(std::string_view text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("column mapping is not valid JSON");
  return parse_columns(j, "columns");
}

RunConfig RunConfig::from_json(std::string_view text, const fs::path& base_dir) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  const std::string where = "config";
  check_keys(j,
             {"dataset", "fragments_dir", "backends", "levels", "methods", "scs_samples", "ece_bins", "coverage_floor",
              "cache_dir", "output_dir", "include_reference_baselines"},
             where);

  RunConfig c;
  if (!j.contains("dataset")) throw ConfigError("config: key 'dataset' is missing");
  const ordered_json& d = j.at("dataset");
  check_keys(d, {"path", "format", "columns", "split", "split_seed"}, "config.dataset");
  c.dataset.path = resolve(base_dir, get_field<std::string>(d, "path", "config.dataset"));
  try {
    c.dataset.format = parse_dataset_format(get_field_or<std::string>(d, "format", "canonical-jsonl", "config.dataset"));
    c.dataset.split = parse_split_part(get_field_or<std::string>(d, "split", "test", "config.dataset"));
  } catch (const DatasetError& e) {
    throw ConfigError(std::string("config.dataset: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.dataset: ") + e.what());
  }
  c.dataset.split_seed = get_field_or<std::uint64_t>(d, "split_seed", 42, "config.dataset");
  if (d.contains("columns")) c.dataset.columns = parse_columns(d.at("columns"), "config.dataset.columns");

  c.fragments_dir = j.contains("fragments_dir") ? resolve(base_dir, get_field<std::string>(j, "fragments_dir", where))
                                                : default_data_dir() / "fragments" / "stone";

  if (!j.contains("backends") || !j.at("backends").is_array()) throw ConfigError("config: 'backends' must be an array");
  std::size_t n = 0;
  for (const auto& b : j.at("backends")) {
    c.backends.push_back(parse_backend(b, base_dir, "config.backends[" + std::to_string(n++) + "]"));
  }

  c.levels = get_field<std::vector<int>>(j, "levels", where);
  for (const auto& m : get_field<std::vector<std::string>>(j, "methods", where)) {
    try {
      c.methods.push_back(parse_uq_method(m));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.methods: ") + e.what());
    }
  }
  const auto samples = get_field_or<std::int64_t>(j, "scs_samples", 6, where);
  const auto bins = get_field_or<std::int64_t>(j, "ece_bins", 10, where);
  if (samples < 1) throw ConfigError("config: scs_samples must be at least 1");
  if (bins < 1) throw ConfigError("config: ece_bins must be at least 1");
  c.scs_samples = static_cast<std::size_t>(samples);
  c.ece_bins = static_cast<std::size_t>(bins);
  c.coverage_floor = get_field_or<double>(j, "coverage_floor", 0.9, where);
  c.cache_dir = resolve(base_dir, get_field<std::string>(j, "cache_dir", where));
  c.output_dir = resolve(base_dir, get_field<std::string>(j, "output_dir", where));
  c.include_reference_baselines = get_field_or<bool>(j, "include_reference_baselines", false, where);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + file.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return from_json(text, fs::absolute(file).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void RunConfig::validate() const {
  if (backends.empty()) throw ConfigError("config: at least one backend is required");
  if (levels.empty()) throw ConfigError("config: at least one level is required");
  if (methods.empty()) throw ConfigError("config: at least one method is required");
  if (scs_samples < 1) throw ConfigError("config: scs_samples must be at least 1");
  if (ece_bins < 1) throw ConfigError("config: ece_bins must be at least 1");
  if (!(coverage_floor >= 0.0 && coverage_floor <= 1.0)) throw ConfigError("config: coverage_floor must be in [0, 1]");
  std::set<int> seen_levels;
  for (int level : levels) {
    if (level < PrescriptivenessLevel::kMin || level > PrescriptivenessLevel::kMax) {
      throw ConfigError("config: level " + std::to_string(level) + " is outside [1, 6]");
    }
    if (!seen_levels.insert(level).second) throw ConfigError("config: level " + std::to_string(level) + " repeated");
  }
  std::set<UqMethod> seen_methods;
  for (UqMethod m : methods) {
    if (!seen_methods.insert(m).second) throw ConfigError("config: method " + std::string(to_string(m)) + " repeated");
  }
  std::set<std::string> names;
  for (const auto& b : backends) {
    try {
      b.validate();
    } catch (const GatewayError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (!names.insert(b.model_name).second) throw ConfigError("config: model_name '" + b.model_name + "' repeated");
  }
  if (cache_dir.empty()) throw ConfigError("config: cache_dir is required");
  if (output_dir.empty()) throw ConfigError("config: output_dir is required");
}

bool EvaluationReport::any_unreliable() const {
  return std::any_of(cells.begin(), cells.end(), [&](const CellReport& c) { return unreliable(c); });
}

bool EvaluationReport::any_backend_failed() const {
  return std::any_of(backends.begin(), backends.end(), [](const BackendOutcome& b) { return !b.completed; });
}

int EvaluationReport::exit_code() const {
  if (any_backend_failed()) return 3;
  if (any_unreliable()) return 4;
  return 0;
}

void log_line(std::ostream* log, const std::string& message) {
  if (log != nullptr) *log << utc_timestamp() << ' ' << message << '\n' << std::flush;
}

std::vector<HeadlineInstance> load_evaluation_instances(const RunConfig& config,
                                                        std::vector<HeadlineInstance>* all_instances) {
  LoadedDataset loaded = [&] {
    try {
      return load_dataset(config.dataset.path, config.dataset.format, config.dataset.columns);
    } catch (const DatasetError& e) {
      throw ConfigError(e.what());
    }
  }();
  std::vector<HeadlineInstance> selected;
  if (config.dataset.split == SplitPart::All) {
    selected = loaded.instances;
  } else {
    const DatasetSplit split = split_dataset(loaded.instances, config.dataset.split_seed);
    selected = select_split(loaded.instances, split, config.dataset.split);
  }
  if (selected.empty()) throw ConfigError("dataset selection '" + std::string(to_string(config.dataset.split)) +
                                          "' of '" + config.dataset.path.string() + "' is empty");
  std::sort(selected.begin(), selected.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (all_instances != nullptr) *all_instances = std::move(loaded.instances);
  return selected;
}

EvaluationReport run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  std::vector<HeadlineInstance> all;
  const std::vector<HeadlineInstance> instances = load_evaluation_instances(config, &all);
  const std::vector<PlannedCell> cells = plan_cells(config, instances);
  auto cache = std::make_shared<ExchangeCache>(config.cache_dir);

  // Construct every backend up front so that a bad mock script is a config
  // error before any request goes out.
  std::vector<std::shared_ptr<ChatBackend>> backends;
  for (const auto& b : config.backends) backends.push_back(build_backend(b, all, options));

  EvaluationReport report = report_skeleton(config, instances);
  for (std::size_t bi = 0; bi < config.backends.size(); ++bi) {
    const BackendConfig& b = config.backends[bi];
    Gateway gateway(b, backends[bi], cache);

    std::vector<Gateway::Request> requests;
    for (const auto& cell : cells) {
      for (const auto& prompt : cell.prompts) {
        for (std::size_t s = 0; s < cell.samples; ++s) requests.push_back({&prompt, static_cast<int>(s)});
      }
    }
    log_line(options.log, "backend " + b.model_name + ": dispatching " + std::to_string(requests.size()) + " requests");
    const Gateway::BatchResult batch = gateway.complete_all(requests);
    log_line(options.log, "backend " + b.model_name + ": " + std::to_string(gateway.network_calls()) +
                              " network calls, " + std::to_string(gateway.cache_hits()) + " cache hits");

    BackendOutcome outcome{b.model_name, true, ""};
    if (batch.failure) {
      outcome.completed = false;
      outcome.error = *batch.failure;
      log_line(options.log, "backend " + b.model_name + ": aborted: " + outcome.error);
      report.backends.push_back(outcome);
      continue;
    }
    std::vector<std::string> missing;
    std::vector<CellReport> scored = score_backend(config, b.model_name, cells, instances, *cache, missing);
    if (!missing.empty()) {
      outcome.completed = false;
      outcome.error = missing.front();
      report.backends.push_back(outcome);
      continue;
    }
    report.backends.push_back(outcome);
    for (auto& c : scored) report.cells.push_back(std::move(c));
  }
  return report;
}

EvaluationReport score(const RunConfig& config) {
  config.validate();
  const std::vector<HeadlineInstance> instances = load_evaluation_instances(config);
  const std::vector<PlannedCell> cells = plan_cells(config, instances);
  const ExchangeCache cache(config.cache_dir);

  EvaluationReport report = report_skeleton(config, instances);
  std::vector<std::string> missing;
  for (const auto& b : config.backends) {
    std::vector<CellReport> scored = score_backend(config, b.model_name, cells, instances, cache, missing);
    report.backends.push_back({b.model_name, true, ""});
    for (auto& c : scored) report.cells.push_back(std::move(c));
  }
  if (!missing.empty()) {
    throw MissingExchangesError(std::to_string(missing.size()) + " required exchanges are missing from cache '" +
                                    config.cache_dir.string() + "'",
                                std::move(missing));
  }
  return report;
}

}  // namespace tsa
