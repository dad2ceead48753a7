#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/gateway.hpp"
#include "tsa/label.hpp"
#include "tsa/metrics.hpp"

namespace tsa {

/// Invalid or inconsistent run configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Offline scoring found no usable exchange for some requests.
class MissingExchangesError : public std::runtime_error {
 public:
  MissingExchangesError(std::string message, std::vector<std::string> missing)
      : std::runtime_error(std::move(message)), missing_(std::move(missing)) {}
  /// One "model level method instance sample" line per absent exchange.
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

struct DatasetSpec {
  std::filesystem::path path;
  DatasetFormat format = DatasetFormat::CanonicalJsonl;
  CsvColumns columns;
  /// Which part of the 60/20/20 split to evaluate; All uses every row.
  SplitPart split = SplitPart::Test;
  std::uint64_t split_seed = 42;
};

/// Everything a run needs, read from one JSON file. Relative paths are
/// resolved against the file's directory.
///
///   {
///     "dataset": {"path": "...", "format": "canonical-jsonl",
///                 "columns": {...}, "split": "test", "split_seed": 42},
///     "fragments_dir": "...",            optional, default shipped STONE set
///     "backends": [{"kind": "openai-compatible", "base_url": "...",
///                   "model_name": "...", "api_key_env": "...",
///                   "temperature": 0, "scs_temperature": 0.7,
///                   "timeout_ms": 60000, "max_retries": 3,
///                   "max_in_flight": 4, "backoff_ms": 500,
///                   "mock_script": "..."}],
///     "levels": [1, 2], "methods": ["SCS", "DP", "VCA"],
///     "scs_samples": 6, "ece_bins": 10, "coverage_floor": 0.9,
///     "cache_dir": "...", "output_dir": "...",
///     "include_reference_baselines": false
///   }
struct RunConfig {
  DatasetSpec dataset;
  std::filesystem::path fragments_dir;
  std::vector<BackendConfig> backends;
  std::vector<int> levels;
  std::vector<UqMethod> methods;
  std::size_t scs_samples = 6;
  std::size_t ece_bins = 10;
  double coverage_floor = 0.9;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  bool include_reference_baselines = false;

  /// Throws ConfigError.
  static RunConfig load(const std::filesystem::path& file);
  static RunConfig from_json(std::string_view text, const std::filesystem::path& base_dir);
  void validate() const;
};

/// Scores for one (model, level, method).
struct CellReport {
  std::string model;
  int level = 1;
  UqMethod method = UqMethod::Scs;
  /// Instances evaluated.
  std::size_t instances = 0;
  /// Instances with at least one usable response.
  std::size_t scored = 0;
  /// Responses requested: instances x samples for SCS, instances otherwise.
  std::size_t requests = 0;
  std::size_t parse_failures = 0;
  std::optional<double> f1;
  /// Absent when fewer instances were scored than there are bins.
  std::optional<double> ece;
  /// Filled for SCS and DP when every instance carries raw annotator labels.
  std::vector<VoteBinCell> vote_bins;

  double parse_failure_rate() const {
    return requests == 0 ? 0.0 : static_cast<double>(parse_failures) / static_cast<double>(requests);
  }
  double coverage() const { return 1.0 - parse_failure_rate(); }

  bool operator==(const CellReport&) const = default;
};

struct BackendOutcome {
  std::string model;
  bool completed = true;
  std::string error;

  bool operator==(const BackendOutcome&) const = default;
};

struct EvaluationReport {
  /// Dataset name shared by all evaluated instances, empty when mixed.
  std::string source_dataset;
  std::string split;
  std::size_t ece_bins = 10;
  double coverage_floor = 0.9;
  bool include_reference_baselines = false;
  std::vector<BackendOutcome> backends;
  std::vector<CellReport> cells;

  bool unreliable(const CellReport& cell) const { return cell.coverage() < coverage_floor; }
  bool any_unreliable() const;
  bool any_backend_failed() const;
  /// 3 when a backend aborted, else 4 when a cell is below the coverage
  /// floor, else 0.
  int exit_code() const;

  bool operator==(const EvaluationReport&) const = default;
};

struct RunOptions {
  /// Builds the backend for a non-mock config; defaults to make_http_backend.
  std::function<std::shared_ptr<ChatBackend>(const BackendConfig&)> backend_factory;
  /// Receives timestamped progress lines.
  std::ostream* log = nullptr;
};

/// Column mapping object as used under dataset.columns in a run config.
/// Throws ConfigError.
CsvColumns csv_columns_from_json(std::string_view text);

/// Instances a config evaluates, sorted by id.
std::vector<HeadlineInstance> load_evaluation_instances(const RunConfig& config,
                                                        std::vector<HeadlineInstance>* all_instances = nullptr);

/// Dispatches every request of the config through the gateway (cache first),
/// then scores from the cache. A backend whose requests fail in transport is
/// recorded as aborted and contributes no cells; the others complete.
EvaluationReport run(const RunConfig& config, const RunOptions& options = {});

/// Scores from the cache alone, never touching the network. Throws
/// MissingExchangesError when a required exchange is absent or failed.
EvaluationReport score(const RunConfig& config);

/// Writes f1_by_level.csv, ece_by_level.csv, f1_methods_by_level.csv,
/// vote_bins.csv and summary.json into `output_dir`.
void report_emit(const EvaluationReport& report, const std::filesystem::path& output_dir);

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view text);

/// Appends one line prefixed with the current UTC time.
void log_line(std::ostream* log, const std::string& message);

}  // namespace tsa
