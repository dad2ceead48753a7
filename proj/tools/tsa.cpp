// tsa: batch harness for targeted sentiment evaluation of chat models.

#include <fstream>
#include <iostream>
#include <iterator>
#include <string>

#include <CLI11.hpp>

#include "tsa/corpus.hpp"
#include "tsa/gateway.hpp"
#include "tsa/harness.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ConfigArgs {
  std::string config;
  std::string output_dir;
  std::string cache_dir;
};

tsa::RunConfig load_config(const ConfigArgs& args) {
  tsa::RunConfig config = tsa::RunConfig::load(args.config);
  if (!args.output_dir.empty()) config.output_dir = std::filesystem::absolute(args.output_dir);
  if (!args.cache_dir.empty()) config.cache_dir = std::filesystem::absolute(args.cache_dir);
  return config;
}

void print_flags(const tsa::EvaluationReport& report) {
  for (const auto& b : report.backends) {
    if (!b.completed) std::cerr << "backend " << b.model << " aborted: " << b.error << '\n';
  }
  for (const auto& c : report.cells) {
    if (report.unreliable(c)) {
      std::cerr << "unreliable: " << c.model << " level " << c.level << ' ' << tsa::to_string(c.method)
                << " parse coverage " << c.coverage() << " below floor " << report.coverage_floor << '\n';
    }
    if (!c.ece && c.scored > 0) {
      std::cerr << "note: " << c.model << " level " << c.level << ' ' << tsa::to_string(c.method) << ": ECE omitted, "
                << c.scored << " scored instances < " << report.ece_bins << " bins\n";
    }
  }
}

int cmd_ingest(const std::string& input, const std::string& format, const std::string& columns_file,
               const std::string& output) {
  tsa::CsvColumns columns;
  if (!columns_file.empty()) columns = tsa::csv_columns_from_json(read_all(columns_file));
  const tsa::LoadedDataset loaded = tsa::load_dataset(input, tsa::parse_dataset_format(format), columns);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + output + "'");
  tsa::write_canonical_jsonl(out, loaded.instances);
  std::cout << "wrote " << loaded.instances.size() << " instances to " << output << '\n';
  return 0;
}

int cmd_run(const ConfigArgs& args) {
  const tsa::RunConfig config = load_config(args);
  std::filesystem::create_directories(config.output_dir);
  std::ofstream log(config.output_dir / "run.log", std::ios::app);
  tsa::RunOptions options;
  options.log = &log;
  tsa::log_line(&log, "run " + std::filesystem::absolute(args.config).string());
  const tsa::EvaluationReport report = tsa::run(config, options);
  tsa::report_emit(report, config.output_dir);
  tsa::log_line(&log, "report written, exit code " + std::to_string(report.exit_code()));
  print_flags(report);
  std::cout << "report written to " << config.output_dir.string() << '\n';
  return report.exit_code();
}

int cmd_score(const ConfigArgs& args) {
  const tsa::RunConfig config = load_config(args);
  tsa::EvaluationReport report;
  try {
    report = tsa::score(config);
  } catch (const tsa::MissingExchangesError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& line : e.missing()) std::cerr << "  missing: " << line << '\n';
    return kExitError;
  }
  tsa::report_emit(report, config.output_dir);
  print_flags(report);
  std::cout << "report written to " << config.output_dir.string() << '\n';
  return report.exit_code();
}

int cmd_report(const std::string& summary, const std::string& output_dir) {
  const tsa::EvaluationReport report = tsa::report_from_json(read_all(summary));
  const std::filesystem::path out = output_dir.empty() ? std::filesystem::path(summary).parent_path() : std::filesystem::path(output_dir);
  tsa::report_emit(report, out.empty() ? "." : out);
  print_flags(report);
  return report.exit_code();
}

int cmd_cache_ls(const std::string& cache_dir) {
  const tsa::ExchangeCache cache(cache_dir);
  for (const auto& path : cache.entries()) {
    try {
      const tsa::RawExchange e = tsa::exchange_from_json(read_all(path));
      std::cout << e.cache_key << '\t' << e.model_name << '\t' << e.level << '\t' << tsa::to_string(e.method) << '\t'
                << e.instance_id << '\t' << e.sample_index << '\t' << tsa::to_string(e.status) << '\n';
    } catch (const std::exception& ex) {
      std::cout << path.stem().string() << "\tunreadable: " << ex.what() << '\n';
    }
  }
  return 0;
}

int cmd_cache_verify(const std::string& cache_dir) {
  const tsa::ExchangeCache cache(cache_dir);
  const auto report = cache.verify();
  for (const auto& p : report.problems) std::cout << "problem: " << p << '\n';
  std::cout << report.entries << " entries: " << report.ok << " ok, " << report.parse_failed << " parse-failed, "
            << report.transport_failed << " transport-failed, " << report.problems.size() << " problems\n";
  return report.problems.empty() ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted sentiment evaluation harness for chat-completion models"};
  app.require_subcommand(1);

  std::string input, format = "canonical-jsonl", columns, output;
  auto* ingest = app.add_subcommand("ingest", "Normalize a dataset to canonical JSONL");
  ingest->add_option("--input", input, "Dataset file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--format", format, "canonical-jsonl, csv-gold or csv-raw");
  ingest->add_option("--columns", columns, "JSON column mapping")->check(CLI::ExistingFile);
  ingest->add_option("--output", output, "Canonical JSONL output")->required();

  ConfigArgs run_args, score_args;
  auto* run = app.add_subcommand("run", "Dispatch requests (cache first) and write reports");
  auto* score = app.add_subcommand("score", "Re-score from the cache only, without network access");
  for (auto [sub, args] : {std::pair{run, &run_args}, std::pair{score, &score_args}}) {
    sub->add_option("--config", args->config, "Run config JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--output-dir", args->output_dir, "Override output_dir");
    sub->add_option("--cache-dir", args->cache_dir, "Override cache_dir");
  }

  std::string summary, report_out;
  auto* report = app.add_subcommand("report", "Re-emit CSV reports from a summary.json");
  report->add_option("--summary", summary, "summary.json written by run or score")->required()->check(CLI::ExistingFile);
  report->add_option("--output-dir", report_out, "Defaults to the summary's directory");

  std::string cache_dir;
  auto* cache = app.add_subcommand("cache", "Inspect the exchange cache");
  cache->require_subcommand(1);
  auto* ls = cache->add_subcommand("ls", "List cached exchanges");
  auto* verify = cache->add_subcommand("verify", "Check keys, JSON and parseability of every entry");
  for (auto* sub : {ls, verify}) sub->add_option("--cache-dir", cache_dir, "Cache directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(input, format, columns, output);
    if (*run) return cmd_run(run_args);
    if (*score) return cmd_score(score_args);
    if (*report) return cmd_report(summary, report_out);
    if (*ls) return cmd_cache_ls(cache_dir);
    if (*verify) return cmd_cache_verify(cache_dir);
  } catch (const tsa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const tsa::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
