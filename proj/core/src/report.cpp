#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_util.hpp"
#include "tsa/baselines.hpp"
#include "tsa/harness.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string pct(std::optional<double> fraction, int decimals = 2) {
  return fraction ? detail::format_fixed(*fraction * 100.0, decimals) : std::string();
}

class CsvWriter {
 public:
  explicit CsvWriter(std::initializer_list<std::string_view> header) { row(header); }

  void row(std::initializer_list<std::string_view> fields) {
    bool first = true;
    for (std::string_view f : fields) {
      if (!first) out_ << ',';
      out_ << csv_field(f);
      first = false;
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

std::optional<SourceDataset> reference_source(const EvaluationReport& report) {
  if (!report.include_reference_baselines || report.source_dataset.empty()) return std::nullopt;
  try {
    return parse_source_dataset(report.source_dataset);
  } catch (const DatasetError&) {
    return std::nullopt;
  }
}

/// Cell that stands for (model, level) in the single-label F1 table: the SCS
/// cell when present, otherwise the first configured method.
std::vector<const CellReport*> level_cells(const EvaluationReport& report) {
  std::vector<const CellReport*> out;
  for (const auto& cell : report.cells) {
    auto same = [&](const CellReport* c) { return c->model == cell.model && c->level == cell.level; };
    auto it = std::find_if(out.begin(), out.end(), same);
    if (it == out.end()) {
      out.push_back(&cell);
    } else if (cell.method == UqMethod::Scs) {
      *it = &cell;
    }
  }
  return out;
}

ordered_json optional_number(std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> read_optional(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string report_to_json(const EvaluationReport& report) {
  ordered_json j;
  j["source_dataset"] = report.source_dataset;
  j["split"] = report.split;
  j["ece_bins"] = report.ece_bins;
  j["coverage_floor"] = report.coverage_floor;
  j["include_reference_baselines"] = report.include_reference_baselines;
  j["f1_averaging"] = "macro over classes present in gold";
  j["exit_code"] = report.exit_code();
  j["backends"] = ordered_json::array();
  for (const auto& b : report.backends) {
    j["backends"].push_back({{"model", b.model}, {"completed", b.completed}, {"error", b.error}});
  }
  j["cells"] = ordered_json::array();
  for (const auto& c : report.cells) {
    ordered_json cell;
    cell["model"] = c.model;
    cell["level"] = c.level;
    cell["method"] = to_string(c.method);
    cell["instances"] = c.instances;
    cell["scored"] = c.scored;
    cell["requests"] = c.requests;
    cell["parse_failures"] = c.parse_failures;
    cell["parse_failure_rate"] = c.parse_failure_rate();
    cell["unreliable"] = report.unreliable(c);
    cell["f1"] = optional_number(c.f1);
    cell["ece"] = optional_number(c.ece);
    cell["calibration_accuracy"] = c.ece ? ordered_json(calibration_accuracy(*c.ece)) : ordered_json(nullptr);
    cell["vote_bins"] = ordered_json::array();
    for (const auto& v : c.vote_bins) {
      cell["vote_bins"].push_back({{"annotator_majority", v.annotator_majority},
                                   {"model_majority", v.model_majority},
                                   {"f1", v.f1},
                                   {"size", v.size}});
    }
    j["cells"].push_back(std::move(cell));
  }
  return j.dump(2) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::runtime_error("summary is not a JSON object");
  try {
    EvaluationReport r;
    r.source_dataset = j.at("source_dataset").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.ece_bins = j.at("ece_bins").get<std::size_t>();
    r.coverage_floor = j.at("coverage_floor").get<double>();
    r.include_reference_baselines = j.at("include_reference_baselines").get<bool>();
    for (const auto& b : j.at("backends")) {
      r.backends.push_back({b.at("model").get<std::string>(), b.at("completed").get<bool>(),
                            b.at("error").get<std::string>()});
    }
    for (const auto& c : j.at("cells")) {
      CellReport cell;
      cell.model = c.at("model").get<std::string>();
      cell.level = c.at("level").get<int>();
      cell.method = parse_uq_method(c.at("method").get<std::string>());
      cell.instances = c.at("instances").get<std::size_t>();
      cell.scored = c.at("scored").get<std::size_t>();
      cell.requests = c.at("requests").get<std::size_t>();
      cell.parse_failures = c.at("parse_failures").get<std::size_t>();
      cell.f1 = read_optional(c, "f1");
      cell.ece = read_optional(c, "ece");
      for (const auto& v : c.at("vote_bins")) {
        cell.vote_bins.push_back({v.at("annotator_majority").get<std::size_t>(),
                                  v.at("model_majority").get<std::size_t>(), v.at("f1").get<double>(),
                                  v.at("size").get<std::size_t>()});
      }
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed summary: ") + e.what());
  }
}

void report_emit(const EvaluationReport& report, const fs::path& output_dir) {
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec || !fs::is_directory(output_dir)) {
    throw std::runtime_error("output directory '" + output_dir.string() + "' cannot be created");
  }

  const std::optional<SourceDataset> reference = reference_source(report);
  std::optional<ReferenceBaselines> baselines;
  if (reference) baselines = ReferenceBaselines::load(ReferenceBaselines::default_path());
  const bool stone_reference = reference && *reference == SourceDataset::Stone;

  CsvWriter f1_levels({"model", "f1_pct", "level", "method", "source"});
  for (const CellReport* c : level_cells(report)) {
    f1_levels.row({c->model, pct(c->f1), std::to_string(c->level), to_string(c->method), "computed"});
  }
  if (baselines) {
    for (const auto& row : baselines->dataset_rows(*reference)) f1_levels.row({row.model, row.f1_pct, "", "", "reference"});
    if (stone_reference) {
      for (const auto& row : baselines->stone_level_rows()) {
        f1_levels.row({row.model, row.f1_pct, std::to_string(row.level), "", "reference"});
      }
    }
  }

  CsvWriter ece_levels({"model", "level", "method", "ece_pct", "calibration_accuracy_pct", "n", "source"});
  CsvWriter f1_methods(
      {"model", "level", "method", "f1_pct", "parse_failure_rate", "instances", "scored", "unreliable", "source"});
  CsvWriter vote_bins({"model", "level", "method", "annotator_majority", "model_majority", "f1_pct", "cell_size"});
  for (const auto& c : report.cells) {
    const std::string level = std::to_string(c.level);
    const std::string_view method = to_string(c.method);
    const std::optional<double> calibration =
        c.ece ? std::optional<double>(calibration_accuracy(*c.ece)) : std::nullopt;
    ece_levels.row({c.model, level, method, pct(c.ece), pct(calibration), std::to_string(c.scored), "computed"});
    f1_methods.row({c.model, level, method, pct(c.f1), detail::format_fixed(c.parse_failure_rate(), 4),
                    std::to_string(c.instances), std::to_string(c.scored), report.unreliable(c) ? "1" : "0",
                    "computed"});
    for (const auto& v : c.vote_bins) {
      vote_bins.row({c.model, level, method, std::to_string(v.annotator_majority), std::to_string(v.model_majority),
                     pct(v.f1), std::to_string(v.size)});
    }
  }
  if (stone_reference) {
    for (const auto& row : baselines->stone_method_ece_rows()) {
      ece_levels.row({row.model, std::to_string(row.level), to_string(row.method), row.value_pct, "", "", "reference"});
    }
    for (const auto& row : baselines->stone_method_f1_rows()) {
      f1_methods.row(
          {row.model, std::to_string(row.level), to_string(row.method), row.value_pct, "", "", "", "", "reference"});
    }
  }

  write_file(output_dir / "f1_by_level.csv", f1_levels.str());
  write_file(output_dir / "ece_by_level.csv", ece_levels.str());
  write_file(output_dir / "f1_methods_by_level.csv", f1_methods.str());
  write_file(output_dir / "vote_bins.csv", vote_bins.str());
  write_file(output_dir / "summary.json", report_to_json(report));
}

}  // namespace tsa
