#include "tsa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "text_util.hpp"
#include "tsa/metrics.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;

struct SourceName {
  SourceDataset source;
  std::string_view name;
};

constexpr SourceName kSourceNames[] = {
    {SourceDataset::Stone, "STONE"},     {SourceDataset::SenEnAmt, "SEN_EN_AMT"},
    {SourceDataset::SenEnR, "SEN_EN_R"}, {SourceDataset::SenPl, "SEN_PL"},
    {SourceDataset::Spanish, "SPANISH"}, {SourceDataset::Custom, "CUSTOM"},
};

[[noreturn]] void row_error(std::string_view where, std::string_view field, const std::string& what) {
  throw DatasetError(std::string(where) + ": field '" + std::string(field) + "': " + what);
}

bool is_iso639_1(std::string_view code) {
  return code.size() == 2 && std::all_of(code.begin(), code.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

SentimentLabel label_field(std::string_view where, std::string_view field, std::string_view token) {
  auto label = try_parse_label_token(token);
  if (!label) {
    row_error(where, field, "unknown sentiment label '" + std::string(token) +
                                "' (expected positive, neutral or negative)");
  }
  return *label;
}

/// Fields as read from one row, before gold/raw reconciliation.
struct RawRow {
  std::string where;
  HeadlineInstance instance;
  std::optional<SentimentLabel> gold;
};

HeadlineInstance reconcile(RawRow row, std::vector<std::string>& warnings) {
  HeadlineInstance& inst = row.instance;
  for (auto [field, value] : {std::pair<const char*, const std::string*>{"id", &inst.id},
                              {"text", &inst.text},
                              {"target_entity", &inst.target_entity}}) {
    if (!detail::is_valid_utf8(*value)) row_error(row.where, field, "is not valid UTF-8");
  }
  if (inst.id.empty()) row_error(row.where, "id", "must be a non-empty string");
  if (detail::trim(inst.text).empty()) row_error(row.where, "text", "must be a non-empty string");
  if (detail::trim(inst.target_entity).empty()) row_error(row.where, "target_entity", "must be a non-empty string");
  if (!is_iso639_1(inst.language)) {
    row_error(row.where, "language", "'" + inst.language + "' is not a lowercase ISO 639-1 code");
  }
  if (inst.raw_labels) {
    if (inst.raw_labels->empty()) row_error(row.where, "raw_labels", "must not be empty when present");
    const MajorityVote majority = majority_vote(*inst.raw_labels);
    if (row.gold && *row.gold != majority.label) {
      warnings.push_back(row.where + ": id '" + inst.id + "': gold '" + std::string(to_string(*row.gold)) +
                         "' disagrees with raw-label majority '" + std::string(to_string(majority.label)) +
                         "'; using the raw-label majority");
    }
    inst.gold = majority.label;
  } else {
    if (!row.gold) row_error(row.where, "gold", "missing and no raw_labels to derive it from");
    inst.gold = *row.gold;
  }
  return std::move(row.instance);
}

void validate_dataset(const std::vector<HeadlineInstance>& instances, const std::vector<std::string>& where) {
  std::unordered_set<std::string> seen;
  std::optional<std::size_t> observed_count;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const HeadlineInstance& inst = instances[i];
    if (!seen.insert(inst.id).second) row_error(where[i], "id", "duplicate id '" + inst.id + "'");
    if (!inst.raw_labels) continue;
    const std::size_t count = inst.raw_labels->size();
    if (auto declared = declared_annotator_count(inst.source)) {
      if (count != *declared) {
        row_error(where[i], "raw_labels",
                  "expected " + std::to_string(*declared) + " annotator labels for " +
                      std::string(to_string(inst.source)) + ", got " + std::to_string(count));
      }
    } else if (observed_count && count != *observed_count) {
      row_error(where[i], "raw_labels",
                "inconsistent annotator count: expected " + std::to_string(*observed_count) + ", got " +
                    std::to_string(count));
    }
    observed_count = count;
  }
}

std::string json_string_field(const ordered_json& row, std::string_view where, const char* field) {
  auto it = row.find(field);
  if (it == row.end() || it->is_null()) row_error(where, field, "missing");
  if (!it->is_string()) row_error(where, field, "must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(SourceDataset source) {
  for (const auto& entry : kSourceNames) {
    if (entry.source == source) return entry.name;
  }
  return "CUSTOM";
}

SourceDataset parse_source_dataset(std::string_view text) {
  std::string upper(detail::trim(text));
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (const auto& entry : kSourceNames) {
    if (entry.name == upper) return entry.source;
  }
  throw DatasetError("unknown source_dataset '" + std::string(text) + "'");
}

std::optional<std::size_t> declared_annotator_count(SourceDataset source) {
  switch (source) {
    case SourceDataset::Stone:
      return 6;
    case SourceDataset::Spanish:
      return 3;
    default:
      return std::nullopt;
  }
}

std::string_view to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::CanonicalJsonl:
      return "canonical-jsonl";
    case DatasetFormat::CsvGold:
      return "csv-gold";
    case DatasetFormat::CsvRaw:
      return "csv-raw";
  }
  return "canonical-jsonl";
}

DatasetFormat parse_dataset_format(std::string_view text) {
  const std::string lowered = detail::to_lower_ascii(detail::trim(text));
  if (lowered == "canonical-jsonl" || lowered == "jsonl") return DatasetFormat::CanonicalJsonl;
  if (lowered == "csv-gold") return DatasetFormat::CsvGold;
  if (lowered == "csv-raw") return DatasetFormat::CsvRaw;
  throw DatasetError("unknown dataset format '" + std::string(text) +
                     "' (expected canonical-jsonl, csv-gold or csv-raw)");
}

LoadedDataset read_canonical_jsonl(std::istream& in) {
  LoadedDataset out;
  std::vector<std::string> where;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string loc = "line " + std::to_string(line_no);
    const ordered_json row = ordered_json::parse(line, nullptr, false);
    if (row.is_discarded()) throw DatasetError(loc + ": malformed JSON");
    if (!row.is_object()) throw DatasetError(loc + ": expected a JSON object");

    RawRow raw;
    raw.where = loc;
    raw.instance.id = json_string_field(row, loc, "id");
    raw.instance.text = json_string_field(row, loc, "text");
    raw.instance.target_entity = json_string_field(row, loc, "target_entity");
    raw.instance.language = json_string_field(row, loc, "language");
    try {
      raw.instance.source = parse_source_dataset(json_string_field(row, loc, "source_dataset"));
    } catch (const DatasetError& e) {
      row_error(loc, "source_dataset", e.what());
    }

    if (auto it = row.find("gold"); it != row.end() && !it->is_null()) {
      if (!it->is_string()) row_error(loc, "gold", "must be a string");
      raw.gold = label_field(loc, "gold", it->get<std::string>());
    }
    if (auto it = row.find("raw_labels"); it != row.end() && !it->is_null()) {
      if (!it->is_array()) row_error(loc, "raw_labels", "must be an array or null");
      std::vector<SentimentLabel> labels;
      for (const auto& value : *it) {
        if (!value.is_string()) row_error(loc, "raw_labels", "entries must be strings");
        labels.push_back(label_field(loc, "raw_labels", value.get<std::string>()));
      }
      raw.instance.raw_labels = std::move(labels);
    }
    out.instances.push_back(reconcile(std::move(raw), out.warnings));
    where.push_back(loc);
  }
  validate_dataset(out.instances, where);
  return out;
}

LoadedDataset read_csv_dataset(std::istream& in, DatasetFormat format, const CsvColumns& columns) {
  if (format == DatasetFormat::CanonicalJsonl) return read_canonical_jsonl(in);

  std::vector<detail::CsvRecord> records;
  try {
    records = detail::read_csv(in);
  } catch (const detail::CsvSyntaxError& e) {
    throw DatasetError(std::string("malformed CSV: ") + e.what());
  }
  if (records.empty()) throw DatasetError("CSV input has no header row");

  const std::vector<std::string>& header = records.front().fields;
  std::map<std::string, std::size_t, std::less<>> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) column_index.emplace(std::string(detail::trim(header[i])), i);
  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    if (name.empty()) return std::nullopt;
    auto it = column_index.find(name);
    if (it == column_index.end()) return std::nullopt;
    return it->second;
  };
  auto require_column = [&](const std::string& name, std::string_view role) {
    auto idx = find_column(name);
    if (!idx) throw DatasetError("CSV header lacks the " + std::string(role) + " column '" + name + "'");
    return *idx;
  };

  const std::size_t id_col = require_column(columns.id, "id");
  const std::size_t text_col = require_column(columns.text, "text");
  const std::size_t entity_col = require_column(columns.target_entity, "target_entity");
  const auto language_col = find_column(columns.language);
  const auto source_col = find_column(columns.source_dataset);
  std::optional<std::size_t> gold_col = find_column(columns.gold);

  std::vector<std::size_t> raw_cols;
  if (format == DatasetFormat::CsvRaw) {
    if (!columns.raw_labels.empty()) {
      for (const auto& name : columns.raw_labels) raw_cols.push_back(require_column(name, "annotator"));
    } else {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (!columns.raw_label_prefix.empty() &&
            detail::starts_with(detail::trim(header[i]), columns.raw_label_prefix)) {
          raw_cols.push_back(i);
        }
      }
    }
    if (raw_cols.empty()) {
      throw DatasetError("csv-raw requires one column per annotator; none matched prefix '" +
                         columns.raw_label_prefix + "'");
    }
  } else if (!gold_col) {
    throw DatasetError("CSV header lacks the gold column '" + columns.gold + "'");
  }

  LoadedDataset out;
  std::vector<std::string> where;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const detail::CsvRecord& record = records[r];
    const std::string loc = "row " + std::to_string(r + 1) + " (line " + std::to_string(record.line) + ")";
    if (record.fields.size() != header.size()) {
      throw DatasetError(loc + ": expected " + std::to_string(header.size()) + " fields, got " +
                         std::to_string(record.fields.size()));
    }
    auto cell = [&](std::size_t idx) { return std::string(detail::trim(record.fields[idx])); };

    RawRow raw;
    raw.where = loc;
    raw.instance.id = cell(id_col);
    raw.instance.text = record.fields[text_col];
    raw.instance.target_entity = cell(entity_col);
    raw.instance.language = language_col ? cell(*language_col) : columns.default_language;
    raw.instance.source = columns.default_source;
    if (source_col && !cell(*source_col).empty()) {
      try {
        raw.instance.source = parse_source_dataset(cell(*source_col));
      } catch (const DatasetError& e) {
        row_error(loc, columns.source_dataset, e.what());
      }
    }
    if (gold_col && !cell(*gold_col).empty()) raw.gold = label_field(loc, columns.gold, cell(*gold_col));
    if (format == DatasetFormat::CsvRaw) {
      std::vector<SentimentLabel> labels;
      for (std::size_t col : raw_cols) labels.push_back(label_field(loc, header[col], cell(col)));
      raw.instance.raw_labels = std::move(labels);
    }
    out.instances.push_back(reconcile(std::move(raw), out.warnings));
    where.push_back(loc);
  }
  validate_dataset(out.instances, where);
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const CsvColumns& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset file '" + path.string() + "'");
  try {
    return read_csv_dataset(in, format, columns);
  } catch (const DatasetError& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

std::string to_canonical_json_line(const HeadlineInstance& instance) {
  ordered_json row;
  row["id"] = instance.id;
  row["text"] = instance.text;
  row["target_entity"] = instance.target_entity;
  row["gold"] = std::string(to_string(instance.gold));
  if (instance.raw_labels) {
    ordered_json labels = ordered_json::array();
    for (SentimentLabel label : *instance.raw_labels) labels.push_back(std::string(to_string(label)));
    row["raw_labels"] = std::move(labels);
  } else {
    row["raw_labels"] = nullptr;
  }
  row["language"] = instance.language;
  row["source_dataset"] = std::string(to_string(instance.source));
  return row.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

void write_canonical_jsonl(std::ostream& out, std::span<const HeadlineInstance> instances) {
  for (const auto& instance : instances) out << to_canonical_json_line(instance) << '\n';
}

std::string_view to_string(SplitPart part) {
  switch (part) {
    case SplitPart::Train:
      return "train";
    case SplitPart::Validation:
      return "validation";
    case SplitPart::Test:
      return "test";
    case SplitPart::All:
      return "all";
  }
  return "all";
}

SplitPart parse_split_part(std::string_view text) {
  const std::string lowered = detail::to_lower_ascii(detail::trim(text));
  if (lowered == "train") return SplitPart::Train;
  if (lowered == "validation" || lowered == "val" || lowered == "dev") return SplitPart::Validation;
  if (lowered == "test") return SplitPart::Test;
  if (lowered == "all") return SplitPart::All;
  throw DatasetError("unknown split '" + std::string(text) + "' (expected train, validation, test or all)");
}

DatasetSplit split_ids(std::vector<std::string> ids, std::uint64_t seed) {
  if (ids.size() < 5) {
    throw DatasetError("cannot split " + std::to_string(ids.size()) +
                       " instances into three non-empty parts (need at least 5)");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DatasetError("split_dataset: duplicate ids");

  std::mt19937_64 rng(seed);
  // Unbiased draw in [0, bound): reject the low 2^64 mod bound values.
  auto uniform_below = [&rng](std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t x = rng();
      if (x >= threshold) return x % bound;
    }
  };
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(i + 1));
    std::swap(ids[i], ids[j]);
  }

  const std::size_t n = ids.size();
  const std::size_t train_end = n * 6 / 10;
  const std::size_t validation_end = n * 8 / 10;
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_end));
  split.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(train_end),
                          ids.begin() + static_cast<std::ptrdiff_t>(validation_end));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(validation_end), ids.end());
  return split;
}

DatasetSplit split_dataset(std::span<const HeadlineInstance> instances, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(instances.size());
  for (const auto& instance : instances) ids.push_back(instance.id);
  return split_ids(std::move(ids), seed);
}

std::vector<HeadlineInstance> select_split(std::span<const HeadlineInstance> instances, const DatasetSplit& split,
                                           SplitPart part) {
  if (part == SplitPart::All) return {instances.begin(), instances.end()};
  const std::vector<std::string>& ids = part == SplitPart::Train        ? split.train
                                        : part == SplitPart::Validation ? split.validation
                                                                        : split.test;
  const std::set<std::string_view> wanted(ids.begin(), ids.end());
  std::vector<HeadlineInstance> out;
  for (const auto& instance : instances) {
    if (wanted.count(instance.id)) out.push_back(instance);
  }
  return out;
}

double fleiss_kappa(std::span<const std::vector<std::size_t>> rows) {
  if (rows.size() < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 instances");
  const std::size_t classes = rows.front().size();
  if (classes == 0) throw std::invalid_argument("fleiss_kappa: rows have no classes");

  std::uint64_t raters = 0;
  for (std::size_t c : rows.front()) raters += c;
  if (raters < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 raters per instance");

  std::vector<std::uint64_t> column_totals(classes, 0);
  std::uint64_t sum_squares = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != classes) {
      throw std::invalid_argument("fleiss_kappa: row " + std::to_string(i) + " has " +
                                  std::to_string(rows[i].size()) + " classes, expected " + std::to_string(classes));
    }
    std::uint64_t row_sum = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      row_sum += rows[i][j];
      column_totals[j] += rows[i][j];
      sum_squares += static_cast<std::uint64_t>(rows[i][j]) * rows[i][j];
    }
    if (row_sum != raters) {
      throw std::invalid_argument("fleiss_kappa: row " + std::to_string(i) + " sums to " + std::to_string(row_sum) +
                                  ", expected " + std::to_string(raters));
    }
  }

  const double n_items = static_cast<double>(rows.size());
  const double n = static_cast<double>(raters);
  const double total = n_items * n;
  // Mean per-item agreement: (sum_ij n_ij^2 - N n) / (N n (n - 1)).
  const double observed = (static_cast<double>(sum_squares) - total) / (total * (n - 1.0));

  double expected = 0.0;
  bool single_class = false;
  for (std::uint64_t column : column_totals) {
    if (column == rows.size() * raters) single_class = true;
    const double p = static_cast<double>(column) / total;
    expected += p * p;
  }
  if (single_class) return 1.0;
  return (observed - expected) / (1.0 - expected);
}

std::vector<std::vector<std::size_t>> rater_count_matrix(std::span<const HeadlineInstance> instances) {
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(instances.size());
  for (const auto& instance : instances) {
    if (!instance.raw_labels) throw DatasetError("instance '" + instance.id + "' has no raw annotator labels");
    const LabelCounts counts = count_labels(*instance.raw_labels);
    rows.emplace_back(counts.begin(), counts.end());
  }
  return rows;
}

}  // namespace tsa
