#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tsa/label.hpp"

namespace tsa {

enum class SourceDataset : std::uint8_t { Stone, SenEnAmt, SenEnR, SenPl, Spanish, Custom };

/// "STONE", "SEN_EN_AMT", "SEN_EN_R", "SEN_PL", "SPANISH" or "CUSTOM".
std::string_view to_string(SourceDataset source);
SourceDataset parse_source_dataset(std::string_view text);

/// Number of raw annotator labels per headline when the dataset publishes
/// them (6 for STONE, 3 for the Spanish set); nullopt when not fixed.
std::optional<std::size_t> declared_annotator_count(SourceDataset source);

struct HeadlineInstance {
  std::string id;
  std::string text;
  std::string target_entity;
  SentimentLabel gold = SentimentLabel::Neutral;
  std::optional<std::vector<SentimentLabel>> raw_labels;
  std::string language;  // ISO 639-1
  SourceDataset source = SourceDataset::Custom;

  bool operator==(const HeadlineInstance&) const = default;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetFormat : std::uint8_t { CanonicalJsonl, CsvGold, CsvRaw };

/// "canonical-jsonl", "csv-gold" or "csv-raw".
std::string_view to_string(DatasetFormat format);
DatasetFormat parse_dataset_format(std::string_view text);

/// Header-driven column mapping for the CSV loaders. Columns that are absent
/// from the header fall back to the dataset-wide defaults.
struct CsvColumns {
  std::string id = "id";
  std::string text = "text";
  std::string target_entity = "target_entity";
  std::string gold = "gold";
  std::string language = "language";
  std::string source_dataset = "source_dataset";
  /// Explicit annotator columns for csv-raw. When empty, every header whose
  /// name starts with `raw_label_prefix` is used, in header order.
  std::vector<std::string> raw_labels;
  std::string raw_label_prefix = "annotator";
  std::string default_language = "en";
  SourceDataset default_source = SourceDataset::Custom;
};

struct LoadedDataset {
  std::vector<HeadlineInstance> instances;
  /// Non-fatal findings, e.g. a gold label overridden by the raw majority.
  std::vector<std::string> warnings;
};

/// Loads and validates a dataset file. Errors name the row and the field.
LoadedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                           const CsvColumns& columns = {});

LoadedDataset read_canonical_jsonl(std::istream& in);
LoadedDataset read_csv_dataset(std::istream& in, DatasetFormat format, const CsvColumns& columns = {});

/// One canonical JSONL line (no trailing newline). Keys appear in the order
/// id, text, target_entity, gold, raw_labels, language, source_dataset.
std::string to_canonical_json_line(const HeadlineInstance& instance);
void write_canonical_jsonl(std::ostream& out, std::span<const HeadlineInstance> instances);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSplit&) const = default;
};

enum class SplitPart : std::uint8_t { Train, Validation, Test, All };
std::string_view to_string(SplitPart part);
SplitPart parse_split_part(std::string_view text);

/// Deterministic 60/20/20 split.
///
/// Ids are sorted lexicographically (byte order), shuffled with a
/// Fisher-Yates pass driven by std::mt19937_64 seeded with `seed` (bounded
/// draws use rejection sampling, so the sequence is identical on every
/// standard library), and cut at floor(0.6 n) and floor(0.8 n).
DatasetSplit split_dataset(std::span<const HeadlineInstance> instances, std::uint64_t seed);
DatasetSplit split_ids(std::vector<std::string> ids, std::uint64_t seed);

/// Instances whose id belongs to `part` of `split`, in dataset order.
std::vector<HeadlineInstance> select_split(std::span<const HeadlineInstance> instances,
                                           const DatasetSplit& split, SplitPart part);

/// Fleiss' kappa over an N x K matrix of per-class rater counts.
///
/// Every row must sum to the same rater count n >= 2 and there must be at
/// least two rows. When all ratings fall in a single class the chance term
/// is 1 and the observed agreement is perfect; that case returns 1.0.
double fleiss_kappa(std::span<const std::vector<std::size_t>> rows);

/// Per-instance class counts of the raw annotator labels, columns in label
/// order (negative, neutral, positive). Throws if any instance lacks raw labels.
std::vector<std::vector<std::size_t>> rater_count_matrix(std::span<const HeadlineInstance> instances);

}  // namespace tsa
