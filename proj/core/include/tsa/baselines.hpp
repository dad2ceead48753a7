#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/label.hpp"

namespace tsa {

/// Published reference results, shipped as a static data file and emitted
/// verbatim (as the original decimal strings) next to computed results.
/// Nothing here is ever computed.
class ReferenceBaselines {
 public:
  struct DatasetRow {
    std::string model;
    std::string f1_pct;
  };
  struct LevelRow {
    std::string model;
    int level = 1;
    std::string f1_pct;
  };
  struct MethodRow {
    std::string model;
    int level = 1;
    UqMethod method = UqMethod::Scs;
    std::string value_pct;
  };

  /// Throws std::runtime_error when the file is missing or malformed.
  static ReferenceBaselines load(const std::filesystem::path& file);
  /// <data dir>/reference_baselines.json
  static std::filesystem::path default_path();

  /// F1 on the whole test portion of `dataset`, one row per model, in file
  /// order. Empty for datasets without published numbers.
  std::vector<DatasetRow> dataset_rows(SourceDataset dataset) const;

  /// STONE single-label F1 per prescriptiveness level.
  const std::vector<LevelRow>& stone_level_rows() const { return level_rows_; }
  /// STONE F1 per level and UQ method.
  const std::vector<MethodRow>& stone_method_f1_rows() const { return method_f1_rows_; }
  /// STONE ECE per level and UQ method.
  const std::vector<MethodRow>& stone_method_ece_rows() const { return method_ece_rows_; }

 private:
  struct DatasetCell {
    std::string model;
    std::string column;
    std::string f1_pct;
  };
  std::vector<std::pair<std::string, std::string>> column_of_source_;
  std::vector<DatasetCell> dataset_cells_;
  std::vector<LevelRow> level_rows_;
  std::vector<MethodRow> method_f1_rows_;
  std::vector<MethodRow> method_ece_rows_;
};

}  // namespace tsa
