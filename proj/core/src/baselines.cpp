#include "tsa/baselines.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tsa/promptkit.hpp"

namespace tsa {
namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<ReferenceBaselines::MethodRow> method_rows(const ordered_json& table) {
  std::vector<ReferenceBaselines::MethodRow> out;
  for (const auto& [model, methods] : table.items()) {
    for (const auto& [method, levels] : methods.items()) {
      for (const auto& [level, value] : levels.items()) {
        out.push_back({model, std::stoi(level), parse_uq_method(method), value.get<std::string>()});
      }
    }
  }
  return out;
}

}  // namespace

ReferenceBaselines ReferenceBaselines::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read reference baselines '" + file.string() + "'");
  const ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("'" + file.string() + "' is not valid JSON");

  ReferenceBaselines out;
  try {
    for (const auto& [source, column] : j.at("dataset_columns").items()) {
      out.column_of_source_.emplace_back(source, column.get<std::string>());
    }
    for (const auto& [model, columns] : j.at("f1_by_dataset").items()) {
      for (const auto& [column, value] : columns.items()) {
        out.dataset_cells_.push_back({model, column, value.get<std::string>()});
      }
    }
    for (const auto& [model, levels] : j.at("stone_f1_by_level").items()) {
      for (const auto& [level, value] : levels.items()) {
        out.level_rows_.push_back({model, std::stoi(level), value.get<std::string>()});
      }
    }
    out.method_f1_rows_ = method_rows(j.at("stone_f1_by_level_method"));
    out.method_ece_rows_ = method_rows(j.at("stone_ece_by_level_method"));
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed reference baselines '" + file.string() + "': " + e.what());
  }
  return out;
}

std::filesystem::path ReferenceBaselines::default_path() { return default_data_dir() / "reference_baselines.json"; }

std::vector<ReferenceBaselines::DatasetRow> ReferenceBaselines::dataset_rows(SourceDataset dataset) const {
  const std::string source(to_string(dataset));
  std::string column;
  for (const auto& [s, c] : column_of_source_) {
    if (s == source) column = c;
  }
  std::vector<DatasetRow> out;
  if (column.empty()) return out;
  for (const auto& cell : dataset_cells_) {
    if (cell.column == column) out.push_back({cell.model, cell.f1_pct});
  }
  return out;
}

}  // namespace tsa
