#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"

namespace dptab {

/// Upper bound on the number of discrete levels of any column.
inline constexpr std::size_t kMaxLevels = 100;
/// Categorical columns keep this many values; the rest share one UNKNOWN level.
inline constexpr std::size_t kMaxKeptCategories = kMaxLevels - 1;
inline constexpr std::string_view kUnknownLiteral = "<UNK>";

enum class ColumnKind { kCategorical, kInteger, kFloat };

std::string_view to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view text);

struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
};

struct TableSchema {
  std::vector<ColumnInfo> columns;
  std::size_t row_count = 0;

  std::size_t num_columns() const { return columns.size(); }
  std::vector<std::string> header() const;
};

using RawRow = std::vector<std::string>;

struct RawTable {
  TableSchema schema;
  std::vector<RawRow> rows;
};

using LevelRow = std::vector<int>;

/// Reads an RFC-4180 CSV with a header row and infers per-column kinds.
/// Throws DataError on ragged rows (with the 1-based data row index) or an
/// empty body.
RawTable load_csv(const std::filesystem::path& path);
RawTable parse_csv(std::istream& in);

/// Infers integer / float / categorical from the cells of one column.
/// Empty cells are ignored.
ColumnKind infer_kind(std::span<const RawRow> rows, std::size_t column);

void write_csv(std::ostream& out, std::span<const std::string> header,
               std::span<const RawRow> rows);

/// Per-column level mapping. Categorical: kept categories in level order,
/// optionally followed by the UNKNOWN level. Numeric: strictly increasing
/// bin edges; bin k is [edges[k], edges[k+1]) and the last bin is closed.
/// A single edge encodes a constant column with one level.
struct ColumnCodec {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
  std::vector<std::string> categories;
  bool has_unknown = false;
  std::vector<double> edges;

  std::size_t cardinality() const;
  bool is_numeric() const { return kind != ColumnKind::kCategorical; }
  /// Surface label used by byte-level tokenization: the category text,
  /// "<UNK>", or "b<k>" for numeric bin k.
  std::string level_label(int level) const;
  /// Inverse of level_label; throws DataError when the text names no level.
  int level_from_label(std::string_view label) const;
};

struct Discretizer {
  std::vector<ColumnCodec> columns;

  std::size_t num_columns() const { return columns.size(); }
  std::vector<std::size_t> cardinalities() const;
};

/// Fits the per-column level mapping. Not differentially private.
Discretizer fit_discretizer(const TableSchema& schema, std::span<const RawRow> rows);

/// Maps one raw row to its levels. `row_index` only feeds error messages.
LevelRow apply(const Discretizer& disc, const RawRow& row, std::size_t row_index = 0);
std::vector<LevelRow> apply(const Discretizer& disc, std::span<const RawRow> rows);

/// Draws a surface row whose levels are `levels`. Numeric levels sample
/// uniformly inside their bin (integers for integer columns).
RawRow invert(const Discretizer& disc, const LevelRow& levels, Rng& rng);

void validate_levels(const Discretizer& disc, const LevelRow& levels);

nlohmann::json to_json(const Discretizer& disc);
Discretizer discretizer_from_json(const nlohmann::json& doc);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_exact(double value);
double parse_exact(std::string_view text);

}  // namespace dptab
