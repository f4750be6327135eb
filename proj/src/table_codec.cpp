#include "dptab/table_codec.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace dptab {
namespace {

std::string_view trim(std::string_view text) {
  constexpr std::string_view kSpace = " \t\r\n";
  const auto first = text.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(kSpace);
  return text.substr(first, last - first + 1);
}

bool parse_int(std::string_view text, long long& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && !text.empty();
}

bool parse_number(std::string_view text, double& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

// Splits one logical CSV record. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  char ch = 0;
  while (in.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && trim(field).empty()) {
      field.clear();
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(was_quoted ? field : std::string(trim(field)));
      field.clear();
      was_quoted = false;
    } else if (ch == '\n') {
      break;
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  if (quoted) throw DataError("unterminated quoted field");
  fields.push_back(was_quoted ? field : std::string(trim(field)));
  return true;
}

bool blank_record(const std::vector<std::string>& fields) {
  return fields.size() == 1 && fields.front().empty();
}

std::string quote_if_needed(const std::string& cell) {
  if (cell.find_first_of(",\"\r\n") == std::string::npos &&
      (cell.empty() || (cell.front() != ' ' && cell.back() != ' '))) {
    return cell;
  }
  std::string out = "\"";
  for (char ch : cell) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

ColumnCodec fit_categorical(const std::string& name, std::span<const RawRow> rows,
                            std::size_t column) {
  struct Tally {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Tally> tallies;
  std::vector<std::string> distinct;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string& value = rows[i][column];
    auto [it, inserted] = tallies.try_emplace(value, Tally{0, i});
    if (inserted) distinct.push_back(value);
    ++it->second.count;
  }
  // Frequency descending, first occurrence breaks ties.
  std::stable_sort(distinct.begin(), distinct.end(), [&](const auto& a, const auto& b) {
    return tallies[a].count > tallies[b].count;
  });

  ColumnCodec codec;
  codec.name = name;
  codec.kind = ColumnKind::kCategorical;
  const std::size_t kept = std::min(distinct.size(), kMaxKeptCategories);
  codec.categories.assign(distinct.begin(), distinct.begin() + static_cast<std::ptrdiff_t>(kept));
  codec.has_unknown = distinct.size() > kept;
  return codec;
}

ColumnCodec fit_numeric(const ColumnInfo& info, std::span<const RawRow> rows,
                        std::size_t column) {
  std::vector<double> values;
  values.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string& cell = rows[i][column];
    if (cell.empty()) continue;
    double v = 0;
    if (!parse_number(cell, v)) {
      throw DataError("column '" + info.name + "': unparsable numeric cell '" + cell +
                      "' at row " + std::to_string(i + 1));
    }
    values.push_back(v);
  }
  if (values.empty()) throw DataError("column '" + info.name + "' has only missing values");
  if (values.size() != rows.size()) {
    throw DataError("column '" + info.name + "' is numeric but has missing cells");
  }
  std::sort(values.begin(), values.end());

  // Split the sorted sample into kMaxLevels equal-count chunks; each chunk
  // starts at an edge. Repeated values collapse their edges.
  const std::size_t n = values.size();
  std::vector<double> edges;
  edges.reserve(kMaxLevels + 1);
  for (std::size_t k = 0; k < kMaxLevels; ++k) {
    edges.push_back(values[(k * n) / kMaxLevels]);
  }
  edges.push_back(values.back());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  ColumnCodec codec;
  codec.name = info.name;
  codec.kind = info.kind;
  codec.edges = std::move(edges);
  return codec;
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kCategorical:
      return "categorical";
    case ColumnKind::kInteger:
      return "integer";
    case ColumnKind::kFloat:
      return "float";
  }
  return "categorical";
}

ColumnKind column_kind_from_string(std::string_view text) {
  if (text == "categorical") return ColumnKind::kCategorical;
  if (text == "integer") return ColumnKind::kInteger;
  if (text == "float") return ColumnKind::kFloat;
  throw ConfigError("unknown column kind '" + std::string(text) + "'");
}

std::vector<std::string> TableSchema::header() const {
  std::vector<std::string> names;
  names.reserve(columns.size());
  for (const auto& c : columns) names.push_back(c.name);
  return names;
}

std::string format_exact(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc()) throw NumericError("cannot format value");
  return std::string(buffer, ptr);
}

double parse_exact(std::string_view text) {
  double value = 0;
  if (!parse_number(text, value)) {
    throw DataError("not a finite decimal number: '" + std::string(text) + "'");
  }
  return value;
}

ColumnKind infer_kind(std::span<const RawRow> rows, std::size_t column) {
  bool all_int = true;
  bool all_num = true;
  for (const auto& row : rows) {
    const std::string& cell = row[column];
    if (cell.empty()) continue;
    long long i = 0;
    double d = 0;
    if (all_int && !parse_int(cell, i)) all_int = false;
    if (!parse_number(cell, d)) {
      all_num = false;
      break;
    }
  }
  if (all_num && all_int) return ColumnKind::kInteger;
  if (all_num) return ColumnKind::kFloat;
  return ColumnKind::kCategorical;
}

RawTable parse_csv(std::istream& in) {
  RawTable table;
  std::vector<std::string> fields;
  if (!read_record(in, fields) || blank_record(fields)) throw DataError("missing header row");

  std::vector<std::string> header = fields;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw DataError("empty column name at position " + std::to_string(j + 1));
    for (std::size_t k = 0; k < j; ++k) {
      if (header[k] == header[j]) throw DataError("duplicate column name '" + header[j] + "'");
    }
  }

  while (read_record(in, fields)) {
    if (blank_record(fields) && header.size() > 1) continue;
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(table.rows.size() + 1) + " has " +
                      std::to_string(fields.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    table.rows.push_back(fields);
  }
  if (table.rows.empty()) throw DataError("no data rows");

  table.schema.row_count = table.rows.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    table.schema.columns.push_back({header[j], infer_kind(table.rows, j)});
  }
  return table;
}

RawTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return parse_csv(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_csv(std::ostream& out, std::span<const std::string> header,
               std::span<const RawRow> rows) {
  auto write_line = [&](std::span<const std::string> cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) out << ',';
      out << quote_if_needed(cells[j]);
    }
    out << '\n';
  };
  write_line(header);
  for (const auto& row : rows) write_line(row);
}

std::size_t ColumnCodec::cardinality() const {
  if (kind == ColumnKind::kCategorical) return categories.size() + (has_unknown ? 1 : 0);
  return edges.size() <= 1 ? 1 : edges.size() - 1;
}

std::string ColumnCodec::level_label(int level) const {
  if (level < 0 || static_cast<std::size_t>(level) >= cardinality()) {
    throw DataError("column '" + name + "': level " + std::to_string(level) + " out of range");
  }
  if (is_numeric()) return "b" + std::to_string(level);
  if (static_cast<std::size_t>(level) < categories.size()) return categories[level];
  return std::string(kUnknownLiteral);
}

int ColumnCodec::level_from_label(std::string_view label) const {
  if (is_numeric()) {
    long long k = -1;
    if (label.size() >= 2 && label.front() == 'b' && std::isdigit(static_cast<unsigned char>(label[1])) &&
        parse_int(label.substr(1), k) && k >= 0 && static_cast<std::size_t>(k) < cardinality()) {
      return static_cast<int>(k);
    }
  } else {
    const auto it = std::find(categories.begin(), categories.end(), label);
    if (it != categories.end()) return static_cast<int>(it - categories.begin());
    if (has_unknown && label == kUnknownLiteral) return static_cast<int>(categories.size());
  }
  throw DataError("column '" + name + "': '" + std::string(label) + "' is not a valid value");
}

std::vector<std::size_t> Discretizer::cardinalities() const {
  std::vector<std::size_t> out;
  out.reserve(columns.size());
  for (const auto& c : columns) out.push_back(c.cardinality());
  return out;
}

Discretizer fit_discretizer(const TableSchema& schema, std::span<const RawRow> rows) {
  if (rows.empty()) throw DataError("cannot fit a discretizer on zero rows");
  Discretizer disc;
  for (std::size_t j = 0; j < schema.num_columns(); ++j) {
    const ColumnInfo& info = schema.columns[j];
    if (info.kind == ColumnKind::kCategorical) {
      bool any = std::any_of(rows.begin(), rows.end(), [&](const RawRow& r) { return !r[j].empty(); });
      if (!any) throw DataError("column '" + info.name + "' has only missing values");
      disc.columns.push_back(fit_categorical(info.name, rows, j));
    } else {
      disc.columns.push_back(fit_numeric(info, rows, j));
    }
  }
  return disc;
}

LevelRow apply(const Discretizer& disc, const RawRow& row, std::size_t row_index) {
  if (row.size() != disc.num_columns()) {
    throw DataError("row " + std::to_string(row_index) + " has " + std::to_string(row.size()) +
                    " cells, expected " + std::to_string(disc.num_columns()));
  }
  LevelRow levels(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    const ColumnCodec& codec = disc.columns[j];
    if (!codec.is_numeric()) {
      const auto it = std::find(codec.categories.begin(), codec.categories.end(), row[j]);
      if (it != codec.categories.end()) {
        levels[j] = static_cast<int>(it - codec.categories.begin());
      } else if (codec.has_unknown) {
        levels[j] = static_cast<int>(codec.categories.size());
      } else {
        throw DataError("column '" + codec.name + "': unseen category '" + row[j] + "' at row " +
                        std::to_string(row_index) + " and no UNKNOWN level");
      }
      continue;
    }
    double v = 0;
    if (!parse_number(row[j], v)) {
      throw DataError("column '" + codec.name + "': unparsable numeric cell '" + row[j] +
                      "' at row " + std::to_string(row_index));
    }
    const auto upper = std::upper_bound(codec.edges.begin(), codec.edges.end(), v);
    const auto k = static_cast<long>(upper - codec.edges.begin()) - 1;
    levels[j] = static_cast<int>(std::clamp<long>(k, 0, static_cast<long>(codec.cardinality()) - 1));
  }
  return levels;
}

std::vector<LevelRow> apply(const Discretizer& disc, std::span<const RawRow> rows) {
  std::vector<LevelRow> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(apply(disc, rows[i], i + 1));
  return out;
}

void validate_levels(const Discretizer& disc, const LevelRow& levels) {
  if (levels.size() != disc.num_columns()) {
    throw DataError("level row has " + std::to_string(levels.size()) + " entries, expected " +
                    std::to_string(disc.num_columns()));
  }
  for (std::size_t j = 0; j < levels.size(); ++j) {
    if (levels[j] < 0 || static_cast<std::size_t>(levels[j]) >= disc.columns[j].cardinality()) {
      throw DataError("column '" + disc.columns[j].name + "': level " + std::to_string(levels[j]) +
                      " out of range");
    }
  }
}

RawRow invert(const Discretizer& disc, const LevelRow& levels, Rng& rng) {
  validate_levels(disc, levels);
  RawRow row(levels.size());
  for (std::size_t j = 0; j < levels.size(); ++j) {
    const ColumnCodec& codec = disc.columns[j];
    const int k = levels[j];
    if (!codec.is_numeric()) {
      row[j] = codec.level_label(k);
      continue;
    }
    if (codec.edges.size() == 1) {
      row[j] = codec.kind == ColumnKind::kInteger
                   ? std::to_string(static_cast<long long>(std::llround(codec.edges[0])))
                   : format_exact(codec.edges[0]);
      continue;
    }
    const double lo = codec.edges[k];
    const double hi = codec.edges[k + 1];
    const bool last = static_cast<std::size_t>(k) + 1 == codec.cardinality();
    if (codec.kind == ColumnKind::kInteger) {
      const auto first = static_cast<long long>(std::ceil(lo));
      auto end = static_cast<long long>(last ? std::floor(hi) : std::ceil(hi) - 1);
      if (end < first) end = first;
      std::uniform_int_distribution<long long> draw(first, end);
      row[j] = std::to_string(draw(rng));
    } else {
      std::uniform_real_distribution<double> draw(lo, hi);
      double v = draw(rng);
      if (v < lo) v = lo;
      if (!last && v >= hi) v = std::nextafter(hi, lo);
      if (last && v > hi) v = hi;
      row[j] = format_exact(v);
    }
  }
  return row;
}

nlohmann::json to_json(const Discretizer& disc) {
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& c : disc.columns) {
    nlohmann::json entry{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.is_numeric()) {
      std::vector<std::string> edges;
      for (double e : c.edges) edges.push_back(format_exact(e));
      entry["edges"] = edges;
    } else {
      entry["categories"] = c.categories;
      entry["unknown"] = c.has_unknown;
    }
    entry["cardinality"] = c.cardinality();
    columns.push_back(std::move(entry));
  }
  return {{"format", "dptab-discretizer-1"},
          {"differentially_private", false},
          {"columns", std::move(columns)}};
}

Discretizer discretizer_from_json(const nlohmann::json& doc) {
  Discretizer disc;
  try {
    for (const auto& entry : doc.at("columns")) {
      ColumnCodec c;
      c.name = entry.at("name").get<std::string>();
      c.kind = column_kind_from_string(entry.at("kind").get<std::string>());
      if (c.is_numeric()) {
        for (const auto& e : entry.at("edges")) c.edges.push_back(parse_exact(e.get<std::string>()));
        if (c.edges.empty() || !std::is_sorted(c.edges.begin(), c.edges.end(), std::less_equal<>())) {
          throw ConfigError("column '" + c.name + "': edges must be strictly increasing");
        }
      } else {
        c.categories = entry.at("categories").get<std::vector<std::string>>();
        c.has_unknown = entry.at("unknown").get<bool>();
      }
      if (c.cardinality() == 0 || c.cardinality() > kMaxLevels) {
        throw ConfigError("column '" + c.name + "': cardinality out of range");
      }
      disc.columns.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed discretizer: ") + e.what());
  }
  return disc;
}

}  // namespace dptab
