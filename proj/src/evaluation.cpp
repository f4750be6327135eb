#include "dptab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dptab {

template <typename Scalar>
std::vector<double> row_nll_by_column(const TransformerParams<Scalar>& params,
                                      const Vocabulary& vocab, const ColumnTrieSet& tries,
                                      const EncodedRow& row, Guiding guiding) {
  const Matrix<Scalar> logits = forward(params, std::span<const TokenId>(row.inputs));
  std::vector<std::span<const TokenId>> masks;
  if (guiding == Guiding::kTrie) masks = teacher_forced_masks(tries, vocab, row);
  const auto terms = position_nll<Scalar>(logits, row.targets,
                                          guiding == Guiding::kTrie ? &masks : nullptr, nullptr);
  std::vector<double> per_column(vocab.num_columns(), 0.0);
  std::size_t column = 0;
  for (std::size_t t = 0; t < row.length(); ++t) {
    if (vocab.is_begin(row.inputs[t])) column = vocab.framing_column(row.inputs[t]);
    if (row.targets[t] != kIgnore) per_column[column] += static_cast<double>(terms[t]);
  }
  return per_column;
}

template <typename Scalar>
double row_nll(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
               const ColumnTrieSet& tries, const EncodedRow& row, Guiding guiding) {
  const auto per_column = row_nll_by_column(params, vocab, tries, row, guiding);
  return std::accumulate(per_column.begin(), per_column.end(), 0.0);
}

template <typename Scalar>
NllSummary mean_nll(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                    const Discretizer& disc, const ColumnTrieSet& tries,
                    std::span<const LevelRow> rows, Guiding guiding) {
  if (rows.empty()) throw DataError("mean NLL needs at least one held-out row");
  NllSummary summary;
  summary.rows = rows.size();
  summary.per_column.assign(disc.num_columns(), 0.0);
  for (const LevelRow& levels : rows) {
    const EncodedRow row = encode_row(vocab, disc, levels);
    const auto per_column = row_nll_by_column(params, vocab, tries, row, guiding);
    for (std::size_t j = 0; j < per_column.size(); ++j) summary.per_column[j] += per_column[j];
  }
  const auto n = static_cast<double>(rows.size());
  for (double& v : summary.per_column) v /= n;
  summary.mean = std::accumulate(summary.per_column.begin(), summary.per_column.end(), 0.0);
  return summary;
}

MarginalTable kway_marginal(std::span<const LevelRow> rows,
                            std::span<const std::size_t> cardinalities,
                            std::vector<std::size_t> columns) {
  if (columns.empty()) throw DataError("a marginal needs at least one column");
  if (columns.size() > cardinalities.size()) {
    throw DataError("marginal order exceeds the number of columns");
  }
  std::sort(columns.begin(), columns.end());
  if (std::adjacent_find(columns.begin(), columns.end()) != columns.end()) {
    throw DataError("marginal columns must be distinct");
  }
  if (columns.back() >= cardinalities.size()) throw DataError("marginal column out of range");
  if (rows.empty()) throw DataError("cannot compute a marginal of zero rows");

  MarginalTable table;
  table.columns = columns;
  std::size_t cells = 1;
  for (std::size_t c : columns) {
    table.shape.push_back(cardinalities[c]);
    cells *= cardinalities[c];
  }
  table.freq.assign(cells, 0.0);
  for (const LevelRow& row : rows) {
    std::size_t index = 0;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const int level = row[columns[i]];
      if (level < 0 || static_cast<std::size_t>(level) >= table.shape[i]) {
        throw DataError("level out of range while counting a marginal");
      }
      index = index * table.shape[i] + static_cast<std::size_t>(level);
    }
    table.freq[index] += 1.0;
  }
  const auto n = static_cast<double>(rows.size());
  for (double& f : table.freq) f /= n;
  return table;
}

MarginalTable sum_out(const MarginalTable& table, std::size_t column) {
  const auto pos = std::find(table.columns.begin(), table.columns.end(), column);
  if (pos == table.columns.end()) throw DataError("column not part of the marginal");
  if (table.columns.size() == 1) throw DataError("cannot sum out the only column");
  const auto axis = static_cast<std::size_t>(pos - table.columns.begin());

  MarginalTable out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i == axis) continue;
    out.columns.push_back(table.columns[i]);
    out.shape.push_back(table.shape[i]);
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= table.shape[i];
  for (std::size_t i = axis + 1; i < table.shape.size(); ++i) inner *= table.shape[i];
  const std::size_t width = table.shape[axis];
  out.freq.assign(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < width; ++a) {
      for (std::size_t i = 0; i < inner; ++i) {
        out.freq[o * inner + i] += table.freq[(o * width + a) * inner + i];
      }
    }
  }
  return out;
}

double marginal_tvd(const MarginalTable& real, const MarginalTable& synth) {
  if (real.columns != synth.columns || real.shape != synth.shape ||
      real.freq.size() != synth.freq.size()) {
    throw DataError("marginal shapes do not match");
  }
  double total = 0;
  for (std::size_t i = 0; i < real.freq.size(); ++i) total += std::abs(real.freq[i] - synth.freq[i]);
  return std::clamp(0.5 * total, 0.0, 1.0);
}

std::vector<MarginalComparison> compare_marginals(std::span<const LevelRow> real,
                                                  std::span<const LevelRow> synth,
                                                  std::span<const std::size_t> cardinalities,
                                                  Rng& rng, std::size_t max_pairs) {
  const std::size_t c = cardinalities.size();
  std::vector<std::vector<std::size_t>> selections;
  for (std::size_t j = 0; j < c; ++j) selections.push_back({j});
  std::vector<std::vector<std::size_t>> pairs;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) pairs.push_back({a, b});
  }
  if (c > 25 && pairs.size() > max_pairs) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(max_pairs);
    std::sort(pairs.begin(), pairs.end());
  }
  selections.insert(selections.end(), pairs.begin(), pairs.end());

  std::vector<MarginalComparison> out;
  out.reserve(selections.size());
  for (const auto& cols : selections) {
    MarginalComparison cmp;
    cmp.real = kway_marginal(real, cardinalities, cols);
    cmp.synth = kway_marginal(synth, cardinalities, cols);
    cmp.tvd = marginal_tvd(cmp.real, cmp.synth);
    out.push_back(std::move(cmp));
  }
  return out;
}

double EvalReport::tvd_mean() const {
  if (marginals.empty()) return 0.0;
  double total = 0;
  for (const auto& m : marginals) total += m.tvd;
  return total / static_cast<double>(marginals.size());
}

double EvalReport::tvd_max() const {
  double best = 0;
  for (const auto& m : marginals) best = std::max(best, m.tvd);
  return best;
}

namespace {

nlohmann::json marginal_json(const MarginalTable& t) {
  return {{"columns", t.columns}, {"shape", t.shape}, {"freq", t.freq}};
}

MarginalTable marginal_from_json(const nlohmann::json& doc) {
  return {doc.at("columns").get<std::vector<std::size_t>>(),
          doc.at("shape").get<std::vector<std::size_t>>(),
          doc.at("freq").get<std::vector<double>>()};
}

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

std::string marginal_name(const MarginalTable& t, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += "__";
    const std::size_t c = t.columns[i];
    out += c < names.size() ? names[c] : "col" + std::to_string(c);
  }
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["format"] = "dptab-eval-report-1";
  doc["nll_unit"] = "nats per row (sum over columns, END positions included)";
  doc["marginal_note"] = "diagnostic; computed on non-private data and not covered by the privacy ledger";
  doc["column_names"] = report.column_names;
  if (report.nll) {
    doc["nll"] = {{"mean", report.nll->mean},
                  {"per_column", report.nll->per_column},
                  {"rows", report.nll->rows}};
  } else {
    doc["nll"] = nullptr;
  }
  nlohmann::json marginals = nlohmann::json::array();
  for (const auto& m : report.marginals) {
    marginals.push_back({{"real", marginal_json(m.real)}, {"synth", marginal_json(m.synth)}, {"tvd", m.tvd}});
  }
  doc["marginals"] = std::move(marginals);
  doc["tvd_summary"] = {{"count", report.marginals.size()},
                        {"mean", report.tvd_mean()},
                        {"max", report.tvd_max()}};
  doc["metadata"] = report.metadata;
  return doc;
}

EvalReport report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport report;
    report.column_names = doc.at("column_names").get<std::vector<std::string>>();
    if (!doc.at("nll").is_null()) {
      NllSummary s;
      s.mean = doc["nll"].at("mean").get<double>();
      s.per_column = doc["nll"].at("per_column").get<std::vector<double>>();
      s.rows = doc["nll"].at("rows").get<std::size_t>();
      report.nll = s;
    }
    for (const auto& m : doc.at("marginals")) {
      report.marginals.push_back(
          {marginal_from_json(m.at("real")), marginal_from_json(m.at("synth")), m.at("tvd").get<double>()});
    }
    report.metadata = doc.value("metadata", nlohmann::json::object());
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string render_marginal_svg(const MarginalComparison& cmp,
                                const std::vector<std::string>& names) {
  const std::size_t cells = cmp.real.freq.size();
  const double bar = 8.0;
  const double group = 2 * bar + 4;
  const double left = 50, top = 40, height = 220;
  const double width = left + group * static_cast<double>(cells) + 20;
  double peak = 1e-12;
  for (std::size_t i = 0; i < cells; ++i) peak = std::max({peak, cmp.real.freq[i], cmp.synth.freq[i]});

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << top + height + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << left << "\" y=\"18\">" << escape_xml(marginal_name(cmp.real, names))
      << " (TVD " << cmp.tvd << ")</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"24\" width=\"10\" height=\"10\" fill=\"#1f77b4\"/>"
      << "<text x=\"" << left + 14 << "\" y=\"33\">real (train + valid)</text>\n";
  svg << "<rect x=\"" << left + 140 << "\" y=\"24\" width=\"10\" height=\"10\" fill=\"#2ca02c\"/>"
      << "<text x=\"" << left + 154 << "\" y=\"33\">synthetic</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << width - 10
      << "\" y2=\"" << top + height << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"4\" y=\"" << top + 10 << "\">" << peak << "</text>\n";
  for (std::size_t i = 0; i < cells; ++i) {
    const double x = left + group * static_cast<double>(i);
    const double hr = height * cmp.real.freq[i] / peak;
    const double hs = height * cmp.synth.freq[i] / peak;
    svg << "<rect x=\"" << x << "\" y=\"" << top + height - hr << "\" width=\"" << bar
        << "\" height=\"" << hr << "\" fill=\"#1f77b4\"/>";
    svg << "<rect x=\"" << x + bar << "\" y=\"" << top + height - hs << "\" width=\"" << bar
        << "\" height=\"" << hs << "\" fill=\"#2ca02c\"/>\n";
  }
  svg << "<text x=\"" << left << "\" y=\"" << top + height + 20 << "\">cell index (row-major over levels)</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report,
                                               const std::filesystem::path& out_dir, bool plots,
                                               std::size_t max_plots) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto json_path = out_dir / "report.json";
  {
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << to_json(report).dump(2) << '\n';
  }
  written.push_back(json_path);
  if (!plots) return written;

  std::size_t pair_plots = 0;
  for (const auto& m : report.marginals) {
    if (m.real.columns.size() > 1 && pair_plots++ >= max_plots) continue;
    const auto path = out_dir / ("marginal_" + marginal_name(m.real, report.column_names) + ".svg");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << render_marginal_svg(m, report.column_names);
    written.push_back(path);
  }
  return written;
}

template double row_nll<float>(const TransformerParams<float>&, const Vocabulary&,
                               const ColumnTrieSet&, const EncodedRow&, Guiding);
template double row_nll<double>(const TransformerParams<double>&, const Vocabulary&,
                                const ColumnTrieSet&, const EncodedRow&, Guiding);
template std::vector<double> row_nll_by_column<float>(const TransformerParams<float>&,
                                                      const Vocabulary&, const ColumnTrieSet&,
                                                      const EncodedRow&, Guiding);
template std::vector<double> row_nll_by_column<double>(const TransformerParams<double>&,
                                                       const Vocabulary&, const ColumnTrieSet&,
                                                       const EncodedRow&, Guiding);
template NllSummary mean_nll<float>(const TransformerParams<float>&, const Vocabulary&,
                                    const Discretizer&, const ColumnTrieSet&,
                                    std::span<const LevelRow>, Guiding);
template NllSummary mean_nll<double>(const TransformerParams<double>&, const Vocabulary&,
                                     const Discretizer&, const ColumnTrieSet&,
                                     std::span<const LevelRow>, Guiding);

}  // namespace dptab
