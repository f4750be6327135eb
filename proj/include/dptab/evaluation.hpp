#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"
#include "dptab/field_trie.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"
#include "dptab/transformer.hpp"

namespace dptab {

/// Per-row negative log-likelihood (nats), teacher-forced, summed over every
/// predicted position including END tokens.
template <typename Scalar>
double row_nll(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
               const ColumnTrieSet& tries, const EncodedRow& row, Guiding guiding);

/// Same sum split by the column block each position belongs to.
template <typename Scalar>
std::vector<double> row_nll_by_column(const TransformerParams<Scalar>& params,
                                      const Vocabulary& vocab, const ColumnTrieSet& tries,
                                      const EncodedRow& row, Guiding guiding);

struct NllSummary {
  double mean = 0;
  std::vector<double> per_column;
  std::size_t rows = 0;
};

/// Mean per-row NLL over `rows`, encoded in natural column order.
template <typename Scalar>
NllSummary mean_nll(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                    const Discretizer& disc, const ColumnTrieSet& tries,
                    std::span<const LevelRow> rows, Guiding guiding);

/// Normalized contingency table over the product of the selected columns'
/// levels, row-major in `columns` order.
struct MarginalTable {
  std::vector<std::size_t> columns;
  std::vector<std::size_t> shape;
  std::vector<double> freq;
};

MarginalTable kway_marginal(std::span<const LevelRow> rows,
                            std::span<const std::size_t> cardinalities,
                            std::vector<std::size_t> columns);

/// Sums one column out of a marginal.
MarginalTable sum_out(const MarginalTable& table, std::size_t column);

/// Half the L1 distance between two marginals over the same cells.
double marginal_tvd(const MarginalTable& real, const MarginalTable& synth);

struct MarginalComparison {
  MarginalTable real;
  MarginalTable synth;
  double tvd = 0;
};

/// All 1-way marginals and the 2-way marginals (all pairs when C <= 25,
/// otherwise `max_pairs` sampled pairs).
std::vector<MarginalComparison> compare_marginals(std::span<const LevelRow> real,
                                                  std::span<const LevelRow> synth,
                                                  std::span<const std::size_t> cardinalities,
                                                  Rng& rng, std::size_t max_pairs = 300);

struct EvalReport {
  std::optional<NllSummary> nll;
  std::vector<std::string> column_names;
  std::vector<MarginalComparison> marginals;
  nlohmann::json metadata = nlohmann::json::object();

  double tvd_mean() const;
  double tvd_max() const;
};

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

/// Standalone SVG grouped-bar histogram of one marginal (real vs synthetic).
std::string render_marginal_svg(const MarginalComparison& comparison,
                                const std::vector<std::string>& column_names);

/// Writes report.json and, when `plots` is set, one SVG per 1-way marginal
/// plus the first `max_plots` 2-way marginals. Returns the files written.
std::vector<std::filesystem::path> emit_report(const EvalReport& report,
                                               const std::filesystem::path& out_dir,
                                               bool plots, std::size_t max_plots = 20);

extern template double row_nll<float>(const TransformerParams<float>&, const Vocabulary&,
                                      const ColumnTrieSet&, const EncodedRow&, Guiding);
extern template double row_nll<double>(const TransformerParams<double>&, const Vocabulary&,
                                       const ColumnTrieSet&, const EncodedRow&, Guiding);
extern template std::vector<double> row_nll_by_column<float>(const TransformerParams<float>&,
                                                             const Vocabulary&,
                                                             const ColumnTrieSet&,
                                                             const EncodedRow&, Guiding);
extern template std::vector<double> row_nll_by_column<double>(const TransformerParams<double>&,
                                                              const Vocabulary&,
                                                              const ColumnTrieSet&,
                                                              const EncodedRow&, Guiding);
extern template NllSummary mean_nll<float>(const TransformerParams<float>&, const Vocabulary&,
                                           const Discretizer&, const ColumnTrieSet&,
                                           std::span<const LevelRow>, Guiding);
extern template NllSummary mean_nll<double>(const TransformerParams<double>&, const Vocabulary&,
                                            const Discretizer&, const ColumnTrieSet&,
                                            std::span<const LevelRow>, Guiding);

}  // namespace dptab
