#include "dptab/synthesis.hpp"

#include <cassert>

namespace dptab {

template <typename Scalar>
SampledRow sample_row(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                      const ColumnTrieSet& tries, std::span<const std::size_t> order,
                      double temperature, Rng& rng) {
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  SampledRow out;
  out.levels.assign(vocab.num_columns(), -1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t column : order) {
    out.tokens.push_back(vocab.begin_token(column));
    TrieCursor cursor = root_cursor(tries, column);
    while (true) {
      const auto valid = valid_tokens(tries, cursor);
      TokenId next = valid.front();
      if (valid.size() > 1) {
        const Matrix<Scalar> logits = forward(params, std::span<const TokenId>(out.tokens));
        const Vector<Scalar> last = logits.row(logits.rows() - 1).transpose();
        // Softmax over the valid set only; equal to the masked softmax
        // restricted to its support.
        Vector<double> scores(static_cast<Eigen::Index>(valid.size()));
        for (std::size_t i = 0; i < valid.size(); ++i) {
          scores(static_cast<Eigen::Index>(i)) = static_cast<double>(last(valid[i])) / temperature;
        }
        const Vector<double> probs = softmax(scores);
        double u = unit(rng);
        std::size_t pick = valid.size() - 1;
        for (std::size_t i = 0; i < valid.size(); ++i) {
          u -= probs(static_cast<Eigen::Index>(i));
          if (u < 0) {
            pick = i;
            break;
          }
        }
        // Zero-probability tokens are never picked, even at the tail.
        while (probs(static_cast<Eigen::Index>(pick)) == 0.0 && pick > 0) --pick;
        next = valid[pick];
      }
      if (next == vocab.end_token(column)) out.levels[column] = terminal_level(tries, cursor);
      out.tokens.push_back(next);
      cursor = advance(tries, cursor, next, order);
      if (next == vocab.end_token(column)) break;
    }
  }
  for (int level : out.levels) {
    assert(level >= 0);
    (void)level;
  }
  return out;
}

template <typename Scalar>
SyntheticTable generate_table(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                              const ColumnTrieSet& tries, const Discretizer& disc,
                              const GenerationConfig& config) {
  Rng rng(config.seed);
  SyntheticTable table;
  table.surface.reserve(config.rows);
  table.levels.reserve(config.rows);
  for (std::size_t i = 0; i < config.rows; ++i) {
    const auto order = sample_order(disc.num_columns(), rng, config.order);
    SampledRow row = sample_row(params, vocab, tries, order, config.temperature, rng);
    table.surface.push_back(invert(disc, row.levels, rng));
    table.levels.push_back(std::move(row.levels));
  }
  return table;
}

template SampledRow sample_row<float>(const TransformerParams<float>&, const Vocabulary&,
                                      const ColumnTrieSet&, std::span<const std::size_t>, double,
                                      Rng&);
template SampledRow sample_row<double>(const TransformerParams<double>&, const Vocabulary&,
                                       const ColumnTrieSet&, std::span<const std::size_t>, double,
                                       Rng&);
template SyntheticTable generate_table<float>(const TransformerParams<float>&, const Vocabulary&,
                                              const ColumnTrieSet&, const Discretizer&,
                                              const GenerationConfig&);
template SyntheticTable generate_table<double>(const TransformerParams<double>&,
                                               const Vocabulary&, const ColumnTrieSet&,
                                               const Discretizer&, const GenerationConfig&);

}  // namespace dptab
