#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dptab/common.hpp"
#include "dptab/field_trie.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"
#include "dptab/transformer.hpp"

namespace dptab {

struct GenerationConfig {
  std::size_t rows = 0;
  OrderPolicy order = OrderPolicy::kFixed;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct SampledRow {
  LevelRow levels;
  std::vector<TokenId> tokens;
};

/// Prompts each column's BEGIN token in `order` and samples its value under
/// the trie mask. Positions with a single valid token skip the model.
template <typename Scalar>
SampledRow sample_row(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                      const ColumnTrieSet& tries, std::span<const std::size_t> order,
                      double temperature, Rng& rng);

struct SyntheticTable {
  std::vector<RawRow> surface;
  std::vector<LevelRow> levels;
};

template <typename Scalar>
SyntheticTable generate_table(const TransformerParams<Scalar>& params, const Vocabulary& vocab,
                              const ColumnTrieSet& tries, const Discretizer& disc,
                              const GenerationConfig& config);

extern template SampledRow sample_row<float>(const TransformerParams<float>&, const Vocabulary&,
                                             const ColumnTrieSet&, std::span<const std::size_t>,
                                             double, Rng&);
extern template SampledRow sample_row<double>(const TransformerParams<double>&, const Vocabulary&,
                                              const ColumnTrieSet&, std::span<const std::size_t>,
                                              double, Rng&);
extern template SyntheticTable generate_table<float>(const TransformerParams<float>&,
                                                     const Vocabulary&, const ColumnTrieSet&,
                                                     const Discretizer&, const GenerationConfig&);
extern template SyntheticTable generate_table<double>(const TransformerParams<double>&,
                                                      const Vocabulary&, const ColumnTrieSet&,
                                                      const Discretizer&, const GenerationConfig&);

}  // namespace dptab
