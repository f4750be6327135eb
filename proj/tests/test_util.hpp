#pragma once

#include <string>
#include <vector>

#include "dptab/field_trie.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"
#include "dptab/transformer.hpp"

namespace dptab::testing {

/// Categorical columns "c0", "c1", ... whose values are "v0".."v{k-1}".
inline Discretizer categorical_disc(const std::vector<std::size_t>& cards) {
  Discretizer disc;
  for (std::size_t j = 0; j < cards.size(); ++j) {
    ColumnCodec codec;
    codec.name = "c" + std::to_string(j);
    codec.kind = ColumnKind::kCategorical;
    for (std::size_t v = 0; v < cards[j]; ++v) codec.categories.push_back("v" + std::to_string(v));
    disc.columns.push_back(codec);
  }
  return disc;
}

struct Toy {
  Discretizer disc;
  Vocabulary vocab;
  ColumnTrieSet tries;
};

inline Toy make_toy(const std::vector<std::size_t>& cards, TokenizerMode mode = TokenizerMode::kLevel) {
  Toy toy;
  toy.disc = categorical_disc(cards);
  toy.vocab = build_vocabulary(toy.disc, mode);
  toy.tries = build_tries(toy.vocab, toy.disc);
  return toy;
}

inline ModelConfig tiny_config(std::size_t vocab, std::size_t context, std::size_t width = 8,
                               std::size_t layers = 1, std::size_t heads = 2) {
  ModelConfig c;
  c.layers = layers;
  c.width = width;
  c.heads = heads;
  c.context = context;
  c.vocab = vocab;
  c.dropout = 0.0;
  return c;
}

/// Parameters whose logits are identical for every token: all weights zero
/// except layer-norm gains, so every position sees the same (zero) logits.
template <typename Scalar>
TransformerParams<Scalar> uniform_model(const ModelConfig& config) {
  TransformerParams<Scalar> p;
  p.config = config;
  p.layout = ParamLayout(config);
  p.values = Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.layout.total()));
  return p;
}

/// Every level row of a schema, in lexicographic order.
inline std::vector<LevelRow> all_rows(const std::vector<std::size_t>& cards) {
  std::vector<LevelRow> out{LevelRow{}};
  for (std::size_t card : cards) {
    std::vector<LevelRow> next;
    for (const auto& prefix : out) {
      for (std::size_t v = 0; v < card; ++v) {
        LevelRow row = prefix;
        row.push_back(static_cast<int>(v));
        next.push_back(row);
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace dptab::testing
