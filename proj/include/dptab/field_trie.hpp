#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "dptab/common.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"

namespace dptab {

enum class Guiding { kTrie, kNone };

std::string_view to_string(Guiding guiding);
Guiding guiding_from_string(std::string_view text);

struct TrieNode {
  std::vector<std::pair<TokenId, int>> children;  // sorted by token
  int level = -1;                                  // >= 0 on terminal nodes
  std::vector<TokenId> valid;                      // children, then END if terminal

  bool terminal() const { return level >= 0; }
};

/// Prefix tree over the token sequences of one column's values.
struct ColumnTrie {
  std::vector<TrieNode> nodes;  // nodes[0] is the root
  TokenId end_token = 0;
  std::size_t leaf_count = 0;

  std::size_t depth() const;
};

class ColumnTrieSet {
 public:
  ColumnTrieSet() = default;
  explicit ColumnTrieSet(std::vector<ColumnTrie> tries) : tries_(std::move(tries)) {}

  std::size_t num_columns() const { return tries_.size(); }
  const ColumnTrie& column(std::size_t j) const { return tries_.at(j); }

 private:
  std::vector<ColumnTrie> tries_;
};

ColumnTrieSet build_tries(const Vocabulary& vocab, const Discretizer& disc);

/// Position inside one column's trie. `finished` marks the cursor produced
/// by closing the last column of the active order.
struct TrieCursor {
  std::size_t column = 0;
  int node = 0;
  std::size_t consumed = 0;
  bool finished = false;
};

TrieCursor root_cursor(const ColumnTrieSet& tries, std::size_t column);

/// Children of the current node, plus the column's END token on terminal nodes.
std::span<const TokenId> valid_tokens(const ColumnTrieSet& tries, const TrieCursor& cursor);

/// Follows one edge. END on a terminal node closes the column and returns the
/// root of the column that follows it in `order` (or a finished cursor).
TrieCursor advance(const ColumnTrieSet& tries, const TrieCursor& cursor, TokenId token,
                   std::span<const std::size_t> order);

/// Level reached by a cursor sitting on a terminal node.
int terminal_level(const ColumnTrieSet& tries, const TrieCursor& cursor);

/// Valid-token set of every predicted position, following the sentence
/// itself. Entries for IGNORE targets are empty. Throws DataError if a
/// target falls outside its set.
std::vector<std::span<const TokenId>> teacher_forced_masks(const ColumnTrieSet& tries,
                                                           const Vocabulary& vocab,
                                                           const EncodedRow& row);

/// Replaces every score outside `valid` with the lowest finite value, so a
/// subtract-max softmax assigns them exactly zero probability.
template <typename Derived>
Vector<typename Derived::Scalar> mask_logits(const Eigen::MatrixBase<Derived>& logits,
                                             std::span<const TokenId> valid) {
  using Scalar = typename Derived::Scalar;
  if (valid.empty()) throw NumericError("mask_logits: empty valid set");
  Vector<Scalar> masked =
      Vector<Scalar>::Constant(logits.size(), std::numeric_limits<Scalar>::lowest());
  for (TokenId id : valid) masked(id) = logits(id);
  return masked;
}

/// exp(scores - shift), with masked entries exactly zero. Vectorized exp
/// clamps its argument, so it cannot be relied on to underflow to 0.
template <typename Derived>
Vector<typename Derived::Scalar> masked_exp(const Eigen::MatrixBase<Derived>& scores,
                                            typename Derived::Scalar shift) {
  using Scalar = typename Derived::Scalar;
  const auto masked = scores.array() == std::numeric_limits<Scalar>::lowest();
  return masked.select(Scalar(0), (scores.array() - shift).exp()).matrix();
}

/// Subtract-max softmax of a score vector.
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& scores) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> p = masked_exp(scores, scores.maxCoeff());
  p /= p.sum();
  return p;
}

}  // namespace dptab
