#include "dptab/field_trie.hpp"

#include <algorithm>
#include <string>

namespace dptab {

std::string_view to_string(Guiding guiding) { return guiding == Guiding::kTrie ? "trie" : "none"; }

Guiding guiding_from_string(std::string_view text) {
  if (text == "trie") return Guiding::kTrie;
  if (text == "none") return Guiding::kNone;
  throw ConfigError("unknown guiding mode '" + std::string(text) + "'");
}

std::size_t ColumnTrie::depth() const {
  std::vector<std::size_t> depth_of(nodes.size(), 0);
  std::size_t deepest = 0;
  // Children are always appended after their parent.
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& [token, child] : nodes[i].children) {
      depth_of[child] = depth_of[i] + 1;
      deepest = std::max(deepest, depth_of[child]);
    }
  }
  return deepest;
}

ColumnTrieSet build_tries(const Vocabulary& vocab, const Discretizer& disc) {
  if (vocab.num_columns() != disc.num_columns() || vocab.cardinalities() != disc.cardinalities()) {
    throw ConfigError("vocabulary does not match the discretizer");
  }
  std::vector<ColumnTrie> tries;
  tries.reserve(disc.num_columns());
  for (std::size_t j = 0; j < disc.num_columns(); ++j) {
    const ColumnCodec& codec = disc.columns[j];
    ColumnTrie trie;
    trie.end_token = vocab.end_token(j);
    trie.nodes.emplace_back();
    for (int level = 0; level < static_cast<int>(codec.cardinality()); ++level) {
      int node = 0;
      for (TokenId token : vocab.value_tokens(codec, j, level)) {
        auto& children = trie.nodes[node].children;
        auto it = std::lower_bound(children.begin(), children.end(), token,
                                   [](const auto& edge, TokenId t) { return edge.first < t; });
        if (it != children.end() && it->first == token) {
          node = it->second;
          continue;
        }
        const int child = static_cast<int>(trie.nodes.size());
        children.insert(it, {token, child});
        trie.nodes.emplace_back();
        node = child;
      }
      if (trie.nodes[node].terminal()) {
        throw DataError("column '" + codec.name + "': two levels share one token sequence");
      }
      trie.nodes[node].level = level;
      ++trie.leaf_count;
    }
    for (auto& node : trie.nodes) {
      for (const auto& [token, child] : node.children) node.valid.push_back(token);
      if (node.terminal()) node.valid.push_back(trie.end_token);
    }
    tries.push_back(std::move(trie));
  }
  return ColumnTrieSet(std::move(tries));
}

TrieCursor root_cursor(const ColumnTrieSet& tries, std::size_t column) {
  if (column >= tries.num_columns()) throw DataError("cursor for unknown column");
  return TrieCursor{column, 0, 0, false};
}

std::span<const TokenId> valid_tokens(const ColumnTrieSet& tries, const TrieCursor& cursor) {
  if (cursor.finished) return {};
  return tries.column(cursor.column).nodes[cursor.node].valid;
}

TrieCursor advance(const ColumnTrieSet& tries, const TrieCursor& cursor, TokenId token,
                   std::span<const std::size_t> order) {
  if (cursor.finished) throw DataError("advance past the end of the sentence");
  const ColumnTrie& trie = tries.column(cursor.column);
  const TrieNode& node = trie.nodes[cursor.node];
  if (token == trie.end_token && node.terminal()) {
    const auto pos = std::find(order.begin(), order.end(), cursor.column);
    if (pos == order.end() || pos + 1 == order.end()) {
      return TrieCursor{cursor.column, cursor.node, cursor.consumed + 1, true};
    }
    return root_cursor(tries, *(pos + 1));
  }
  const auto it = std::lower_bound(node.children.begin(), node.children.end(), token,
                                   [](const auto& edge, TokenId t) { return edge.first < t; });
  if (it == node.children.end() || it->first != token) {
    throw DataError("token " + std::to_string(token) + " is not valid for column " +
                    std::to_string(cursor.column) + " at this position");
  }
  return TrieCursor{cursor.column, it->second, cursor.consumed + 1, false};
}

int terminal_level(const ColumnTrieSet& tries, const TrieCursor& cursor) {
  const TrieNode& node = tries.column(cursor.column).nodes[cursor.node];
  if (!node.terminal()) throw DataError("cursor is not on a complete value");
  return node.level;
}

std::vector<std::span<const TokenId>> teacher_forced_masks(const ColumnTrieSet& tries,
                                                           const Vocabulary& vocab,
                                                           const EncodedRow& row) {
  std::vector<std::span<const TokenId>> masks(row.length());
  TrieCursor cursor;
  bool open = false;
  for (std::size_t t = 0; t < row.length(); ++t) {
    const TokenId input = row.inputs[t];
    if (vocab.is_begin(input)) {
      cursor = root_cursor(tries, vocab.framing_column(input));
      open = true;
    } else if (open) {
      cursor = advance(tries, cursor, input, row.order);
      if (vocab.is_end(input)) open = false;
    } else {
      throw DataError("value token outside a column block at position " + std::to_string(t));
    }
    if (row.targets[t] == kIgnore) continue;
    if (!open) throw DataError("predicted position outside a column block");
    masks[t] = valid_tokens(tries, cursor);
    if (std::find(masks[t].begin(), masks[t].end(), row.targets[t]) == masks[t].end()) {
      throw DataError("target token " + std::to_string(row.targets[t]) + " at position " +
                      std::to_string(t) + " is not allowed by the trie");
    }
  }
  return masks;
}

}  // namespace dptab
