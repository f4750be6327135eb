#include "dptab/sentence_codec.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace dptab {

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::kLevel ? "level" : "semantic";
}

TokenizerMode tokenizer_mode_from_string(std::string_view text) {
  if (text == "level") return TokenizerMode::kLevel;
  if (text == "semantic") return TokenizerMode::kSemantic;
  throw ConfigError("unknown tokenizer '" + std::string(text) + "'");
}

std::string_view to_string(OrderPolicy policy) {
  return policy == OrderPolicy::kFixed ? "fixed" : "random";
}

OrderPolicy order_policy_from_string(std::string_view text) {
  if (text == "fixed") return OrderPolicy::kFixed;
  if (text == "random") return OrderPolicy::kRandom;
  throw ConfigError("unknown order policy '" + std::string(text) + "'");
}

Vocabulary::Vocabulary(TokenizerMode mode, std::vector<std::size_t> cardinalities)
    : mode_(mode), cardinalities_(std::move(cardinalities)) {
  const std::size_t c = cardinalities_.size();
  std::size_t next = 2 * c;
  offsets_.reserve(c);
  for (std::size_t card : cardinalities_) {
    if (card == 0) throw ConfigError("column cardinality must be positive");
    offsets_.push_back(next);
    if (mode_ == TokenizerMode::kLevel) next += card;
  }
  size_ = mode_ == TokenizerMode::kLevel ? next : 2 * c + kByteTokens;
}

TokenId Vocabulary::level_token(std::size_t column, int level) const {
  if (mode_ != TokenizerMode::kLevel) throw ConfigError("level tokens exist only in level mode");
  if (level < 0 || static_cast<std::size_t>(level) >= cardinalities_.at(column)) {
    throw DataError("level " + std::to_string(level) + " out of range for column " +
                    std::to_string(column));
  }
  return static_cast<TokenId>(offsets_[column] + static_cast<std::size_t>(level));
}

std::size_t Vocabulary::framing_column(TokenId id) const {
  if (is_begin(id)) return static_cast<std::size_t>(id);
  if (is_end(id)) return static_cast<std::size_t>(id) - num_columns();
  throw DataError("token " + std::to_string(id) + " is not a framing token");
}

std::pair<std::size_t, int> Vocabulary::level_of(TokenId id) const {
  if (mode_ != TokenizerMode::kLevel || !is_value(id)) {
    throw DataError("token " + std::to_string(id) + " is not a level token");
  }
  const auto pos = static_cast<std::size_t>(id);
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), pos);
  const auto column = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {column, static_cast<int>(pos - offsets_[column])};
}

std::vector<TokenId> Vocabulary::value_tokens(const ColumnCodec& codec, std::size_t column,
                                              int level) const {
  if (mode_ == TokenizerMode::kLevel) return {level_token(column, level)};
  const std::string label = codec.level_label(level);
  std::vector<TokenId> out;
  out.reserve(label.size());
  for (char ch : label) out.push_back(byte_token(static_cast<unsigned char>(ch)));
  return out;
}

nlohmann::json Vocabulary::descriptor() const {
  return {{"mode", to_string(mode_)},
          {"columns", num_columns()},
          {"cardinalities", cardinalities_},
          {"size", size_}};
}

Vocabulary Vocabulary::from_descriptor(const nlohmann::json& doc) {
  try {
    Vocabulary vocab(tokenizer_mode_from_string(doc.at("mode").get<std::string>()),
                     doc.at("cardinalities").get<std::vector<std::size_t>>());
    if (doc.at("columns").get<std::size_t>() != vocab.num_columns()) {
      throw ConfigError("vocabulary descriptor: column count mismatch");
    }
    if (doc.contains("size") && doc.at("size").get<std::size_t>() != vocab.size()) {
      throw ConfigError("vocabulary descriptor: size does not match layout");
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed vocabulary descriptor: ") + e.what());
  }
}

Vocabulary build_vocabulary(const Discretizer& disc, TokenizerMode mode) {
  return Vocabulary(mode, disc.cardinalities());
}

EncodedRow encode_row(const Vocabulary& vocab, const Discretizer& disc, const LevelRow& levels,
                      std::span<const std::size_t> order) {
  validate_levels(disc, levels);
  const std::size_t c = disc.num_columns();
  if (order.size() != c) throw DataError("column order has the wrong length");

  EncodedRow row;
  row.order.assign(order.begin(), order.end());
  row.inputs.reserve(3 * c);
  for (std::size_t column : order) {
    if (column >= c) throw DataError("column order names an unknown column");
    row.inputs.push_back(vocab.begin_token(column));
    const auto value = vocab.value_tokens(disc.columns[column], column, levels[column]);
    row.inputs.insert(row.inputs.end(), value.begin(), value.end());
    row.inputs.push_back(vocab.end_token(column));
  }

  const std::size_t n = row.inputs.size();
  row.targets.assign(n, kIgnore);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const TokenId next = row.inputs[t + 1];
    row.targets[t] = vocab.is_begin(next) ? kIgnore : next;
  }
  return row;
}

EncodedRow encode_row(const Vocabulary& vocab, const Discretizer& disc, const LevelRow& levels) {
  const auto order = identity_order(disc.num_columns());
  return encode_row(vocab, disc, levels, order);
}

LevelRow decode_sentence(const Vocabulary& vocab, const Discretizer& disc,
                         std::span<const TokenId> tokens) {
  const std::size_t c = disc.num_columns();
  LevelRow levels(c, -1);
  std::size_t t = 0;
  while (t < tokens.size()) {
    if (!vocab.is_begin(tokens[t])) {
      throw DataError("malformed sentence: expected a BEGIN token at position " + std::to_string(t));
    }
    const std::size_t column = vocab.framing_column(tokens[t]);
    const ColumnCodec& codec = disc.columns[column];
    if (levels[column] != -1) throw DataError("column '" + codec.name + "' appears twice");
    ++t;
    std::size_t stop = t;
    while (stop < tokens.size() && !vocab.is_end(tokens[stop]) && !vocab.is_begin(tokens[stop])) {
      ++stop;
    }
    if (stop == tokens.size() || tokens[stop] != vocab.end_token(column)) {
      throw DataError("column '" + codec.name + "' is not closed by its END token");
    }
    const auto value = tokens.subspan(t, stop - t);
    if (vocab.mode() == TokenizerMode::kLevel) {
      if (value.size() != 1) {
        throw DataError("column '" + codec.name + "' must hold exactly one level token");
      }
      const auto [owner, level] = vocab.level_of(value[0]);
      if (owner != column) {
        throw DataError("column '" + codec.name + "' holds a level token of another column");
      }
      levels[column] = level;
    } else {
      std::string label;
      for (TokenId id : value) {
        if (!vocab.is_value(id)) throw DataError("column '" + codec.name + "' holds a non-byte token");
        label.push_back(static_cast<char>(static_cast<std::size_t>(id) - 2 * c));
      }
      levels[column] = codec.level_from_label(label);
    }
    t = stop + 1;
  }
  for (std::size_t j = 0; j < c; ++j) {
    if (levels[j] == -1) throw DataError("missing column '" + disc.columns[j].name + "'");
  }
  return levels;
}

std::vector<std::size_t> identity_order(std::size_t columns) {
  std::vector<std::size_t> order(columns);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

std::vector<std::size_t> sample_order(std::size_t columns, Rng& rng, OrderPolicy policy) {
  auto order = identity_order(columns);
  if (policy == OrderPolicy::kRandom) std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::size_t max_sentence_length(const Vocabulary& vocab, const Discretizer& disc) {
  std::size_t total = 0;
  for (std::size_t j = 0; j < disc.num_columns(); ++j) {
    std::size_t longest = 0;
    for (int k = 0; k < static_cast<int>(disc.columns[j].cardinality()); ++k) {
      longest = std::max(longest, vocab.value_tokens(disc.columns[j], j, k).size());
    }
    total += longest + 2;
  }
  return total;
}

}  // namespace dptab
