#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"
#include "dptab/table_codec.hpp"

namespace dptab {

enum class TokenizerMode { kLevel, kSemantic };
enum class OrderPolicy { kFixed, kRandom };

std::string_view to_string(TokenizerMode mode);
TokenizerMode tokenizer_mode_from_string(std::string_view text);
std::string_view to_string(OrderPolicy policy);
OrderPolicy order_policy_from_string(std::string_view text);

inline constexpr std::size_t kByteTokens = 256;

/// Token-id layout. Ids [0, C) are BEGIN tokens in column order, [C, 2C) END
/// tokens, then either one block of `cardinality_j` level tokens per column
/// (level mode) or 256 shared byte tokens (semantic mode).
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(TokenizerMode mode, std::vector<std::size_t> cardinalities);

  TokenizerMode mode() const { return mode_; }
  std::size_t num_columns() const { return cardinalities_.size(); }
  std::size_t size() const { return size_; }
  const std::vector<std::size_t>& cardinalities() const { return cardinalities_; }

  TokenId begin_token(std::size_t column) const { return static_cast<TokenId>(column); }
  TokenId end_token(std::size_t column) const {
    return static_cast<TokenId>(num_columns() + column);
  }
  /// Level mode only.
  TokenId level_token(std::size_t column, int level) const;
  TokenId byte_token(unsigned char byte) const {
    return static_cast<TokenId>(2 * num_columns() + byte);
  }

  bool is_begin(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < num_columns(); }
  bool is_end(TokenId id) const {
    return static_cast<std::size_t>(id) >= num_columns() &&
           static_cast<std::size_t>(id) < 2 * num_columns();
  }
  bool is_value(TokenId id) const {
    return static_cast<std::size_t>(id) >= 2 * num_columns() && static_cast<std::size_t>(id) < size_;
  }
  /// Column owning a BEGIN or END token.
  std::size_t framing_column(TokenId id) const;
  /// Level-mode inverse of level_token: (column, level).
  std::pair<std::size_t, int> level_of(TokenId id) const;

  /// Token sequence of one value (no framing).
  std::vector<TokenId> value_tokens(const ColumnCodec& codec, std::size_t column, int level) const;

  nlohmann::json descriptor() const;
  static Vocabulary from_descriptor(const nlohmann::json& doc);

 private:
  TokenizerMode mode_ = TokenizerMode::kLevel;
  std::vector<std::size_t> cardinalities_;
  std::vector<std::size_t> offsets_;
  std::size_t size_ = 0;
};

Vocabulary build_vocabulary(const Discretizer& disc, TokenizerMode mode);

struct EncodedRow {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  std::vector<std::size_t> order;

  std::size_t length() const { return inputs.size(); }
};

EncodedRow encode_row(const Vocabulary& vocab, const Discretizer& disc, const LevelRow& levels,
                      std::span<const std::size_t> order);
EncodedRow encode_row(const Vocabulary& vocab, const Discretizer& disc, const LevelRow& levels);

/// Parses BEGIN..END blocks in any column order back into levels.
LevelRow decode_sentence(const Vocabulary& vocab, const Discretizer& disc,
                         std::span<const TokenId> tokens);

std::vector<std::size_t> identity_order(std::size_t columns);
std::vector<std::size_t> sample_order(std::size_t columns, Rng& rng, OrderPolicy policy);

/// Longest sentence any row can encode to.
std::size_t max_sentence_length(const Vocabulary& vocab, const Discretizer& disc);

}  // namespace dptab
