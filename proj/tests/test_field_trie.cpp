#include <gtest/gtest.h>

#include <cmath>

#include "dptab/field_trie.hpp"
#include "test_util.hpp"

using namespace dptab;
using dptab::testing::categorical_disc;
using dptab::testing::make_toy;

namespace {

std::vector<TokenId> as_vector(std::span<const TokenId> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(FieldTrie, LevelModeTriesAreDepthOne) {
  const auto toy = make_toy({100, 3});
  const auto& trie = toy.tries.column(0);
  EXPECT_EQ(trie.depth(), 1u);
  EXPECT_EQ(trie.leaf_count, 100u);
  const auto root = valid_tokens(toy.tries, root_cursor(toy.tries, 0));
  ASSERT_EQ(root.size(), 100u);
  for (int v = 0; v < 100; ++v) EXPECT_EQ(root[static_cast<std::size_t>(v)], toy.vocab.level_token(0, v));
  const auto order = identity_order(2);
  const auto leaf = advance(toy.tries, root_cursor(toy.tries, 0), toy.vocab.level_token(0, 42), order);
  EXPECT_EQ(as_vector(valid_tokens(toy.tries, leaf)), std::vector<TokenId>{toy.vocab.end_token(0)});
  EXPECT_EQ(terminal_level(toy.tries, leaf), 42);
  const auto next = advance(toy.tries, leaf, toy.vocab.end_token(0), order);
  EXPECT_EQ(next.column, 1u);
  EXPECT_EQ(next.node, 0);
  const auto done = advance(toy.tries,
                            advance(toy.tries, next, toy.vocab.level_token(1, 0), order),
                            toy.vocab.end_token(1), order);
  EXPECT_TRUE(done.finished);
}

TEST(FieldTrie, ByteTrieSharesPrefix) {
  Discretizer disc = categorical_disc({2});
  disc.columns[0].name = "height";
  disc.columns[0].categories = {"6\"5\"", "6\"7\""};
  const auto vocab = build_vocabulary(disc, TokenizerMode::kSemantic);
  const auto tries = build_tries(vocab, disc);
  const auto order = identity_order(1);
  auto byte = [&](char c) { return vocab.byte_token(static_cast<unsigned char>(c)); };
  TrieCursor cur = root_cursor(tries, 0);
  EXPECT_EQ(as_vector(valid_tokens(tries, cur)), std::vector<TokenId>{byte('6')});
  cur = advance(tries, cur, byte('6'), order);
  EXPECT_EQ(as_vector(valid_tokens(tries, cur)), std::vector<TokenId>{byte('"')});
  cur = advance(tries, cur, byte('"'), order);
  EXPECT_EQ(as_vector(valid_tokens(tries, cur)), (std::vector<TokenId>{byte('5'), byte('7')}));
  EXPECT_EQ(tries.column(0).leaf_count, 2u);
  EXPECT_EQ(tries.column(0).depth(), 4u);
  EXPECT_THROW(advance(tries, cur, byte('9'), order), DataError);
}

TEST(FieldTrie, PrefixValueMakesEndADecision) {
  Discretizer disc = categorical_disc({3});
  disc.columns[0].categories = {"ab", "a", "abc"};
  const auto vocab = build_vocabulary(disc, TokenizerMode::kSemantic);
  const auto tries = build_tries(vocab, disc);
  const auto order = identity_order(1);
  auto byte = [&](char c) { return vocab.byte_token(static_cast<unsigned char>(c)); };
  auto cur = advance(tries, root_cursor(tries, 0), byte('a'), order);
  EXPECT_EQ(as_vector(valid_tokens(tries, cur)), (std::vector<TokenId>{byte('b'), vocab.end_token(0)}));
  EXPECT_EQ(terminal_level(tries, cur), 1);
  cur = advance(tries, cur, byte('b'), order);
  EXPECT_EQ(terminal_level(tries, cur), 0);
  EXPECT_EQ(tries.column(0).leaf_count, 3u);
}

TEST(FieldTrie, SingleValueColumnHasSingletonMasks) {
  const auto toy = make_toy({1, 1});
  const auto row = encode_row(toy.vocab, toy.disc, {0, 0});
  for (const auto& mask : teacher_forced_masks(toy.tries, toy.vocab, row)) {
    EXPECT_LE(mask.size(), 1u);
  }
}

TEST(FieldTrie, LeafCountEqualsCardinality) {
  auto disc = categorical_disc({4, 7, 1});
  disc.columns[1].has_unknown = true;
  ColumnCodec numeric;
  numeric.name = "x";
  numeric.kind = ColumnKind::kFloat;
  numeric.edges = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  disc.columns.push_back(numeric);
  for (TokenizerMode mode : {TokenizerMode::kLevel, TokenizerMode::kSemantic}) {
    const auto vocab = build_vocabulary(disc, mode);
    const auto tries = build_tries(vocab, disc);
    for (std::size_t j = 0; j < disc.num_columns(); ++j) {
      EXPECT_EQ(tries.column(j).leaf_count, disc.columns[j].cardinality());
    }
  }
}

TEST(FieldTrie, WalkReplaysEncodedSentence) {
  auto disc = categorical_disc({3, 5});
  disc.columns[0].categories = {"x", "xy", "yz"};
  for (TokenizerMode mode : {TokenizerMode::kLevel, TokenizerMode::kSemantic}) {
    const auto vocab = build_vocabulary(disc, mode);
    const auto tries = build_tries(vocab, disc);
    for (const auto& levels : dptab::testing::all_rows({3, 5})) {
      const std::vector<std::size_t> order{1, 0};
      const auto row = encode_row(vocab, disc, levels, order);
      TrieCursor cur = root_cursor(tries, order[0]);
      for (std::size_t t = 1; t < row.length(); ++t) {
        const TokenId token = row.inputs[t];
        if (vocab.is_begin(token)) continue;
        const auto valid = valid_tokens(tries, cur);
        ASSERT_NE(std::find(valid.begin(), valid.end(), token), valid.end());
        cur = advance(tries, cur, token, order);
      }
      EXPECT_TRUE(cur.finished);
    }
  }
}

TEST(FieldTrie, MaskedSoftmaxMatchesRenormalization) {
  Rng rng(2);
  std::normal_distribution<double> normal(0, 3);
  Vector<double> logits(204);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = normal(rng);
  std::vector<TokenId> valid;
  for (TokenId id = 104; id < 204; ++id) valid.push_back(id);

  const Vector<double> p = softmax(mask_logits(logits, valid));
  double z = 0;
  for (TokenId id : valid) z += std::exp(logits(id));
  for (TokenId id = 0; id < 204; ++id) {
    if (id < 104) {
      EXPECT_EQ(p(id), 0.0);
    } else {
      EXPECT_NEAR(p(id), std::exp(logits(id)) / z, 1e-14);
    }
  }
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_EQ(mask_logits(mask_logits(logits, valid), valid), mask_logits(logits, valid));

  const Vector<float> flat = Vector<float>::Zero(10);
  const std::vector<TokenId> four{1, 3, 5, 7};
  const Vector<float> q = softmax(mask_logits(flat, four));
  for (TokenId id : four) EXPECT_FLOAT_EQ(q(id), 0.25f);
  const std::vector<TokenId> one{6};
  EXPECT_EQ(softmax(mask_logits(flat, one))(6), 1.0f);
  EXPECT_THROW(mask_logits(flat, std::span<const TokenId>()), NumericError);
}

TEST(FieldTrie, TeacherForcedMasksCoverTargets) {
  const auto toy = make_toy({4, 5});
  const auto row = encode_row(toy.vocab, toy.disc, {2, 3});
  const auto masks = teacher_forced_masks(toy.tries, toy.vocab, row);
  ASSERT_EQ(masks.size(), row.length());
  EXPECT_EQ(masks[0].size(), 4u);
  EXPECT_EQ(masks[1].size(), 1u);
  EXPECT_TRUE(masks[2].empty());
  EXPECT_EQ(masks[3].size(), 5u);
  EncodedRow bad = row;
  bad.targets[0] = toy.vocab.level_token(1, 0);
  EXPECT_THROW(teacher_forced_masks(toy.tries, toy.vocab, bad), DataError);
}
