#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dptab/evaluation.hpp"
#include "test_util.hpp"

using namespace dptab;
using dptab::testing::all_rows;
using dptab::testing::make_toy;
using dptab::testing::tiny_config;
using dptab::testing::uniform_model;

namespace {

std::vector<LevelRow> repeat(const LevelRow& row, std::size_t n) { return std::vector<LevelRow>(n, row); }

std::vector<LevelRow> concat(std::vector<LevelRow> a, const std::vector<LevelRow>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Evaluation, UniformModelNll) {
  const auto toy = make_toy({4, 5});
  const auto model = uniform_model<double>(tiny_config(toy.vocab.size(), 6));
  const auto row = encode_row(toy.vocab, toy.disc, {3, 1});
  EXPECT_NEAR(row_nll(model, toy.vocab, toy.tries, row, Guiding::kTrie), std::log(20.0), 1e-12);
  // Unguided: two values and two ENDs, each over the whole vocabulary.
  EXPECT_NEAR(row_nll(model, toy.vocab, toy.tries, row, Guiding::kNone),
              4 * std::log(static_cast<double>(toy.vocab.size())), 1e-12);
  const auto split = row_nll_by_column(model, toy.vocab, toy.tries, row, Guiding::kTrie);
  ASSERT_EQ(split.size(), 2u);
  EXPECT_NEAR(split[0], std::log(4.0), 1e-12);
  EXPECT_NEAR(split[1], std::log(5.0), 1e-12);

  const auto big = make_toy({100, 100});
  const auto big_model = uniform_model<double>(tiny_config(big.vocab.size(), 6));
  const auto big_row = encode_row(big.vocab, big.disc, {0, 99});
  EXPECT_NEAR(row_nll(big_model, big.vocab, big.tries, big_row, Guiding::kNone), 4 * std::log(204.0), 1e-12);
}

TEST(Evaluation, GuidedRowProbabilitiesSumToOne) {
  const std::vector<std::size_t> cards{3, 2, 4};
  for (TokenizerMode mode : {TokenizerMode::kLevel, TokenizerMode::kSemantic}) {
    const auto toy = make_toy(cards, mode);
    Rng rng(4);
    auto params = init_model<double>(tiny_config(toy.vocab.size(), max_sentence_length(toy.vocab, toy.disc), 8, 2, 2), rng);
    params.values *= 5.0;
    double total = 0;
    for (const auto& levels : all_rows(cards)) {
      total += std::exp(-row_nll(params, toy.vocab, toy.tries, encode_row(toy.vocab, toy.disc, levels), Guiding::kTrie));
    }
    EXPECT_NEAR(total, 1.0, 1e-6) << to_string(mode);
  }
}

TEST(Evaluation, MeanNllProperties) {
  const std::vector<std::size_t> cards{3, 7};
  const auto toy = make_toy(cards);
  const auto uniform = uniform_model<double>(tiny_config(toy.vocab.size(), 6));
  const auto rows = all_rows(cards);
  const auto u = mean_nll(uniform, toy.vocab, toy.disc, toy.tries, std::span<const LevelRow>(rows), Guiding::kTrie);
  EXPECT_NEAR(u.mean, std::log(3.0) + std::log(7.0), 1e-12);
  EXPECT_EQ(u.rows, rows.size());

  Rng rng(6);
  const auto params = init_model<double>(tiny_config(toy.vocab.size(), 6), rng);
  const auto base = mean_nll(params, toy.vocab, toy.disc, toy.tries, std::span<const LevelRow>(rows), Guiding::kTrie);
  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto s = mean_nll(params, toy.vocab, toy.disc, toy.tries, std::span<const LevelRow>(shuffled), Guiding::kTrie);
  EXPECT_NEAR(s.mean, base.mean, 1e-12);
  const auto doubled = concat(rows, rows);
  const auto d = mean_nll(params, toy.vocab, toy.disc, toy.tries, std::span<const LevelRow>(doubled), Guiding::kTrie);
  EXPECT_NEAR(d.mean, base.mean, 1e-12);
  double column_sum = 0;
  for (double c : base.per_column) column_sum += c;
  EXPECT_NEAR(column_sum, base.mean, 1e-12);
  EXPECT_THROW(mean_nll(params, toy.vocab, toy.disc, toy.tries, std::span<const LevelRow>(), Guiding::kTrie),
               DataError);
}

TEST(Evaluation, MarginalsOfSimpleTables) {
  const std::vector<std::size_t> cards{3, 3, 2};
  const auto constant = repeat({1, 2, 0}, 10);
  const auto m = kway_marginal(std::span<const LevelRow>(constant), std::span<const std::size_t>(cards), {0});
  EXPECT_EQ(m.freq, (std::vector<double>{0, 1, 0}));

  std::vector<LevelRow> grid;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) grid.push_back({a, b, 0});
  }
  const auto joint = kway_marginal(std::span<const LevelRow>(grid), std::span<const std::size_t>(cards), {1, 0});
  EXPECT_EQ(joint.columns, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(joint.shape, (std::vector<std::size_t>{3, 3}));
  for (double f : joint.freq) EXPECT_NEAR(f, 1.0 / 9, 1e-15);

  EXPECT_THROW(kway_marginal(std::span<const LevelRow>(grid), std::span<const std::size_t>(cards), {0, 1, 2, 0}),
               DataError);
  EXPECT_THROW(kway_marginal(std::span<const LevelRow>(grid), std::span<const std::size_t>(cards), {0, 0}), DataError);
  EXPECT_THROW(kway_marginal(std::span<const LevelRow>(), std::span<const std::size_t>(cards), {0}), DataError);
}

TEST(Evaluation, TotalVariationDistance) {
  const std::vector<std::size_t> cards{2};
  const auto real = concat(repeat({0}, 5), repeat({1}, 5));
  const auto synth = concat(repeat({0}, 8), repeat({1}, 2));
  const auto a = kway_marginal(std::span<const LevelRow>(real), std::span<const std::size_t>(cards), {0});
  const auto b = kway_marginal(std::span<const LevelRow>(synth), std::span<const std::size_t>(cards), {0});
  EXPECT_NEAR(marginal_tvd(a, b), 0.3, 1e-12);
  EXPECT_EQ(marginal_tvd(a, a), 0.0);

  const auto left = repeat({0}, 4);
  const auto right = repeat({1}, 7);
  EXPECT_NEAR(marginal_tvd(kway_marginal(std::span<const LevelRow>(left), std::span<const std::size_t>(cards), {0}),
                           kway_marginal(std::span<const LevelRow>(right), std::span<const std::size_t>(cards), {0})),
              1.0, 1e-12);

  const std::vector<std::size_t> wide{4, 3};
  Rng rng(9);
  std::uniform_int_distribution<int> four(0, 3), three(0, 2);
  auto random_table = [&](std::size_t n) {
    std::vector<LevelRow> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back({four(rng), three(rng)});
    return kway_marginal(std::span<const LevelRow>(rows), std::span<const std::size_t>(wide), {0, 1});
  };
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_table(30), q = random_table(40), r = random_table(50);
    EXPECT_NEAR(marginal_tvd(p, q), marginal_tvd(q, p), 1e-15);
    EXPECT_LE(marginal_tvd(p, r), marginal_tvd(p, q) + marginal_tvd(q, r) + 1e-12);
    EXPECT_GE(marginal_tvd(p, q), 0.0);
    EXPECT_LE(marginal_tvd(p, q), 1.0);
  }
  const auto mismatch = kway_marginal(std::span<const LevelRow>(real), std::span<const std::size_t>(cards), {0});
  EXPECT_THROW(marginal_tvd(mismatch, random_table(5)), DataError);
}

TEST(Evaluation, SumOutMatchesLowerMarginal) {
  const std::vector<std::size_t> cards{3, 4, 2};
  Rng rng(10);
  std::vector<LevelRow> rows;
  for (int i = 0; i < 200; ++i) {
    rows.push_back({static_cast<int>(rng() % 3), static_cast<int>(rng() % 4), static_cast<int>(rng() % 2)});
  }
  const auto span = std::span<const LevelRow>(rows);
  const auto c = std::span<const std::size_t>(cards);
  const auto three = kway_marginal(span, c, {0, 1, 2});
  const auto pair = sum_out(three, 1);
  const auto direct = kway_marginal(span, c, {0, 2});
  ASSERT_EQ(pair.columns, direct.columns);
  ASSERT_EQ(pair.shape, direct.shape);
  for (std::size_t i = 0; i < pair.freq.size(); ++i) EXPECT_NEAR(pair.freq[i], direct.freq[i], 1e-12);
  const auto single = sum_out(sum_out(three, 0), 2);
  const auto one = kway_marginal(span, c, {1});
  for (std::size_t i = 0; i < one.freq.size(); ++i) EXPECT_NEAR(single.freq[i], one.freq[i], 1e-12);
}

TEST(Evaluation, CompareMarginalsCoverage) {
  const std::vector<std::size_t> cards{2, 3, 2, 2};
  const auto rows = all_rows(cards);
  Rng rng(11);
  const auto all = compare_marginals(std::span<const LevelRow>(rows), std::span<const LevelRow>(rows),
                                     std::span<const std::size_t>(cards), rng);
  EXPECT_EQ(all.size(), 4u + 6u);
  for (const auto& m : all) EXPECT_EQ(m.tvd, 0.0);

  const std::vector<std::size_t> many(30, 2);
  std::vector<LevelRow> wide{LevelRow(30, 0), LevelRow(30, 1)};
  const auto sampled = compare_marginals(std::span<const LevelRow>(wide), std::span<const LevelRow>(wide),
                                         std::span<const std::size_t>(many), rng, 40);
  EXPECT_EQ(sampled.size(), 30u + 40u);
}

TEST(Evaluation, ReportRoundTripAndPlots) {
  const std::vector<std::size_t> cards{2, 3, 2};
  const auto rows = all_rows(cards);
  const auto synth = concat(rows, repeat({0, 0, 0}, 5));
  Rng rng(12);
  EvalReport report;
  report.column_names = {"sex", "job", "flag"};
  report.marginals = compare_marginals(std::span<const LevelRow>(rows), std::span<const LevelRow>(synth),
                                       std::span<const std::size_t>(cards), rng);
  report.nll = NllSummary{3.5, {1.0, 2.0, 0.5}, 12};
  report.metadata["seed"] = 12;
  const auto doc = to_json(report);
  const auto back = report_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(to_json(back), doc);
  EXPECT_NEAR(back.tvd_max(), report.tvd_max(), 1e-15);
  EXPECT_GT(report.tvd_mean(), 0.0);
  EXPECT_LE(report.tvd_mean(), report.tvd_max());

  const auto svg = render_marginal_svg(report.marginals[3], report.column_names);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("sex"), std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "dptab_eval_report_test";
  std::filesystem::remove_all(dir);
  const auto files = emit_report(report, dir, true, 2);
  EXPECT_EQ(files.size(), 1u + 3u + 2u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
  EXPECT_EQ(emit_report(report, dir / "quiet", false).size(), 1u);
  std::filesystem::remove_all(dir);
}
