#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dptab/checkpoint.hpp"
#include "dptab/pipeline.hpp"
#include "test_util.hpp"

using namespace dptab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dptab_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_table(const fs::path& dir, std::size_t n) {
  const auto path = dir / "table.csv";
  std::ofstream out(path);
  out << "colour,count,weight\n";
  const char* colours[] = {"red", "green", "blue"};
  for (std::size_t i = 0; i < n; ++i) {
    out << colours[i % 3] << "," << (i * 7) % 11 << "," << 0.25 * static_cast<double>(i % 13) << "\n";
  }
  return path;
}

RunConfig small_run(const fs::path& data, const fs::path& out) {
  RunConfig c;
  c.data = data;
  c.out = out;
  c.seed = 5;
  c.model.layers = 1;
  c.model.width = 16;
  c.model.heads = 2;
  c.model.context = 12;
  c.model.dropout = 0;
  c.dp.steps = 8;
  c.dp.batch = 16;
  c.dp.noise_multiplier = 1.0;
  c.dp.epsilon = 100;
  c.auto_batch = false;
  c.checkpoint_every = 4;
  c.diagnostic_rows = 10;
  return c;
}

}  // namespace

TEST(Pipeline, HeldoutSizes) {
  EXPECT_EQ(heldout_size(32561), 3256u);
  EXPECT_EQ(heldout_size(1728), 172u);
  EXPECT_EQ(heldout_size(200000), 10000u);
  EXPECT_EQ(heldout_size(5), 0u);
}

TEST(Pipeline, SplitIsSeededPartition) {
  const auto a = make_split(1728, 3);
  const auto b = make_split(1728, 3);
  const auto c = make_split(1728, 4);
  EXPECT_EQ(a.heldout, b.heldout);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.heldout, c.heldout);
  EXPECT_EQ(a.heldout.size(), 172u);
  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.heldout.begin(), a.heldout.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  const auto back = split_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(back.train, a.train);
  EXPECT_EQ(back.heldout, a.heldout);
  EXPECT_EQ(back.seed, a.seed);
}

TEST(Pipeline, RunConfigJson) {
  RunConfig c;
  c.data = "x.csv";
  c.dp.epsilon = 3;
  c.dp.augmult = 4;
  c.order = OrderPolicy::kRandom;
  c.tokenizer = TokenizerMode::kSemantic;
  c.guiding = Guiding::kNone;
  c.generation_order = OrderPolicy::kFixed;
  c.checkpoint = "ck";
  const auto doc = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(doc)), doc);
  auto bad = doc;
  bad["learning_rat"] = 1;
  EXPECT_THROW(run_config_from_json(bad), ConfigError);
  auto nested = doc;
  nested["dp"]["clipp"] = 1;
  EXPECT_THROW(run_config_from_json(nested), ConfigError);
  c.model.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pipeline, CheckpointRoundTripIsBitwise) {
  const auto toy = dptab::testing::make_toy({3, 4});
  TrainConfig tc;
  tc.dp.steps = 3;
  tc.dp.batch = 4;
  tc.dp.noise_multiplier = 1.2;
  tc.dp.epsilon = 1e3;
  const SentenceContext ctx{&toy.vocab, &toy.disc, &toy.tries, Guiding::kTrie};
  const auto rows = dptab::testing::all_rows({3, 4});
  Checkpoint ck{toy.disc, toy.vocab, start_training(dptab::testing::tiny_config(toy.vocab.size(), 6), tc, Rng(4)),
                1e-6, nlohmann::json{{"note", "x"}}};
  train(ck.state, ctx, std::span<const LevelRow>(rows), tc);
  const auto dir = scratch("checkpoint");
  save_checkpoint(dir / "ck", ck);
  const auto back = load_checkpoint(dir / "ck");
  EXPECT_EQ(back.state.params.values, ck.state.params.values);
  EXPECT_EQ(back.state.optimizer.m, ck.state.optimizer.m);
  EXPECT_EQ(back.state.optimizer.v, ck.state.optimizer.v);
  EXPECT_EQ(back.state.optimizer.step, ck.state.optimizer.step);
  EXPECT_EQ(back.state.step, 3u);
  EXPECT_EQ(back.state.rng, ck.state.rng);
  EXPECT_EQ(back.state.ledger.rdp, ck.state.ledger.rdp);
  EXPECT_EQ(to_json(back.disc), to_json(ck.disc));
  EXPECT_EQ(back.run, ck.run);
  EXPECT_EQ(checkpoint_id(dir / "ck"), checkpoint_id(dir / "ck"));
  EXPECT_EQ(checkpoint_id(dir / "ck").rfind("step3-", 0), 0u);

  // A flipped byte in the blob is caught by the checksum.
  {
    std::fstream blob(dir / "ck" / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
    blob.seekp(10);
    blob.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir / "ck"), DataError);
  fs::remove_all(dir);
}

TEST(Pipeline, ResumeFromCheckpointIsBitIdentical) {
  const auto toy = dptab::testing::make_toy({3, 4, 2});
  const SentenceContext ctx{&toy.vocab, &toy.disc, &toy.tries, Guiding::kTrie};
  const auto rows = dptab::testing::all_rows({3, 4, 2});
  TrainConfig tc;
  tc.dp.steps = 10;
  tc.dp.batch = 6;
  tc.dp.noise_multiplier = 1.1;
  tc.dp.epsilon = 1e3;
  tc.dp.augmult = 2;
  tc.order = OrderPolicy::kRandom;
  const auto model = dptab::testing::tiny_config(toy.vocab.size(), 9);
  const auto dir = scratch("resume");

  auto straight = start_training(model, tc, Rng(8));
  TrainConfig saving = tc;
  saving.checkpoint_every = 5;
  saving.on_checkpoint = [&](const TrainState& s) {
    save_checkpoint(dir / "mid", Checkpoint{toy.disc, toy.vocab, s, 1e-6, nlohmann::json::object()});
  };
  train(straight, ctx, std::span<const LevelRow>(rows), saving);

  auto resumed = load_checkpoint(dir / "mid").state;
  EXPECT_EQ(resumed.step, 5u);
  train(resumed, ctx, std::span<const LevelRow>(rows), tc);
  EXPECT_EQ(resumed.step, 10u);
  EXPECT_EQ(resumed.params.values, straight.params.values);
  EXPECT_EQ(resumed.ledger.rdp, straight.ledger.rdp);
  EXPECT_EQ(resumed.ledger.steps, straight.ledger.steps);
  fs::remove_all(dir);
}

TEST(Pipeline, EndToEndCommands) {
  const auto dir = scratch("e2e");
  const auto data = write_table(dir, 120);
  RunConfig c = small_run(data, dir / "run");
  std::ostringstream log;

  const auto prepared = cmd_prepare(c, log);
  EXPECT_EQ(prepared.disc.num_columns(), 3u);
  EXPECT_EQ(prepared.split.heldout.size(), 12u);
  EXPECT_TRUE(fs::exists(RunPaths{c.out}.discretizer()));

  const auto ck = cmd_train(c, log);
  EXPECT_EQ(ck.state.step, 8u);
  const double eps = to_epsilon(ck.state.ledger, ck.delta).epsilon;
  EXPECT_NEAR(eps, epsilon_for(16.0 / 108.0, 1.0, 8, 1e-6), 1e-12);

  std::ifstream telemetry(RunPaths{c.out}.telemetry());
  std::string line, last;
  std::size_t steps = 0, diagnostics = 0;
  while (std::getline(telemetry, line)) {
    const auto rec = nlohmann::json::parse(line);
    if (rec["kind"] == "step") ++steps;
    if (rec["kind"] == "heldout_diagnostic") {
      ++diagnostics;
      EXPECT_TRUE(rec["non_private"].get<bool>());
    }
    last = line;
  }
  EXPECT_EQ(steps, 8u);
  EXPECT_EQ(diagnostics, 2u);
  EXPECT_EQ(nlohmann::json::parse(last)["epsilon"].get<double>(), eps);

  c.generation.seed = 3;
  c.generation.rows = 40;
  cmd_generate(c, log);
  const auto first = slurp(RunPaths{c.out}.synthetic());
  cmd_generate(c, log);
  EXPECT_EQ(slurp(RunPaths{c.out}.synthetic()), first);
  std::istringstream csv(first);
  const auto synthetic = parse_csv(csv);
  EXPECT_EQ(synthetic.rows.size(), 40u);
  EXPECT_EQ(synthetic.schema.header(), (std::vector<std::string>{"colour", "count", "weight"}));
  const auto sidecar = nlohmann::json::parse(slurp(RunPaths{c.out}.synthetic_sidecar()));
  EXPECT_EQ(sidecar["rows"], 40);

  const auto report = cmd_evaluate(c, log);
  ASSERT_TRUE(report.nll.has_value());
  EXPECT_EQ(report.nll->rows, 12u);
  EXPECT_EQ(report.marginals.size(), 3u + 3u);
  EXPECT_TRUE(fs::exists(RunPaths{c.out}.report_dir() / "report.json"));
  fs::remove_all(dir);
}

TEST(Pipeline, ResumeContinuesStepsAndLedger) {
  const auto dir = scratch("resume_cmd");
  const auto data = write_table(dir, 80);
  std::ostringstream log;

  RunConfig whole = small_run(data, dir / "whole");
  cmd_prepare(whole, log);
  const auto full = cmd_train(whole, log);

  RunConfig half = small_run(data, dir / "half");
  half.dp.steps = 4;
  cmd_prepare(half, log);
  cmd_train(half, log);
  half.dp.steps = 8;
  half.resume = true;
  const auto resumed = cmd_train(half, log);
  EXPECT_EQ(resumed.state.step, 8u);
  EXPECT_EQ(resumed.state.ledger.steps, 8u);
  for (std::size_t i = 0; i < full.state.ledger.rdp.size(); ++i) {
    EXPECT_NEAR(resumed.state.ledger.rdp[i], full.state.ledger.rdp[i], 1e-12 * full.state.ledger.rdp[i]);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, ConfigErrors) {
  const auto dir = scratch("errors");
  const auto data = write_table(dir, 50);
  std::ostringstream log;
  RunConfig c = small_run(data, dir / "run");
  cmd_prepare(c, log);
  c.model.context = 5;
  EXPECT_THROW(cmd_train(c, log), ConfigError);
  c = small_run(data, dir / "run");
  c.dp.noise_multiplier = 0.3;
  c.dp.epsilon = 0.5;
  EXPECT_THROW(cmd_train(c, log), ConfigError);
  RunConfig missing = small_run(dir / "absent.csv", dir / "other");
  EXPECT_THROW(cmd_prepare(missing, log), DataError);
  fs::remove_all(dir);
}

TEST(Pipeline, AccountQueries) {
  AccountQuery q;
  q.q = 1.0;
  q.sigma = 2.0;
  q.steps = 1;
  const auto eps = cmd_account(q);
  EXPECT_NEAR(eps["epsilon"].get<double>(), epsilon_for(1.0, 2.0, 1, 1e-6), 1e-12);

  AccountQuery inverse;
  inverse.q = 0.01;
  inverse.steps = 1000;
  inverse.epsilon = 2.0;
  const auto sigma = cmd_account(inverse)["sigma"].get<double>();
  EXPECT_LE(epsilon_for(0.01, sigma, 1000, 1e-6), 2.0);

  AccountQuery batch;
  batch.n = 10000;
  batch.steps = 500;
  batch.epsilon = 4.0;
  const auto choice = cmd_account(batch);
  EXPECT_TRUE(choice["sigma"].get<double>() > 2 || choice["batch"].get<std::size_t>() == 10000u);

  AccountQuery incomplete;
  incomplete.steps = 5;
  EXPECT_THROW(cmd_account(incomplete), ConfigError);
}
