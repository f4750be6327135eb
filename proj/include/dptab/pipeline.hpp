#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dptab/checkpoint.hpp"
#include "dptab/dp_train.hpp"
#include "dptab/evaluation.hpp"
#include "dptab/field_trie.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/synthesis.hpp"
#include "dptab/transformer.hpp"

namespace dptab {

struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path out = "dptab_out";
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  /// Draw training noise from OS entropy instead of `seed`.
  bool entropy_noise = false;

  ModelConfig model;
  DpConfig dp;
  /// Pick (B, sigma) with choose_batch; otherwise sigma is calibrated for
  /// dp.batch, unless dp.noise_multiplier is set explicitly.
  bool auto_batch = true;
  OptimizerConfig optimizer;
  OrderPolicy order = OrderPolicy::kFixed;
  TokenizerMode tokenizer = TokenizerMode::kLevel;
  Guiding guiding = Guiding::kTrie;

  std::size_t workers = 1;
  std::size_t checkpoint_every = 1000;
  /// Held-out NLL on up to `diagnostic_rows` rows at every checkpoint. Not
  /// covered by the privacy ledger.
  std::size_t diagnostic_rows = 500;
  bool resume = false;
  /// Defaults to `out/checkpoint`.
  std::optional<std::filesystem::path> checkpoint;

  /// rows == 0 generates as many rows as the training split.
  GenerationConfig generation;
  /// Defaults to the training order policy.
  std::optional<OrderPolicy> generation_order;

  std::optional<std::filesystem::path> synthetic;
  bool plots = true;
  std::size_t max_pairs = 300;
  std::size_t max_plots = 20;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

struct Split {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Held-out size is floor(min(0.1 n, 10000)); membership is a seeded shuffle.
std::size_t heldout_size(std::size_t n);
Split make_split(std::size_t n, std::uint64_t seed);

nlohmann::json to_json(const Split& split);
Split split_from_json(const nlohmann::json& doc);

/// Paths inside the run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path discretizer() const { return root / "discretizer.json"; }
  std::filesystem::path vocabulary() const { return root / "vocabulary.json"; }
  std::filesystem::path split() const { return root / "split.json"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint"; }
  std::filesystem::path config() const { return root / "run_config.json"; }
  std::filesystem::path telemetry() const { return root / "telemetry.ndjson"; }
  std::filesystem::path synthetic() const { return root / "synthetic.csv"; }
  std::filesystem::path synthetic_sidecar() const { return root / "synthetic.json"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

struct PrepareResult {
  Discretizer disc;
  Vocabulary vocab;
  Split split;
};

/// Fits the discretizer on the full table and writes discretizer, vocabulary
/// and split files.
PrepareResult cmd_prepare(const RunConfig& config, std::ostream& log);

/// Calibrates, trains and writes the checkpoint plus telemetry. Returns the
/// final checkpoint.
Checkpoint cmd_train(const RunConfig& config, std::ostream& log);

/// Writes the synthetic CSV and its sidecar; returns the table.
SyntheticTable cmd_generate(const RunConfig& config, std::ostream& log);

/// Held-out NLL plus marginal comparisons against train + valid.
EvalReport cmd_evaluate(const RunConfig& config, std::ostream& log);

struct AccountQuery {
  std::optional<double> q;
  std::optional<double> sigma;
  std::optional<std::size_t> n;
  std::optional<std::size_t> batch;
  std::size_t steps = 0;
  double delta = 1e-6;
  std::optional<double> epsilon;
};

/// Epsilon for (q, sigma, steps); sigma for (q, steps, epsilon); or
/// choose_batch for (n, steps, epsilon).
nlohmann::json cmd_account(const AccountQuery& query);

}  // namespace dptab
