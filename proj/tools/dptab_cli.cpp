// Command-line driver: prepare, train, generate, evaluate, account.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dptab/pipeline.hpp"

namespace {

using dptab::RunConfig;

template <typename T>
struct Flag {
  T value{};
  // One option per subcommand that registers the flag.
  std::vector<CLI::Option*> options;

  bool set() const {
    for (const auto* option : options) {
      if (option->count() > 0) return true;
    }
    return false;
  }
};

/// Flags shared by the pipeline subcommands; each overrides the config file.
struct Overrides {
  std::string config;
  Flag<std::string> data, out, order, tokenizer, guiding, checkpoint, synthetic, gen_order;
  Flag<std::uint64_t> seed, split_seed;
  Flag<double> epsilon, delta, clip, noise_multiplier, lr, dropout, temperature;
  Flag<std::size_t> steps, batch, workers, augmult, layers, width, heads, context, rows,
      checkpoint_every;
  bool non_private = false;
  bool resume = false;
  bool entropy_noise = false;
  bool no_plots = false;
};

template <typename T>
void add(CLI::App* app, Flag<T>& flag, const std::string& name, const std::string& help) {
  flag.options.push_back(app->add_option(name, flag.value, help));
}

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run config; flags override its keys");
  add(app, o.data, "--data", "input CSV");
  add(app, o.out, "--out", "run directory");
  add(app, o.checkpoint, "--checkpoint", "checkpoint directory (default <out>/checkpoint)");
  add(app, o.workers, "--workers", "worker threads");
}

void add_training(CLI::App* app, Overrides& o) {
  add(app, o.seed, "--seed", "training seed");
  add(app, o.epsilon, "--epsilon", "target epsilon");
  add(app, o.delta, "--delta", "target delta");
  add(app, o.clip, "--clip", "per-example clip norm");
  add(app, o.noise_multiplier, "--noise-multiplier", "fixed sigma (skips calibration)");
  add(app, o.steps, "--steps", "training steps");
  add(app, o.batch, "--batch", "expected batch size (disables batch doubling)");
  add(app, o.augmult, "--augmult", "augmentation multiplicity");
  add(app, o.lr, "--lr", "peak learning rate");
  add(app, o.layers, "--layers", "transformer layers");
  add(app, o.width, "--width", "model width");
  add(app, o.heads, "--heads", "attention heads");
  add(app, o.context, "--context", "context length");
  add(app, o.dropout, "--dropout", "dropout rate");
  add(app, o.checkpoint_every, "--checkpoint-every", "steps between checkpoints (0 = end only)");
  o.order.options.push_back(app->add_option("--order", o.order.value, "column order policy")
                       ->check(CLI::IsMember({"fixed", "random"})));
  app->add_flag("--non-private", o.non_private, "train without clipping, noise or accounting");
  app->add_flag("--resume", o.resume, "continue from the existing checkpoint");
  app->add_flag("--entropy-noise", o.entropy_noise, "seed training noise from OS entropy");
}

void add_guiding(CLI::App* app, Overrides& o) {
  o.guiding.options.push_back(app->add_option("--guiding", o.guiding.value, "trie guiding")
                         ->check(CLI::IsMember({"trie", "none"})));
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : dptab::load_run_config(o.config);
  if (o.data.set()) c.data = o.data.value;
  if (o.out.set()) c.out = o.out.value;
  if (o.checkpoint.set()) c.checkpoint = o.checkpoint.value;
  if (o.synthetic.set()) c.synthetic = o.synthetic.value;
  if (o.workers.set()) c.workers = o.workers.value;
  if (o.seed.set()) c.seed = o.seed.value;
  if (o.split_seed.set()) c.split_seed = o.split_seed.value;
  if (o.epsilon.set()) c.dp.epsilon = o.epsilon.value;
  if (o.delta.set()) c.dp.delta = o.delta.value;
  if (o.clip.set()) c.dp.clip = o.clip.value;
  if (o.noise_multiplier.set()) c.dp.noise_multiplier = o.noise_multiplier.value;
  if (o.steps.set()) c.dp.steps = o.steps.value;
  if (o.batch.set()) {
    c.dp.batch = o.batch.value;
    c.auto_batch = false;
  }
  if (o.augmult.set()) c.dp.augmult = o.augmult.value;
  if (o.lr.set()) c.optimizer.learning_rate = o.lr.value;
  if (o.layers.set()) c.model.layers = o.layers.value;
  if (o.width.set()) c.model.width = o.width.value;
  if (o.heads.set()) c.model.heads = o.heads.value;
  if (o.context.set()) c.model.context = o.context.value;
  if (o.dropout.set()) c.model.dropout = o.dropout.value;
  if (o.checkpoint_every.set()) c.checkpoint_every = o.checkpoint_every.value;
  if (o.order.set()) c.order = dptab::order_policy_from_string(o.order.value);
  if (o.tokenizer.set()) c.tokenizer = dptab::tokenizer_mode_from_string(o.tokenizer.value);
  if (o.guiding.set()) c.guiding = dptab::guiding_from_string(o.guiding.value);
  if (o.rows.set()) c.generation.rows = o.rows.value;
  if (o.temperature.set()) c.generation.temperature = o.temperature.value;
  if (o.gen_order.set()) c.generation_order = dptab::order_policy_from_string(o.gen_order.value);
  if (o.non_private) c.dp.non_private = true;
  if (o.resume) c.resume = true;
  if (o.entropy_noise) c.entropy_noise = true;
  if (o.no_plots) c.plots = false;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private tabular synthesis with a small transformer"};
  app.require_subcommand(1);

  Overrides o;
  Flag<std::uint64_t> gen_seed;

  auto* prepare = app.add_subcommand("prepare", "fit the discretizer and split the table");
  add_common(prepare, o);
  add(prepare, o.split_seed, "--seed", "held-out split seed");
  o.tokenizer.options.push_back(prepare->add_option("--tokenizer", o.tokenizer.value, "tokenization mode")
                           ->check(CLI::IsMember({"level", "semantic"})));

  auto* train = app.add_subcommand("train", "train the model and write a checkpoint");
  add_common(train, o);
  add_training(train, o);
  add_guiding(train, o);

  auto* generate = app.add_subcommand("generate", "sample a synthetic table");
  add_common(generate, o);
  add(generate, gen_seed, "--seed", "sampling seed");
  add(generate, o.rows, "--rows", "rows to generate (default: training split size)");
  add(generate, o.temperature, "--temperature", "sampling temperature");
  o.gen_order.options.push_back(generate->add_option("--order", o.gen_order.value, "column order policy")
                           ->check(CLI::IsMember({"fixed", "random"})));

  auto* evaluate = app.add_subcommand("evaluate", "held-out NLL and marginal report");
  add_common(evaluate, o);
  add_guiding(evaluate, o);
  add(evaluate, o.synthetic, "--synthetic", "synthetic CSV (default <out>/synthetic.csv)");
  add(evaluate, o.seed, "--seed", "seed for sampling 2-way marginals on wide tables");
  evaluate->add_flag("--no-plots", o.no_plots, "skip SVG histograms");

  auto* account = app.add_subcommand("account", "privacy accounting");
  dptab::AccountQuery query;
  Flag<double> q, sigma, eps;
  Flag<std::size_t> n, batch;
  add(account, q, "--q", "sampling rate");
  add(account, sigma, "--sigma", "noise multiplier");
  add(account, eps, "--epsilon", "target epsilon (calibrates sigma)");
  add(account, n, "--n", "dataset size (with --epsilon: choose the batch)");
  add(account, batch, "--batch", "initial batch for batch doubling");
  account->add_option("--steps", query.steps, "steps")->required();
  account->add_option("--delta", query.delta, "delta");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*account) {
      if (q.set()) query.q = q.value;
      if (sigma.set()) query.sigma = sigma.value;
      if (eps.set()) query.epsilon = eps.value;
      if (n.set()) query.n = n.value;
      if (batch.set()) query.batch = batch.value;
      std::cout << dptab::cmd_account(query).dump(2) << "\n";
      return 0;
    }
    RunConfig config = resolve(o);
    if (gen_seed.set()) config.generation.seed = gen_seed.value;
    if (*prepare) dptab::cmd_prepare(config, std::cerr);
    if (*train) dptab::cmd_train(config, std::cerr);
    if (*generate) dptab::cmd_generate(config, std::cerr);
    if (*evaluate) dptab::cmd_evaluate(config, std::cerr);
    return 0;
  } catch (const dptab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dptab::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dptab::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
