#include "dptab/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "dptab/privacy_accountant.hpp"

namespace dptab {
namespace {

using nlohmann::json;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void reject_unknown(const json& doc, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& item : doc.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

std::vector<LevelRow> select(const std::vector<LevelRow>& rows,
                             const std::vector<std::size_t>& indices) {
  std::vector<LevelRow> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(rows.at(i));
  return out;
}

std::filesystem::path checkpoint_dir(const RunConfig& config) {
  return config.checkpoint.value_or(RunPaths{config.out}.checkpoint());
}

struct Prepared {
  Discretizer disc;
  Vocabulary vocab;
  Split split;
};

Prepared read_prepared(const RunPaths& paths) {
  for (const auto& p : {paths.discretizer(), paths.vocabulary(), paths.split()}) {
    if (!std::filesystem::exists(p)) {
      throw DataError("missing " + p.string() + "; run 'prepare' first");
    }
  }
  Prepared prepared;
  prepared.disc = discretizer_from_json(read_json(paths.discretizer()));
  prepared.vocab = Vocabulary::from_descriptor(read_json(paths.vocabulary()));
  prepared.split = split_from_json(read_json(paths.split()));
  return prepared;
}

std::vector<LevelRow> load_levels(const std::filesystem::path& path, const Discretizer& disc) {
  const RawTable table = load_csv(path);
  if (table.schema.num_columns() != disc.num_columns()) {
    throw DataError(path.string() + ": column count does not match the discretizer");
  }
  for (std::size_t j = 0; j < disc.num_columns(); ++j) {
    if (table.schema.columns[j].name != disc.columns[j].name) {
      throw DataError(path.string() + ": column " + std::to_string(j + 1) + " is '" +
                      table.schema.columns[j].name + "', expected '" + disc.columns[j].name + "'");
    }
  }
  return dptab::apply(disc, std::span<const RawRow>(table.rows));
}

}  // namespace

void RunConfig::validate() const {
  if (!(dp.clip > 0)) throw ConfigError("clip norm must be positive");
  if (dp.augmult == 0) throw ConfigError("augmult must be at least 1");
  if (dp.batch == 0) throw ConfigError("batch must be positive");
  if (!(dp.delta > 0 && dp.delta < 1)) throw ConfigError("delta must be in (0, 1)");
  if (!dp.non_private && !(dp.epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (dp.noise_multiplier < 0) throw ConfigError("noise multiplier must be non-negative");
  if (model.layers == 0 || model.width == 0 || model.heads == 0 || model.context == 0) {
    throw ConfigError("model layers, width, heads and context must be positive");
  }
  if (model.width % model.heads != 0) throw ConfigError("model width not divisible by heads");
  if (!(model.dropout >= 0 && model.dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (!(optimizer.learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
  if (!(generation.temperature > 0)) throw ConfigError("temperature must be positive");
  if (workers == 0) throw ConfigError("workers must be at least 1");
}

json to_json(const RunConfig& c) {
  json doc{{"data", c.data.string()},
           {"out", c.out.string()},
           {"seed", c.seed},
           {"split_seed", c.split_seed},
           {"entropy_noise", c.entropy_noise},
           {"model", to_json(c.model)},
           {"dp", to_json(c.dp)},
           {"auto_batch", c.auto_batch},
           {"optimizer", to_json(c.optimizer)},
           {"order", to_string(c.order)},
           {"tokenizer", to_string(c.tokenizer)},
           {"guiding", to_string(c.guiding)},
           {"workers", c.workers},
           {"checkpoint_every", c.checkpoint_every},
           {"diagnostic_rows", c.diagnostic_rows},
           {"resume", c.resume},
           {"plots", c.plots},
           {"max_pairs", c.max_pairs},
           {"max_plots", c.max_plots}};
  doc["model"].erase("vocab");
  doc["checkpoint"] = c.checkpoint ? json(c.checkpoint->string()) : json(nullptr);
  doc["synthetic"] = c.synthetic ? json(c.synthetic->string()) : json(nullptr);
  doc["generation"] = {{"rows", c.generation.rows},
                       {"temperature", c.generation.temperature},
                       {"seed", c.generation.seed}};
  doc["generation"]["order"] =
      c.generation_order ? json(std::string(to_string(*c.generation_order))) : json(nullptr);
  return doc;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  try {
    reject_unknown(doc,
                   {"data", "out", "seed", "split_seed", "entropy_noise", "model", "dp", "auto_batch",
                    "optimizer", "order", "tokenizer", "guiding", "workers", "checkpoint_every",
                    "diagnostic_rows", "resume", "checkpoint", "generation", "synthetic", "plots",
                    "max_pairs", "max_plots"},
                   "run config");
    c.data = doc.value("data", c.data.string());
    c.out = doc.value("out", c.out.string());
    c.seed = doc.value("seed", c.seed);
    c.split_seed = doc.value("split_seed", c.split_seed);
    c.entropy_noise = doc.value("entropy_noise", c.entropy_noise);
    if (doc.contains("model")) {
      reject_unknown(doc["model"], {"layers", "width", "heads", "context", "dropout"}, "model");
      json model = to_json(c.model);
      model.update(doc["model"]);
      c.model = model_config_from_json(model);
    }
    if (doc.contains("dp")) {
      reject_unknown(doc["dp"],
                     {"clip", "noise_multiplier", "batch", "steps", "augmult", "epsilon", "delta",
                      "non_private"},
                     "dp");
      c.dp = dp_config_from_json(doc["dp"]);
    }
    c.auto_batch = doc.value("auto_batch", c.auto_batch);
    if (doc.contains("optimizer")) {
      reject_unknown(doc["optimizer"],
                     {"learning_rate", "warmup", "beta1", "beta2", "eps", "weight_decay"},
                     "optimizer");
      c.optimizer = optimizer_config_from_json(doc["optimizer"]);
    }
    if (doc.contains("order")) c.order = order_policy_from_string(doc["order"].get<std::string>());
    if (doc.contains("tokenizer")) {
      c.tokenizer = tokenizer_mode_from_string(doc["tokenizer"].get<std::string>());
    }
    if (doc.contains("guiding")) c.guiding = guiding_from_string(doc["guiding"].get<std::string>());
    c.workers = doc.value("workers", c.workers);
    c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
    c.diagnostic_rows = doc.value("diagnostic_rows", c.diagnostic_rows);
    c.resume = doc.value("resume", c.resume);
    if (doc.contains("checkpoint") && !doc["checkpoint"].is_null()) {
      c.checkpoint = doc["checkpoint"].get<std::string>();
    }
    if (doc.contains("synthetic") && !doc["synthetic"].is_null()) {
      c.synthetic = doc["synthetic"].get<std::string>();
    }
    if (doc.contains("generation")) {
      const auto& g = doc["generation"];
      reject_unknown(g, {"rows", "temperature", "seed", "order"}, "generation");
      c.generation.rows = g.value("rows", c.generation.rows);
      c.generation.temperature = g.value("temperature", c.generation.temperature);
      c.generation.seed = g.value("seed", c.generation.seed);
      if (g.contains("order") && !g["order"].is_null()) {
        c.generation_order = order_policy_from_string(g["order"].get<std::string>());
      }
    }
    c.plots = doc.value("plots", c.plots);
    c.max_pairs = doc.value("max_pairs", c.max_pairs);
    c.max_plots = doc.value("max_plots", c.max_plots);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json(path));
}

std::size_t heldout_size(std::size_t n) { return std::min<std::size_t>(n / 10, 10000); }

Split make_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  const std::size_t h = heldout_size(n);
  Split split;
  split.seed = seed;
  split.heldout.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(h));
  split.train.assign(indices.begin() + static_cast<std::ptrdiff_t>(h), indices.end());
  std::sort(split.heldout.begin(), split.heldout.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

json to_json(const Split& split) {
  return {{"seed", split.seed},
          {"rows", split.train.size() + split.heldout.size()},
          {"train", split.train},
          {"heldout", split.heldout}};
}

Split split_from_json(const json& doc) {
  try {
    Split split;
    split.seed = doc.at("seed").get<std::uint64_t>();
    split.train = doc.at("train").get<std::vector<std::size_t>>();
    split.heldout = doc.at("heldout").get<std::vector<std::size_t>>();
    return split;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed split: ") + e.what());
  }
}

PrepareResult cmd_prepare(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.data.empty()) throw ConfigError("no dataset path given");
  const RawTable table = load_csv(config.data);
  PrepareResult result;
  result.split = make_split(table.rows.size(), config.split_seed);
  result.disc = fit_discretizer(table.schema, table.rows);
  result.vocab = build_vocabulary(result.disc, config.tokenizer);

  const RunPaths paths{config.out};
  write_text(paths.discretizer(), to_json(result.disc).dump(2) + "\n");
  write_text(paths.vocabulary(), result.vocab.descriptor().dump(2) + "\n");
  write_text(paths.split(), to_json(result.split).dump() + "\n");
  write_text(paths.config(), to_json(config).dump(2) + "\n");

  log << "prepared " << table.rows.size() << " rows, " << result.disc.num_columns()
      << " columns; train " << result.split.train.size() << ", held-out "
      << result.split.heldout.size() << "; vocabulary " << result.vocab.size() << " tokens ("
      << to_string(result.vocab.mode()) << "), max sentence "
      << max_sentence_length(result.vocab, result.disc) << " tokens\n";
  return result;
}

Checkpoint cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  const Prepared prepared = read_prepared(paths);
  if (config.data.empty()) throw ConfigError("no dataset path given");
  const auto all_rows = load_levels(config.data, prepared.disc);
  if (all_rows.size() != prepared.split.train.size() + prepared.split.heldout.size()) {
    throw DataError("dataset row count differs from the prepared split");
  }
  const auto train_rows = select(all_rows, prepared.split.train);
  const auto heldout_rows = select(all_rows, prepared.split.heldout);
  if (train_rows.empty()) throw DataError("training split is empty");

  const ColumnTrieSet tries = build_tries(prepared.vocab, prepared.disc);
  const SentenceContext ctx{&prepared.vocab, &prepared.disc, &tries, config.guiding};
  const auto ck_dir = checkpoint_dir(config);

  Checkpoint ck;
  ck.disc = prepared.disc;
  ck.vocab = prepared.vocab;
  TrainConfig tc;
  tc.order = config.order;
  tc.workers = config.workers;
  tc.optimizer = config.optimizer;

  const bool resuming = config.resume && std::filesystem::exists(ck_dir / "manifest.json");
  if (resuming) {
    Checkpoint previous = load_checkpoint(ck_dir);
    if (to_json(previous.disc) != to_json(prepared.disc)) {
      throw ConfigError("checkpoint was trained with a different discretizer");
    }
    ck.state = std::move(previous.state);
    ck.run = previous.run;
    tc.dp = dp_config_from_json(ck.run.at("dp_resolved"));
    tc.optimizer = ck.state.optimizer.config;
    tc.order = order_policy_from_string(ck.run.at("order").get<std::string>());
    if (config.dp.steps != tc.dp.steps) {
      log << "resume: extending total steps from " << tc.dp.steps << " to " << config.dp.steps
          << "\n";
      tc.dp.steps = config.dp.steps;
    }
    log << "resuming at step " << ck.state.step << "\n";
  } else {
    ModelConfig model = config.model;
    model.vocab = prepared.vocab.size();
    const std::size_t needed = max_sentence_length(prepared.vocab, prepared.disc);
    if (model.context < needed) {
      throw ConfigError("context length " + std::to_string(model.context) +
                        " is shorter than the longest sentence (" + std::to_string(needed) +
                        " tokens)");
    }
    tc.dp = config.dp;
    const std::size_t n = train_rows.size();
    if (tc.dp.non_private) {
      tc.dp.noise_multiplier = 0;
      tc.dp.batch = std::min(tc.dp.batch, n);
    } else if (tc.dp.noise_multiplier > 0) {
      tc.dp.batch = std::min(tc.dp.batch, n);
      const double eps =
          epsilon_for(tc.dp.sampling_rate(n), tc.dp.noise_multiplier, tc.dp.steps, tc.dp.delta);
      if (eps > tc.dp.epsilon) {
        throw ConfigError("noise multiplier " + std::to_string(tc.dp.noise_multiplier) +
                          " spends epsilon " + std::to_string(eps) + " > target " +
                          std::to_string(tc.dp.epsilon));
      }
    } else if (config.auto_batch) {
      const BatchChoice choice =
          choose_batch(n, tc.dp.steps, tc.dp.epsilon, tc.dp.delta, tc.dp.batch);
      tc.dp.batch = choice.batch;
      tc.dp.noise_multiplier = choice.sigma;
    } else {
      tc.dp.batch = std::min(tc.dp.batch, n);
      tc.dp.noise_multiplier =
          calibrate_sigma(tc.dp.sampling_rate(n), tc.dp.steps, tc.dp.epsilon, tc.dp.delta);
    }
    Rng rng = config.entropy_noise ? entropy_rng() : Rng(config.seed);
    ck.state = start_training(model, tc, std::move(rng));
    ck.run = to_json(config);
    ck.run["dp_resolved"] = to_json(tc.dp);
    ck.run["order"] = std::string(to_string(config.order));
    ck.run["guiding"] = std::string(to_string(config.guiding));
    ck.run["data"] = std::filesystem::absolute(config.data).string();
    ck.run["split"] = to_json(prepared.split);
    ck.run["train_rows"] = train_rows.size();
  }
  ck.delta = tc.dp.delta;

  log << "training " << ck.state.params.values.size() << " parameters on " << train_rows.size()
      << " rows: steps " << tc.dp.steps << ", batch " << tc.dp.batch << ", sigma "
      << tc.dp.noise_multiplier << (tc.dp.non_private ? " (non-private)" : "") << "\n";

  std::ofstream telemetry(paths.telemetry(), resuming ? std::ios::app : std::ios::trunc);
  if (!telemetry) throw DataError("cannot write " + paths.telemetry().string());
  tc.on_step = [&](const StepRecord& record) {
    json line = to_json(record);
    line["kind"] = "step";
    telemetry << line.dump() << "\n";
  };

  const std::size_t diag_rows = std::min(config.diagnostic_rows, heldout_rows.size());
  const auto diagnostics = [&](const TrainState& state) {
    if (diag_rows == 0) return;
    const std::span<const LevelRow> subset(heldout_rows.data(), diag_rows);
    const NllSummary nll = mean_nll(state.params, prepared.vocab, prepared.disc, tries, subset,
                                    config.guiding);
    telemetry << json{{"kind", "heldout_diagnostic"},
                      {"non_private", true},
                      {"step", state.step},
                      {"rows", diag_rows},
                      {"mean_nll", nll.mean}}
                     .dump()
              << "\n";
    log << "step " << state.step << ": held-out NLL " << nll.mean << " (diagnostic)\n";
  };
  tc.checkpoint_every = config.checkpoint_every;
  tc.on_checkpoint = [&](const TrainState& state) {
    ck.state = state;
    save_checkpoint(ck_dir, ck);
    diagnostics(state);
    telemetry.flush();
  };

  // The callback above copies into ck.state, so train on a separate state.
  TrainState state = std::move(ck.state);
  train(state, ctx, train_rows, tc);
  ck.state = std::move(state);
  save_checkpoint(ck_dir, ck);
  diagnostics(ck.state);

  const auto eps = to_epsilon(ck.state.ledger, ck.delta);
  json summary{{"kind", "final"}, {"step", ck.state.step}, {"checkpoint", checkpoint_id(ck_dir)}};
  if (tc.dp.non_private) {
    summary["epsilon"] = nullptr;
    log << "done: " << ck.state.step << " steps, non-private\n";
  } else {
    summary["epsilon"] = eps.epsilon;
    summary["delta"] = ck.delta;
    log << "done: " << ck.state.step << " steps, epsilon " << eps.epsilon << " at delta "
        << ck.delta << " (order " << eps.order << ")\n";
  }
  telemetry << summary.dump() << "\n";
  return ck;
}

SyntheticTable cmd_generate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  const auto ck_dir = checkpoint_dir(config);
  const Checkpoint ck = load_checkpoint(ck_dir);
  const ColumnTrieSet tries = build_tries(ck.vocab, ck.disc);

  GenerationConfig gen = config.generation;
  if (gen.rows == 0) gen.rows = ck.run.value("train_rows", std::size_t{0});
  gen.order = config.generation_order.value_or(
      order_policy_from_string(ck.run.value("order", std::string("fixed"))));
  const SyntheticTable table = generate_table(ck.state.params, ck.vocab, tries, ck.disc, gen);

  std::vector<std::string> header;
  for (const auto& c : ck.disc.columns) header.push_back(c.name);
  std::ostringstream csv;
  write_csv(csv, header, table.surface);
  write_text(paths.synthetic(), csv.str());

  const bool non_private = ck.run.contains("dp_resolved") &&
                           ck.run["dp_resolved"].value("non_private", false);
  json sidecar{{"format", "dptab-synthetic-1"},
               {"rows", gen.rows},
               {"seed", gen.seed},
               {"temperature", gen.temperature},
               {"order", to_string(gen.order)},
               {"checkpoint", checkpoint_id(ck_dir)},
               {"non_private_training", non_private},
               {"ledger", to_json(ck.state.ledger, ck.delta)}};
  write_text(paths.synthetic_sidecar(), sidecar.dump(2) + "\n");
  log << "generated " << gen.rows << " rows into " << paths.synthetic().string() << "\n";
  return table;
}

EvalReport cmd_evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  const auto ck_dir = checkpoint_dir(config);
  const Checkpoint ck = load_checkpoint(ck_dir);
  const ColumnTrieSet tries = build_tries(ck.vocab, ck.disc);

  const std::filesystem::path data =
      config.data.empty() ? std::filesystem::path(ck.run.value("data", std::string()))
                          : config.data;
  if (data.empty()) throw ConfigError("no dataset path given");
  const auto all_rows = load_levels(data, ck.disc);
  const Split split = split_from_json(ck.run.at("split"));
  if (all_rows.size() != split.train.size() + split.heldout.size()) {
    throw DataError("dataset row count differs from the checkpoint's split");
  }

  EvalReport report;
  for (const auto& c : ck.disc.columns) report.column_names.push_back(c.name);
  if (!split.heldout.empty()) {
    const auto heldout = select(all_rows, split.heldout);
    const auto params = ck.state.params.cast<double>();
    report.nll = mean_nll(params, ck.vocab, ck.disc, tries, heldout, config.guiding);
    log << "held-out NLL " << report.nll->mean << " nats/row over " << heldout.size() << " rows\n";
  }

  const auto synthetic_path = config.synthetic.value_or(paths.synthetic());
  if (std::filesystem::exists(synthetic_path)) {
    const auto synth = load_levels(synthetic_path, ck.disc);
    if (!synth.empty()) {
      Rng rng(config.seed);
      report.marginals =
          compare_marginals(all_rows, synth, ck.disc.cardinalities(), rng, config.max_pairs);
      log << report.marginals.size() << " marginals: TVD mean " << report.tvd_mean() << ", max "
          << report.tvd_max() << "\n";
    }
  } else {
    log << "no synthetic table at " << synthetic_path.string() << "; reporting NLL only\n";
  }

  const auto eps = to_epsilon(ck.state.ledger, ck.delta);
  report.metadata = {{"checkpoint", checkpoint_id(ck_dir)},
                     {"step", ck.state.step},
                     {"ledger", to_json(ck.state.ledger, ck.delta)},
                     {"epsilon", eps.epsilon},
                     {"delta", ck.delta},
                     {"guiding", to_string(config.guiding)},
                     {"dataset", data.string()},
                     {"split", {{"seed", split.seed},
                                {"train", split.train.size()},
                                {"heldout", split.heldout.size()}}},
                     {"marginal_reference", "train + valid"},
                     {"synthetic", synthetic_path.string()}};
  const auto files = emit_report(report, paths.report_dir(), config.plots, config.max_plots);
  log << "wrote " << files.size() << " report files to " << paths.report_dir().string() << "\n";
  return report;
}

json cmd_account(const AccountQuery& query) {
  if (!(query.delta > 0 && query.delta < 1)) throw ConfigError("delta must be in (0, 1)");
  if (query.n && query.epsilon) {
    const BatchChoice choice =
        choose_batch(*query.n, query.steps, *query.epsilon, query.delta, query.batch.value_or(64));
    return {{"batch", choice.batch},
            {"sigma", choice.sigma},
            {"q", static_cast<double>(choice.batch) / static_cast<double>(*query.n)},
            {"steps", query.steps},
            {"epsilon", epsilon_for(static_cast<double>(choice.batch) / static_cast<double>(*query.n),
                                    choice.sigma, query.steps, query.delta)},
            {"delta", query.delta}};
  }
  if (!query.q) throw ConfigError("account needs --q, or --n with --epsilon");
  const double q = *query.q;
  if (!(q > 0 && q <= 1)) throw ConfigError("q must be in (0, 1]");
  if (query.sigma) {
    if (!(*query.sigma > 0)) throw ConfigError("sigma must be positive");
    PrivacyLedger ledger = compose(make_ledger(), q, *query.sigma, query.steps);
    const auto eps = to_epsilon(ledger, query.delta);
    return {{"q", q},           {"sigma", *query.sigma},   {"steps", query.steps},
            {"delta", query.delta}, {"epsilon", eps.epsilon}, {"order", eps.order}};
  }
  if (query.epsilon) {
    const double sigma = calibrate_sigma(q, query.steps, *query.epsilon, query.delta);
    return {{"q", q},
            {"steps", query.steps},
            {"delta", query.delta},
            {"target_epsilon", *query.epsilon},
            {"sigma", sigma},
            {"epsilon", epsilon_for(q, sigma, query.steps, query.delta)}};
  }
  throw ConfigError("account needs --sigma or --epsilon alongside --q");
}

}  // namespace dptab
