#include "dptab/dp_train.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <thread>

namespace dptab {

nlohmann::json to_json(const DpConfig& c) {
  return {{"clip", c.clip},       {"noise_multiplier", c.noise_multiplier},
          {"batch", c.batch},     {"steps", c.steps},
          {"augmult", c.augmult}, {"epsilon", c.epsilon},
          {"delta", c.delta},     {"non_private", c.non_private}};
}

DpConfig dp_config_from_json(const nlohmann::json& doc) {
  DpConfig c;
  c.clip = doc.value("clip", c.clip);
  c.noise_multiplier = doc.value("noise_multiplier", c.noise_multiplier);
  c.batch = doc.value("batch", c.batch);
  c.steps = doc.value("steps", c.steps);
  c.augmult = doc.value("augmult", c.augmult);
  c.epsilon = doc.value("epsilon", c.epsilon);
  c.delta = doc.value("delta", c.delta);
  c.non_private = doc.value("non_private", c.non_private);
  return c;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"warmup", c.warmup}, {"beta1", c.beta1},
          {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& doc) {
  OptimizerConfig c;
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.warmup = doc.value("warmup", c.warmup);
  c.beta1 = doc.value("beta1", c.beta1);
  c.beta2 = doc.value("beta2", c.beta2);
  c.eps = doc.value("eps", c.eps);
  c.weight_decay = doc.value("weight_decay", c.weight_decay);
  return c;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json out{{"step", r.step},
                     {"loss", r.loss},
                     {"lr", r.lr},
                     {"batch", r.batch},
                     {"grad_norm_mean", r.grad_norm_mean},
                     {"grad_norm_max", r.grad_norm_max},
                     {"clipped_fraction", r.clipped_fraction}};
  out["epsilon"] = r.epsilon ? nlohmann::json(*r.epsilon) : nlohmann::json(nullptr);
  return out;
}

OptimizerState make_optimizer(std::size_t parameters, std::size_t total_steps,
                              const OptimizerConfig& config) {
  OptimizerState opt;
  opt.m = Vector<float>::Zero(static_cast<Eigen::Index>(parameters));
  opt.v = Vector<float>::Zero(static_cast<Eigen::Index>(parameters));
  opt.total_steps = total_steps;
  opt.config = config;
  return opt;
}

double lr_at(std::size_t step, double base, std::size_t warmup, std::size_t total) {
  if (step >= total) return 0.0;
  if (warmup < total && step < warmup) {
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const std::size_t decay_start = warmup < total ? warmup : 0;
  return base * static_cast<double>(total - step) / static_cast<double>(total - decay_start);
}

std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng) {
  if (!(q > 0 && q <= 1)) throw NumericError("sampling rate must be in (0, 1]");
  std::vector<std::size_t> picked;
  if (q == 1.0) {
    picked.resize(n);
    for (std::size_t i = 0; i < n; ++i) picked[i] = i;
    return picked;
  }
  std::bernoulli_distribution coin(q);
  for (std::size_t i = 0; i < n; ++i) {
    if (coin(rng)) picked.push_back(i);
  }
  return picked;
}

std::vector<Augmentation> draw_augmentations(std::size_t columns, std::size_t count,
                                             OrderPolicy policy, Rng& rng) {
  if (count == 0) throw ConfigError("AugMult multiplicity must be at least 1");
  std::vector<Augmentation> augs(count);
  for (auto& a : augs) {
    a.order = sample_order(columns, rng, policy);
    a.seed = rng();
  }
  return augs;
}

template <typename Scalar>
PerExampleGrad<Scalar> augmult_grad(const TransformerParams<Scalar>& params,
                                    const SentenceContext& ctx, const LevelRow& example,
                                    std::span<const Augmentation> augmentations) {
  if (augmentations.empty()) throw ConfigError("AugMult needs at least one augmentation");
  PerExampleGrad<Scalar> mean;
  mean.values = Vector<Scalar>::Zero(params.values.size());
  for (const Augmentation& aug : augmentations) {
    const EncodedRow row = encode_row(*ctx.vocab, *ctx.disc, example, aug.order);
    Rng dropout_rng(aug.seed);
    const auto g = backward(params, row, *ctx.vocab, *ctx.tries, ctx.guiding, true, &dropout_rng);
    mean.values += g.values;
    mean.loss += g.loss;
  }
  const auto p = static_cast<Scalar>(augmentations.size());
  mean.values /= p;
  mean.loss /= p;
  mean.norm = mean.values.norm();
  return mean;
}

template PerExampleGrad<float> augmult_grad<float>(const TransformerParams<float>&,
                                                   const SentenceContext&, const LevelRow&,
                                                   std::span<const Augmentation>);
template PerExampleGrad<double> augmult_grad<double>(const TransformerParams<double>&,
                                                     const SentenceContext&, const LevelRow&,
                                                     std::span<const Augmentation>);

void adamw_update(Vector<float>& params, const Vector<float>& grad, OptimizerState& opt) {
  const OptimizerConfig& c = opt.config;
  const double lr = lr_at(opt.step, c.learning_rate, c.warmup, opt.total_steps);
  opt.step += 1;
  const auto t = static_cast<double>(opt.step);
  const auto b1 = static_cast<float>(c.beta1);
  const auto b2 = static_cast<float>(c.beta2);
  const auto bias1 = static_cast<float>(1.0 - std::pow(c.beta1, t));
  const auto sqrt_bias2 = static_cast<float>(std::sqrt(1.0 - std::pow(c.beta2, t)));
  const auto step_size = static_cast<float>(lr) / bias1;

  params *= static_cast<float>(1.0 - lr * c.weight_decay);
  opt.m = b1 * opt.m + (1.0f - b1) * grad;
  opt.v = b2 * opt.v + (1.0f - b2) * grad.cwiseProduct(grad);
  params.array() -=
      step_size * opt.m.array() / (opt.v.array().sqrt() / sqrt_bias2 + static_cast<float>(c.eps));
}

Vector<float> noisy_step(TransformerParams<float>& params, const Vector<float>& clipped_sum,
                         double sigma, double clip_norm, double expected_batch,
                         OptimizerState& opt, Rng& rng) {
  Vector<float> noisy = noisy_mean(clipped_sum, sigma, clip_norm, expected_batch, rng);
  if (!noisy.allFinite()) throw NumericError("non-finite gradient at step " + std::to_string(opt.step));
  adamw_update(params.values, noisy, opt);
  return noisy;
}

TrainState start_training(const ModelConfig& model, const TrainConfig& config, Rng rng) {
  TrainState state{init_model<float>(model, rng), {}, make_ledger(), std::move(rng), 0};
  state.optimizer =
      make_optimizer(state.params.layout.total(), config.dp.steps, config.optimizer);
  return state;
}

namespace {

struct BatchAccumulator {
  Vector<float> sum;
  double loss = 0;
  double norm_sum = 0;
  double norm_max = 0;
  std::size_t clipped = 0;
};

void accumulate_examples(const TransformerParams<float>& params, const SentenceContext& ctx,
                         std::span<const LevelRow> rows, std::span<const std::size_t> batch,
                         std::span<const std::vector<Augmentation>> augs, double clip_norm,
                         bool do_clip, std::size_t begin, std::size_t end,
                         BatchAccumulator& acc) {
  acc.sum = Vector<float>::Zero(params.values.size());
  for (std::size_t i = begin; i < end; ++i) {
    auto g = augmult_grad(params, ctx, rows[batch[i]], std::span<const Augmentation>(augs[i]));
    if (!g.values.allFinite()) throw NumericError("non-finite per-example gradient");
    const double raw_norm = g.norm;
    acc.norm_sum += raw_norm;
    acc.norm_max = std::max(acc.norm_max, raw_norm);
    acc.loss += g.loss;
    if (do_clip) {
      if (raw_norm > clip_norm) ++acc.clipped;
      g = clip(std::move(g), clip_norm);
      assert(g.norm <= clip_norm * (1 + 1e-5));
    }
    acc.sum += g.values;
  }
}

}  // namespace

void train(TrainState& state, const SentenceContext& ctx, std::span<const LevelRow> rows,
           const TrainConfig& config) {
  const DpConfig& dp = config.dp;
  if (rows.empty()) throw DataError("no training rows");
  if (dp.batch == 0) throw ConfigError("batch size must be positive");
  const bool accounted = !dp.non_private && dp.noise_multiplier > 0;
  if (!dp.non_private && dp.noise_multiplier <= 0 && std::isfinite(dp.epsilon)) {
    throw ConfigError("private training needs a positive noise multiplier");
  }
  const double q = dp.sampling_rate(rows.size());
  const auto expected_batch = static_cast<double>(std::min(dp.batch, rows.size()));
  const bool do_clip = !dp.non_private;
  const double sigma = dp.non_private ? 0.0 : dp.noise_multiplier;
  state.optimizer.total_steps = dp.steps;

  std::optional<StepCost> cost;
  if (accounted) cost = step_cost(state.ledger, q, sigma);
  const std::size_t workers = std::max<std::size_t>(1, config.workers);

  while (state.step < dp.steps) {
    const auto batch = poisson_sample(rows.size(), q, state.rng);
    std::vector<std::vector<Augmentation>> augs;
    augs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      augs.push_back(draw_augmentations(ctx.disc->num_columns(), dp.augmult, config.order, state.rng));
    }

    const std::size_t fan = std::min(workers, std::max<std::size_t>(1, batch.size()));
    std::vector<BatchAccumulator> parts(fan);
    if (fan == 1) {
      accumulate_examples(state.params, ctx, rows, batch, augs, dp.clip, do_clip, 0, batch.size(),
                          parts[0]);
    } else {
      std::vector<std::exception_ptr> errors(fan);
      std::vector<std::thread> threads;
      for (std::size_t w = 0; w < fan; ++w) {
        const std::size_t begin = batch.size() * w / fan;
        const std::size_t end = batch.size() * (w + 1) / fan;
        threads.emplace_back([&, w, begin, end] {
          try {
            accumulate_examples(state.params, ctx, rows, batch, augs, dp.clip, do_clip, begin, end,
                                parts[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : threads) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    BatchAccumulator total = std::move(parts[0]);
    for (std::size_t w = 1; w < fan; ++w) {
      total.sum += parts[w].sum;
      total.loss += parts[w].loss;
      total.norm_sum += parts[w].norm_sum;
      total.norm_max = std::max(total.norm_max, parts[w].norm_max);
      total.clipped += parts[w].clipped;
    }

    StepRecord record;
    record.step = state.step + 1;
    record.lr = lr_at(state.optimizer.step, config.optimizer.learning_rate, config.optimizer.warmup,
                      dp.steps);
    noisy_step(state.params, total.sum, sigma, dp.clip, expected_batch, state.optimizer, state.rng);
    state.step += 1;

    if (accounted) {
      state.ledger = compose(std::move(state.ledger), *cost, 1);
      const double eps = to_epsilon(state.ledger, dp.delta).epsilon;
      record.epsilon = eps;
      if (std::isfinite(dp.epsilon) && eps > dp.epsilon * (1 + 1e-9)) {
        throw NumericError("privacy budget exceeded at step " + std::to_string(state.step) +
                           ": epsilon " + std::to_string(eps) + " > " + std::to_string(dp.epsilon));
      }
    }
    const double count = static_cast<double>(batch.size());
    record.batch = batch.size();
    record.loss = batch.empty() ? 0.0 : total.loss / count;
    record.grad_norm_mean = batch.empty() ? 0.0 : total.norm_sum / count;
    record.grad_norm_max = total.norm_max;
    record.clipped_fraction = batch.empty() ? 0.0 : static_cast<double>(total.clipped) / count;
    if (config.on_step) config.on_step(record);
    if (config.on_checkpoint && config.checkpoint_every > 0 &&
        state.step % config.checkpoint_every == 0 && state.step < dp.steps) {
      config.on_checkpoint(state);
    }
  }
}

}  // namespace dptab
