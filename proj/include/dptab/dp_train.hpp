#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"
#include "dptab/field_trie.hpp"
#include "dptab/privacy_accountant.hpp"
#include "dptab/sentence_codec.hpp"
#include "dptab/table_codec.hpp"
#include "dptab/transformer.hpp"

namespace dptab {

/// Clipping, noise and sampling parameters. `batch` is the expected batch
/// size B; the sampling rate is B / n.
struct DpConfig {
  double clip = 1.0;
  double noise_multiplier = 0.0;
  std::size_t batch = 64;
  std::size_t steps = 100000;
  std::size_t augmult = 1;
  double epsilon = 5.0;
  double delta = 1e-6;
  bool non_private = false;

  double sampling_rate(std::size_t n) const {
    return std::min(1.0, static_cast<double>(batch) / static_cast<double>(n));
  }
};

struct OptimizerConfig {
  double learning_rate = 5e-4;
  std::size_t warmup = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

nlohmann::json to_json(const DpConfig& config);
DpConfig dp_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& doc);

struct OptimizerState {
  Vector<float> m;
  Vector<float> v;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  OptimizerConfig config;
};

OptimizerState make_optimizer(std::size_t parameters, std::size_t total_steps,
                              const OptimizerConfig& config);

/// Linear warm-up from 0 to `base` over `warmup` steps, then linear decay to
/// 0 at `total`.
double lr_at(std::size_t step, double base, std::size_t warmup, std::size_t total);

/// Each index joins independently with probability q.
std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng);

/// What the model sees for a row: vocabulary, level mapping and tries.
struct SentenceContext {
  const Vocabulary* vocab = nullptr;
  const Discretizer* disc = nullptr;
  const ColumnTrieSet* tries = nullptr;
  Guiding guiding = Guiding::kTrie;
};

/// One augmented view of an example: a column order and a dropout seed.
struct Augmentation {
  std::vector<std::size_t> order;
  std::uint64_t seed = 0;
};

std::vector<Augmentation> draw_augmentations(std::size_t columns, std::size_t count,
                                             OrderPolicy policy, Rng& rng);

/// Mean gradient over the given augmented views of one example. Averaging
/// happens before any clipping.
template <typename Scalar>
PerExampleGrad<Scalar> augmult_grad(const TransformerParams<Scalar>& params,
                                    const SentenceContext& ctx, const LevelRow& example,
                                    std::span<const Augmentation> augmentations);

template <typename Scalar>
PerExampleGrad<Scalar> augmult_grad(const TransformerParams<Scalar>& params,
                                    const SentenceContext& ctx, const LevelRow& example,
                                    std::size_t multiplicity, OrderPolicy policy, Rng& rng) {
  const auto augs = draw_augmentations(ctx.disc->num_columns(), multiplicity, policy, rng);
  return augmult_grad(params, ctx, example, std::span<const Augmentation>(augs));
}

/// g * min(1, C / ||g||).
template <typename Scalar>
PerExampleGrad<Scalar> clip(PerExampleGrad<Scalar> grad, double clip_norm) {
  const Scalar norm = grad.values.norm();
  if (norm > static_cast<Scalar>(clip_norm)) {
    grad.values *= static_cast<Scalar>(clip_norm) / norm;
  }
  grad.norm = grad.values.norm();
  return grad;
}

/// (sum + N(0, sigma^2 C^2 I)) / B with B the expected batch size.
template <typename Scalar>
Vector<Scalar> noisy_mean(const Vector<Scalar>& clipped_sum, double sigma, double clip_norm,
                          double expected_batch, Rng& rng) {
  Vector<Scalar> out = clipped_sum;
  if (sigma > 0) {
    std::normal_distribution<double> normal(0.0, sigma * clip_norm);
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += static_cast<Scalar>(normal(rng));
  }
  out /= static_cast<Scalar>(expected_batch);
  return out;
}

/// Decoupled-weight-decay Adam update with the scheduled learning rate.
void adamw_update(Vector<float>& params, const Vector<float>& grad, OptimizerState& opt);

/// Noises the clipped sum, then applies one AdamW step. Returns the noisy gradient.
Vector<float> noisy_step(TransformerParams<float>& params, const Vector<float>& clipped_sum,
                         double sigma, double clip_norm, double expected_batch,
                         OptimizerState& opt, Rng& rng);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  std::size_t batch = 0;
  double grad_norm_mean = 0;
  double grad_norm_max = 0;
  double clipped_fraction = 0;
  std::optional<double> epsilon;
};

nlohmann::json to_json(const StepRecord& record);

struct TrainState;

struct TrainConfig {
  DpConfig dp;
  OptimizerConfig optimizer;
  OrderPolicy order = OrderPolicy::kFixed;
  std::size_t workers = 1;
  std::function<void(const StepRecord&)> on_step;
  std::size_t checkpoint_every = 0;
  std::function<void(const TrainState&)> on_checkpoint;
};

struct TrainState {
  TransformerParams<float> params;
  OptimizerState optimizer;
  PrivacyLedger ledger;
  Rng rng;
  std::size_t step = 0;
};

TrainState start_training(const ModelConfig& model, const TrainConfig& config, Rng rng);

/// Runs sample -> augmult -> clip -> noisy_step until config.dp.steps.
/// Resumes from `state.step`. Throws NumericError if the ledger exceeds the
/// target epsilon or a gradient is non-finite.
void train(TrainState& state, const SentenceContext& ctx, std::span<const LevelRow> rows,
           const TrainConfig& config);

}  // namespace dptab
