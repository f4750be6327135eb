#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dptab/common.hpp"
#include "dptab/field_trie.hpp"
#include "dptab/sentence_codec.hpp"

namespace dptab {

/// Decoder-only transformer shape. Defaults: 4 layers, width 256, 4 heads.
struct ModelConfig {
  std::size_t layers = 4;
  std::size_t width = 256;
  std::size_t heads = 4;
  std::size_t context = 64;
  std::size_t vocab = 0;
  double dropout = 0.1;

  std::size_t head_dim() const { return width / heads; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

struct TensorSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
};

struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_bias;
  std::size_t w1, b1, w2, b2;
};

/// Canonical flat ordering of every parameter tensor. The output projection
/// is tied to the token embedding and has no entry of its own.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& config);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }
  const TensorSpec& find(std::string_view name) const;

  std::size_t wte = 0, wpe = 0, lnf_gain = 0, lnf_bias = 0;
  std::vector<LayerOffsets> layer;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

/// Closed-form parameter count: V d + ctx d + L (12 d^2 + 13 d) + 2 d.
std::size_t parameter_count(const ModelConfig& config);

template <typename Scalar>
struct TransformerParams {
  ModelConfig config;
  ParamLayout layout;
  Vector<Scalar> values;

  template <typename Other>
  TransformerParams<Other> cast() const {
    return {config, layout, values.template cast<Other>()};
  }
};

template <typename Scalar>
struct PerExampleGrad {
  Vector<Scalar> values;
  Scalar norm = 0;
  Scalar loss = 0;
};

/// Gaussian(0, 0.02) weights and embeddings, zero biases, unit layer-norm gains.
template <typename Scalar>
TransformerParams<Scalar> init_model(const ModelConfig& config, Rng& rng);

template <typename Scalar>
struct LayerTrace {
  Matrix<Scalar> input;
  Matrix<Scalar> ln1_hat;
  Vector<Scalar> ln1_rstd;
  Matrix<Scalar> ln1_out;
  Matrix<Scalar> q, k, v;
  std::vector<Matrix<Scalar>> probs;
  Matrix<Scalar> heads_out;
  Matrix<Scalar> attn_drop;
  Matrix<Scalar> mid;
  Matrix<Scalar> ln2_hat;
  Vector<Scalar> ln2_rstd;
  Matrix<Scalar> ln2_out;
  Matrix<Scalar> pre_act;
  Matrix<Scalar> act;
  Matrix<Scalar> mlp_drop;
};

template <typename Scalar>
struct ForwardTrace {
  std::vector<TokenId> tokens;
  Matrix<Scalar> embed_drop;
  std::vector<LayerTrace<Scalar>> layers;
  Matrix<Scalar> final_hat;
  Vector<Scalar> final_rstd;
  Matrix<Scalar> final_out;
  Matrix<Scalar> logits;
};

/// Runs the model on `tokens` and keeps every intermediate for backward.
/// Dropout masks are drawn from `rng` only when `train` is set.
template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const TransformerParams<Scalar>& params,
                                   std::span<const TokenId> tokens, bool train, Rng* rng);

/// Logits [T x vocab]; row t depends only on tokens[0..t].
template <typename Scalar>
Matrix<Scalar> forward(const TransformerParams<Scalar>& params, std::span<const TokenId> tokens,
                       bool train = false, Rng* rng = nullptr);

/// Gradient of sum_{t,v} dlogits(t,v) * logits(t,v) with respect to every
/// parameter, in layout order.
template <typename Scalar>
Vector<Scalar> backward_from_logits(const TransformerParams<Scalar>& params,
                                    const ForwardTrace<Scalar>& trace,
                                    const Matrix<Scalar>& dlogits);

/// -ln p(target) at each predicted position, with the distribution restricted
/// to the trie's valid set when `masks` is given. IGNORE positions yield 0.
/// When `dlogits` is non-null it receives d(sum of terms)/d logits.
template <typename Scalar>
std::vector<Scalar> position_nll(const Matrix<Scalar>& logits, std::span<const TokenId> targets,
                                 const std::vector<std::span<const TokenId>>* masks,
                                 Matrix<Scalar>* dlogits);

/// Mean cross-entropy over the predicted positions of one row (nats).
template <typename Scalar>
Scalar row_loss(const TransformerParams<Scalar>& params, const EncodedRow& row,
                const Vocabulary& vocab, const ColumnTrieSet& tries, Guiding guiding,
                bool train = false, Rng* rng = nullptr);

/// Exact gradient of row_loss for a single example.
template <typename Scalar>
PerExampleGrad<Scalar> backward(const TransformerParams<Scalar>& params, const EncodedRow& row,
                                const Vocabulary& vocab, const ColumnTrieSet& tries,
                                Guiding guiding, bool train = false, Rng* rng = nullptr);

extern template TransformerParams<float> init_model<float>(const ModelConfig&, Rng&);
extern template TransformerParams<double> init_model<double>(const ModelConfig&, Rng&);
extern template ForwardTrace<float> forward_trace<float>(const TransformerParams<float>&,
                                                         std::span<const TokenId>, bool, Rng*);
extern template ForwardTrace<double> forward_trace<double>(const TransformerParams<double>&,
                                                           std::span<const TokenId>, bool, Rng*);
extern template Matrix<float> forward<float>(const TransformerParams<float>&,
                                             std::span<const TokenId>, bool, Rng*);
extern template Matrix<double> forward<double>(const TransformerParams<double>&,
                                               std::span<const TokenId>, bool, Rng*);
extern template Vector<float> backward_from_logits<float>(const TransformerParams<float>&,
                                                          const ForwardTrace<float>&,
                                                          const Matrix<float>&);
extern template Vector<double> backward_from_logits<double>(const TransformerParams<double>&,
                                                            const ForwardTrace<double>&,
                                                            const Matrix<double>&);
extern template std::vector<float> position_nll<float>(
    const Matrix<float>&, std::span<const TokenId>, const std::vector<std::span<const TokenId>>*,
    Matrix<float>*);
extern template std::vector<double> position_nll<double>(
    const Matrix<double>&, std::span<const TokenId>, const std::vector<std::span<const TokenId>>*,
    Matrix<double>*);
extern template float row_loss<float>(const TransformerParams<float>&, const EncodedRow&,
                                      const Vocabulary&, const ColumnTrieSet&, Guiding, bool,
                                      Rng*);
extern template double row_loss<double>(const TransformerParams<double>&, const EncodedRow&,
                                        const Vocabulary&, const ColumnTrieSet&, Guiding, bool,
                                        Rng*);
extern template ForwardTrace<long double> forward_trace<long double>(
    const TransformerParams<long double>&, std::span<const TokenId>, bool, Rng*);
extern template Matrix<long double> forward<long double>(const TransformerParams<long double>&,
                                                         std::span<const TokenId>, bool, Rng*);
extern template std::vector<long double> position_nll<long double>(
    const Matrix<long double>&, std::span<const TokenId>,
    const std::vector<std::span<const TokenId>>*, Matrix<long double>*);
extern template long double row_loss<long double>(const TransformerParams<long double>&,
                                                  const EncodedRow&, const Vocabulary&,
                                                  const ColumnTrieSet&, Guiding, bool, Rng*);
extern template PerExampleGrad<float> backward<float>(const TransformerParams<float>&,
                                                      const EncodedRow&, const Vocabulary&,
                                                      const ColumnTrieSet&, Guiding, bool, Rng*);
extern template PerExampleGrad<double> backward<double>(const TransformerParams<double>&,
                                                        const EncodedRow&, const Vocabulary&,
                                                        const ColumnTrieSet&, Guiding, bool,
                                                        Rng*);

}  // namespace dptab
