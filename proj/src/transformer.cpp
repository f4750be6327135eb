#include "dptab/transformer.hpp"

#include <algorithm>
#include <limits>

namespace dptab {
namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;
template <typename Scalar>
using MatrixMap = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowVector<Scalar>>;
template <typename Scalar>
using RowMap = Eigen::Map<RowVector<Scalar>>;

template <typename Scalar>
ConstMatrixMap<Scalar> view(const Vector<Scalar>& flat, std::size_t offset, std::size_t rows,
                            std::size_t cols) {
  return ConstMatrixMap<Scalar>(flat.data() + offset, static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(cols));
}

template <typename Scalar>
MatrixMap<Scalar> view(Vector<Scalar>& flat, std::size_t offset, std::size_t rows,
                       std::size_t cols) {
  return MatrixMap<Scalar>(flat.data() + offset, static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(cols));
}

template <typename Scalar>
ConstRowMap<Scalar> row_view(const Vector<Scalar>& flat, std::size_t offset, std::size_t n) {
  return ConstRowMap<Scalar>(flat.data() + offset, static_cast<Eigen::Index>(n));
}

template <typename Scalar>
RowMap<Scalar> row_view(Vector<Scalar>& flat, std::size_t offset, std::size_t n) {
  return RowMap<Scalar>(flat.data() + offset, static_cast<Eigen::Index>(n));
}

template <typename Scalar>
void layer_norm(const Matrix<Scalar>& x, const ConstRowMap<Scalar>& gain,
                const ConstRowMap<Scalar>& bias, Matrix<Scalar>& hat, Vector<Scalar>& rstd,
                Matrix<Scalar>& out) {
  const auto d = static_cast<Scalar>(x.cols());
  hat.resize(x.rows(), x.cols());
  rstd.resize(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Scalar mean = x.row(t).sum() / d;
    const Scalar var = (x.row(t).array() - mean).square().sum() / d;
    rstd(t) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    hat.row(t) = (x.row(t).array() - mean) * rstd(t);
  }
  out = (hat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

// Accumulates gain/bias gradients and returns the input gradient.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dout, const Matrix<Scalar>& hat,
                                   const Vector<Scalar>& rstd, const ConstRowMap<Scalar>& gain,
                                   RowMap<Scalar> dgain, RowMap<Scalar> dbias) {
  dgain += (dout.array() * hat.array()).colwise().sum().matrix();
  dbias += dout.colwise().sum();
  const Matrix<Scalar> dhat = (dout.array().rowwise() * gain.array()).matrix();
  const auto d = static_cast<Scalar>(dout.cols());
  Matrix<Scalar> dx(dout.rows(), dout.cols());
  for (Eigen::Index t = 0; t < dout.rows(); ++t) {
    const Scalar mean_dhat = dhat.row(t).sum() / d;
    const Scalar mean_dhat_hat = dhat.row(t).dot(hat.row(t)) / d;
    dx.row(t) = rstd(t) * (dhat.row(t).array() - mean_dhat - hat.row(t).array() * mean_dhat_hat).matrix();
  }
  return dx;
}

template <typename Scalar>
constexpr Scalar kGeluC = static_cast<Scalar>(0.7978845608028654);  // sqrt(2 / pi)
template <typename Scalar>
constexpr Scalar kGeluA = static_cast<Scalar>(0.044715);

// tanh-approximated GELU.
template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(kGeluC<Scalar> * (x + kGeluA<Scalar> * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar th = std::tanh(kGeluC<Scalar> * (x + kGeluA<Scalar> * x * x * x));
  return Scalar(0.5) * (Scalar(1) + th) +
         Scalar(0.5) * x * (Scalar(1) - th * th) * kGeluC<Scalar> *
             (Scalar(1) + Scalar(3) * kGeluA<Scalar> * x * x);
}

template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const auto scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : Scalar(0);
  return mask;
}

template <typename Scalar>
void apply_mask(Matrix<Scalar>& x, const Matrix<Scalar>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

}  // namespace

void ModelConfig::validate() const {
  if (layers == 0 || width == 0 || heads == 0 || context == 0 || vocab == 0) {
    throw ConfigError("model config: layers, width, heads, context and vocab must be positive");
  }
  if (width % heads != 0) throw ConfigError("model config: d not divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must be in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& config) {
  return {{"layers", config.layers},   {"width", config.width},
          {"heads", config.heads},     {"context", config.context},
          {"vocab", config.vocab},     {"dropout", config.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig config;
  config.layers = doc.value("layers", config.layers);
  config.width = doc.value("width", config.width);
  config.heads = doc.value("heads", config.heads);
  config.context = doc.value("context", config.context);
  config.vocab = doc.value("vocab", config.vocab);
  config.dropout = doc.value("dropout", config.dropout);
  return config;
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.width;
  wte = add("wte", config.vocab, d);
  wpe = add("wpe", config.context, d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerOffsets o{};
    o.ln1_gain = add(p + "ln_1.weight", 1, d);
    o.ln1_bias = add(p + "ln_1.bias", 1, d);
    o.wq = add(p + "attn.q.weight", d, d);
    o.bq = add(p + "attn.q.bias", 1, d);
    o.wk = add(p + "attn.k.weight", d, d);
    o.bk = add(p + "attn.k.bias", 1, d);
    o.wv = add(p + "attn.v.weight", d, d);
    o.bv = add(p + "attn.v.bias", 1, d);
    o.wo = add(p + "attn.proj.weight", d, d);
    o.bo = add(p + "attn.proj.bias", 1, d);
    o.ln2_gain = add(p + "ln_2.weight", 1, d);
    o.ln2_bias = add(p + "ln_2.bias", 1, d);
    o.w1 = add(p + "mlp.fc.weight", d, 4 * d);
    o.b1 = add(p + "mlp.fc.bias", 1, 4 * d);
    o.w2 = add(p + "mlp.proj.weight", 4 * d, d);
    o.b2 = add(p + "mlp.proj.bias", 1, d);
    layer.push_back(o);
  }
  lnf_gain = add("ln_f.weight", 1, d);
  lnf_bias = add("ln_f.bias", 1, d);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  const std::size_t offset = total_;
  tensors_.push_back({std::move(name), rows, cols, offset});
  total_ += rows * cols;
  return offset;
}

const TensorSpec& ParamLayout::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ConfigError("no parameter tensor named '" + std::string(name) + "'");
}

std::size_t parameter_count(const ModelConfig& config) {
  const std::size_t d = config.width;
  return config.vocab * d + config.context * d + config.layers * (12 * d * d + 13 * d) + 2 * d;
}

template <typename Scalar>
TransformerParams<Scalar> init_model(const ModelConfig& config, Rng& rng) {
  TransformerParams<Scalar> params{config, ParamLayout(config), {}};
  params.values = Vector<Scalar>::Zero(static_cast<Eigen::Index>(params.layout.total()));
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& t : params.layout.tensors()) {
    const bool gain = t.name.ends_with("ln_1.weight") || t.name.ends_with("ln_2.weight") ||
                      t.name == "ln_f.weight";
    const bool bias = t.name.ends_with(".bias");
    for (std::size_t i = 0; i < t.size(); ++i) {
      Scalar& value = params.values(static_cast<Eigen::Index>(t.offset + i));
      if (gain) {
        value = Scalar(1);
      } else if (!bias) {
        value = static_cast<Scalar>(normal(rng));
      }
    }
  }
  return params;
}

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const TransformerParams<Scalar>& params,
                                   std::span<const TokenId> tokens, bool train, Rng* rng) {
  const ModelConfig& cfg = params.config;
  const ParamLayout& lay = params.layout;
  const Vector<Scalar>& w = params.values;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const std::size_t d = cfg.width;
  const std::size_t dh = cfg.head_dim();
  if (tokens.size() > cfg.context) {
    throw DataError("sequence of length " + std::to_string(tokens.size()) +
                    " exceeds the context length " + std::to_string(cfg.context));
  }
  const bool drop = train && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw ConfigError("dropout requires a random source");

  ForwardTrace<Scalar> tr;
  tr.tokens.assign(tokens.begin(), tokens.end());

  const auto wte = view(w, lay.wte, cfg.vocab, d);
  const auto wpe = view(w, lay.wpe, cfg.context, d);
  Matrix<Scalar> h(T, static_cast<Eigen::Index>(d));
  for (Eigen::Index t = 0; t < T; ++t) {
    const TokenId id = tokens[static_cast<std::size_t>(t)];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
      throw DataError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    h.row(t) = wte.row(id) + wpe.row(t);
  }
  if (drop) tr.embed_drop = dropout_mask<Scalar>(T, h.cols(), cfg.dropout, *rng);
  apply_mask(h, tr.embed_drop);

  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  tr.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerOffsets& o = lay.layer[l];
    LayerTrace<Scalar>& lt = tr.layers[l];
    lt.input = h;
    layer_norm(h, row_view(w, o.ln1_gain, d), row_view(w, o.ln1_bias, d), lt.ln1_hat, lt.ln1_rstd,
               lt.ln1_out);
    lt.q = (lt.ln1_out * view(w, o.wq, d, d)).rowwise() + row_view(w, o.bq, d);
    lt.k = (lt.ln1_out * view(w, o.wk, d, d)).rowwise() + row_view(w, o.bk, d);
    lt.v = (lt.ln1_out * view(w, o.wv, d, d)).rowwise() + row_view(w, o.bv, d);

    lt.heads_out.resize(T, static_cast<Eigen::Index>(d));
    lt.probs.resize(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      const auto col = static_cast<Eigen::Index>(hd * dh);
      const auto width = static_cast<Eigen::Index>(dh);
      const Matrix<Scalar> scores =
          (lt.q.middleCols(col, width) * lt.k.middleCols(col, width).transpose()) * scale;
      Matrix<Scalar>& p = lt.probs[hd];
      p = Matrix<Scalar>::Zero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const auto visible = scores.row(t).head(t + 1);
        const Scalar top = visible.maxCoeff();
        p.row(t).head(t + 1) = (visible.array() - top).exp().matrix();
        p.row(t).head(t + 1) /= p.row(t).head(t + 1).sum();
      }
      lt.heads_out.middleCols(col, width) = p * lt.v.middleCols(col, width);
    }
    Matrix<Scalar> attn = (lt.heads_out * view(w, o.wo, d, d)).rowwise() + row_view(w, o.bo, d);
    if (drop) lt.attn_drop = dropout_mask<Scalar>(T, attn.cols(), cfg.dropout, *rng);
    apply_mask(attn, lt.attn_drop);
    lt.mid = h + attn;

    layer_norm(lt.mid, row_view(w, o.ln2_gain, d), row_view(w, o.ln2_bias, d), lt.ln2_hat,
               lt.ln2_rstd, lt.ln2_out);
    lt.pre_act = (lt.ln2_out * view(w, o.w1, d, 4 * d)).rowwise() + row_view(w, o.b1, 4 * d);
    lt.act = lt.pre_act.unaryExpr([](Scalar x) { return gelu(x); });
    Matrix<Scalar> mlp = (lt.act * view(w, o.w2, 4 * d, d)).rowwise() + row_view(w, o.b2, d);
    if (drop) lt.mlp_drop = dropout_mask<Scalar>(T, mlp.cols(), cfg.dropout, *rng);
    apply_mask(mlp, lt.mlp_drop);
    h = lt.mid + mlp;
  }

  layer_norm(h, row_view(w, lay.lnf_gain, d), row_view(w, lay.lnf_bias, d), tr.final_hat,
             tr.final_rstd, tr.final_out);
  tr.logits = tr.final_out * wte.transpose();
  return tr;
}

template <typename Scalar>
Matrix<Scalar> forward(const TransformerParams<Scalar>& params, std::span<const TokenId> tokens,
                       bool train, Rng* rng) {
  return forward_trace(params, tokens, train, rng).logits;
}

template <typename Scalar>
Vector<Scalar> backward_from_logits(const TransformerParams<Scalar>& params,
                                    const ForwardTrace<Scalar>& tr,
                                    const Matrix<Scalar>& dlogits) {
  const ModelConfig& cfg = params.config;
  const ParamLayout& lay = params.layout;
  const Vector<Scalar>& w = params.values;
  const std::size_t d = cfg.width;
  const std::size_t dh = cfg.head_dim();
  const auto T = static_cast<Eigen::Index>(tr.tokens.size());
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Vector<Scalar> g = Vector<Scalar>::Zero(w.size());
  const auto wte = view(w, lay.wte, cfg.vocab, d);
  auto dwte = view(g, lay.wte, cfg.vocab, d);
  auto dwpe = view(g, lay.wpe, cfg.context, d);

  // Tied output projection.
  dwte.noalias() += dlogits.transpose() * tr.final_out;
  Matrix<Scalar> dh_mat = dlogits * wte;
  dh_mat = layer_norm_backward(dh_mat, tr.final_hat, tr.final_rstd, row_view(w, lay.lnf_gain, d),
                               row_view(g, lay.lnf_gain, d), row_view(g, lay.lnf_bias, d));

  for (std::size_t l = cfg.layers; l-- > 0;) {
    const LayerOffsets& o = lay.layer[l];
    const LayerTrace<Scalar>& lt = tr.layers[l];

    // MLP block.
    Matrix<Scalar> dmlp = dh_mat;
    apply_mask(dmlp, lt.mlp_drop);
    view(g, o.w2, 4 * d, d).noalias() += lt.act.transpose() * dmlp;
    row_view(g, o.b2, d) += dmlp.colwise().sum();
    Matrix<Scalar> dact = dmlp * view(w, o.w2, 4 * d, d).transpose();
    dact.array() *= lt.pre_act.unaryExpr([](Scalar x) { return gelu_grad(x); }).array();
    view(g, o.w1, d, 4 * d).noalias() += lt.ln2_out.transpose() * dact;
    row_view(g, o.b1, 4 * d) += dact.colwise().sum();
    Matrix<Scalar> dln2 = dact * view(w, o.w1, d, 4 * d).transpose();
    Matrix<Scalar> dmid = dh_mat + layer_norm_backward(dln2, lt.ln2_hat, lt.ln2_rstd,
                                                       row_view(w, o.ln2_gain, d),
                                                       row_view(g, o.ln2_gain, d),
                                                       row_view(g, o.ln2_bias, d));

    // Attention block.
    Matrix<Scalar> dattn = dmid;
    apply_mask(dattn, lt.attn_drop);
    view(g, o.wo, d, d).noalias() += lt.heads_out.transpose() * dattn;
    row_view(g, o.bo, d) += dattn.colwise().sum();
    const Matrix<Scalar> dheads = dattn * view(w, o.wo, d, d).transpose();

    Matrix<Scalar> dq(T, static_cast<Eigen::Index>(d));
    Matrix<Scalar> dk(T, static_cast<Eigen::Index>(d));
    Matrix<Scalar> dv(T, static_cast<Eigen::Index>(d));
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      const auto col = static_cast<Eigen::Index>(hd * dh);
      const auto width = static_cast<Eigen::Index>(dh);
      const Matrix<Scalar>& p = lt.probs[hd];
      const Matrix<Scalar> dout = dheads.middleCols(col, width);
      const Matrix<Scalar> dp = dout * lt.v.middleCols(col, width).transpose();
      dv.middleCols(col, width) = p.transpose() * dout;
      Matrix<Scalar> ds(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        const Scalar inner = p.row(t).dot(dp.row(t));
        ds.row(t) = (p.row(t).array() * (dp.row(t).array() - inner)).matrix();
      }
      ds *= scale;
      dq.middleCols(col, width) = ds * lt.k.middleCols(col, width);
      dk.middleCols(col, width) = ds.transpose() * lt.q.middleCols(col, width);
    }
    view(g, o.wq, d, d).noalias() += lt.ln1_out.transpose() * dq;
    view(g, o.wk, d, d).noalias() += lt.ln1_out.transpose() * dk;
    view(g, o.wv, d, d).noalias() += lt.ln1_out.transpose() * dv;
    row_view(g, o.bq, d) += dq.colwise().sum();
    row_view(g, o.bk, d) += dk.colwise().sum();
    row_view(g, o.bv, d) += dv.colwise().sum();
    Matrix<Scalar> dln1 = dq * view(w, o.wq, d, d).transpose() +
                          dk * view(w, o.wk, d, d).transpose() +
                          dv * view(w, o.wv, d, d).transpose();
    dh_mat = dmid + layer_norm_backward(dln1, lt.ln1_hat, lt.ln1_rstd, row_view(w, o.ln1_gain, d),
                                        row_view(g, o.ln1_gain, d), row_view(g, o.ln1_bias, d));
  }

  apply_mask(dh_mat, tr.embed_drop);
  for (Eigen::Index t = 0; t < T; ++t) {
    dwte.row(tr.tokens[static_cast<std::size_t>(t)]) += dh_mat.row(t);
    dwpe.row(t) += dh_mat.row(t);
  }
  return g;
}

template <typename Scalar>
std::vector<Scalar> position_nll(const Matrix<Scalar>& logits, std::span<const TokenId> targets,
                                 const std::vector<std::span<const TokenId>>* masks,
                                 Matrix<Scalar>* dlogits) {
  const auto T = static_cast<Eigen::Index>(targets.size());
  std::vector<Scalar> nll(targets.size(), Scalar(0));
  if (dlogits) *dlogits = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const TokenId target = targets[static_cast<std::size_t>(t)];
    if (target == kIgnore) continue;
    Vector<Scalar> scores = logits.row(t).transpose();
    if (masks) scores = mask_logits(scores, (*masks)[static_cast<std::size_t>(t)]);
    const Scalar top = scores.maxCoeff();
    const Scalar log_z = std::log(masked_exp(scores, top).sum());
    nll[static_cast<std::size_t>(t)] = log_z - (scores(target) - top);
    if (dlogits) {
      dlogits->row(t) = masked_exp(scores, top + log_z).transpose();
      (*dlogits)(t, target) -= Scalar(1);
    }
  }
  return nll;
}

template <typename Scalar>
Scalar row_loss(const TransformerParams<Scalar>& params, const EncodedRow& row,
                const Vocabulary& vocab, const ColumnTrieSet& tries, Guiding guiding, bool train,
                Rng* rng) {
  const Matrix<Scalar> logits = forward(params, std::span<const TokenId>(row.inputs), train, rng);
  std::vector<std::span<const TokenId>> masks;
  if (guiding == Guiding::kTrie) masks = teacher_forced_masks(tries, vocab, row);
  const auto terms =
      position_nll<Scalar>(logits, row.targets, guiding == Guiding::kTrie ? &masks : nullptr, nullptr);
  Scalar total = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (row.targets[t] == kIgnore) continue;
    total += terms[t];
    ++count;
  }
  return count ? total / static_cast<Scalar>(count) : Scalar(0);
}

template <typename Scalar>
PerExampleGrad<Scalar> backward(const TransformerParams<Scalar>& params, const EncodedRow& row,
                                const Vocabulary& vocab, const ColumnTrieSet& tries,
                                Guiding guiding, bool train, Rng* rng) {
  const ForwardTrace<Scalar> tr =
      forward_trace(params, std::span<const TokenId>(row.inputs), train, rng);
  std::vector<std::span<const TokenId>> masks;
  if (guiding == Guiding::kTrie) masks = teacher_forced_masks(tries, vocab, row);
  Matrix<Scalar> dlogits;
  const auto terms = position_nll<Scalar>(tr.logits, row.targets,
                                          guiding == Guiding::kTrie ? &masks : nullptr, &dlogits);
  const auto count = static_cast<std::size_t>(
      std::count_if(row.targets.begin(), row.targets.end(), [](TokenId t) { return t != kIgnore; }));
  PerExampleGrad<Scalar> out;
  if (count == 0) {
    out.values = Vector<Scalar>::Zero(params.values.size());
    return out;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  dlogits *= inv;
  for (Scalar term : terms) out.loss += term;
  out.loss *= inv;
  out.values = backward_from_logits(params, tr, dlogits);
  out.norm = out.values.norm();
  return out;
}

template TransformerParams<float> init_model<float>(const ModelConfig&, Rng&);
template TransformerParams<double> init_model<double>(const ModelConfig&, Rng&);
template ForwardTrace<float> forward_trace<float>(const TransformerParams<float>&,
                                                  std::span<const TokenId>, bool, Rng*);
template ForwardTrace<double> forward_trace<double>(const TransformerParams<double>&,
                                                    std::span<const TokenId>, bool, Rng*);
template Matrix<float> forward<float>(const TransformerParams<float>&, std::span<const TokenId>,
                                      bool, Rng*);
template Matrix<double> forward<double>(const TransformerParams<double>&,
                                        std::span<const TokenId>, bool, Rng*);
template Vector<float> backward_from_logits<float>(const TransformerParams<float>&,
                                                   const ForwardTrace<float>&, const Matrix<float>&);
template Vector<double> backward_from_logits<double>(const TransformerParams<double>&,
                                                     const ForwardTrace<double>&,
                                                     const Matrix<double>&);
template std::vector<float> position_nll<float>(const Matrix<float>&, std::span<const TokenId>,
                                                const std::vector<std::span<const TokenId>>*,
                                                Matrix<float>*);
template std::vector<double> position_nll<double>(const Matrix<double>&, std::span<const TokenId>,
                                                  const std::vector<std::span<const TokenId>>*,
                                                  Matrix<double>*);
template float row_loss<float>(const TransformerParams<float>&, const EncodedRow&,
                               const Vocabulary&, const ColumnTrieSet&, Guiding, bool, Rng*);
template double row_loss<double>(const TransformerParams<double>&, const EncodedRow&,
                                 const Vocabulary&, const ColumnTrieSet&, Guiding, bool, Rng*);
// Extended precision for finite-difference oracles.
template ForwardTrace<long double> forward_trace<long double>(const TransformerParams<long double>&,
                                                              std::span<const TokenId>, bool, Rng*);
template Matrix<long double> forward<long double>(const TransformerParams<long double>&,
                                                  std::span<const TokenId>, bool, Rng*);
template std::vector<long double> position_nll<long double>(
    const Matrix<long double>&, std::span<const TokenId>,
    const std::vector<std::span<const TokenId>>*, Matrix<long double>*);
template long double row_loss<long double>(const TransformerParams<long double>&,
                                           const EncodedRow&, const Vocabulary&,
                                           const ColumnTrieSet&, Guiding, bool, Rng*);
template PerExampleGrad<float> backward<float>(const TransformerParams<float>&, const EncodedRow&,
                                               const Vocabulary&, const ColumnTrieSet&, Guiding,
                                               bool, Rng*);
template PerExampleGrad<double> backward<double>(const TransformerParams<double>&,
                                                 const EncodedRow&, const Vocabulary&,
                                                 const ColumnTrieSet&, Guiding, bool, Rng*);

}  // namespace dptab
