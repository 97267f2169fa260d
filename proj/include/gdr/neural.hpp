#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gdr/diffusion.hpp"
#include "gdr/error.hpp"
#include "gdr/graph.hpp"

namespace gdr {

enum class PropagationKind { identity, gcn_hat, diffusion, aug_gcn, aug_diffusion };

inline const char* to_string(PropagationKind kind) {
  switch (kind) {
    case PropagationKind::identity: return "identity";
    case PropagationKind::gcn_hat: return "gcn-hat";
    case PropagationKind::diffusion: return "diffusion";
    case PropagationKind::aug_gcn: return "aug-gcn";
    case PropagationKind::aug_diffusion: return "aug-diffusion";
  }
  return "unknown";
}

// How each layer mixes node rows: not at all (MLP), by one or two GCN
// operators, or by one or two heat kernels exp(-t L) sharing a learnable t.
class PropagationSpec {
 public:
  using OperatorPtr = std::shared_ptr<const LinearNodeOperator>;
  using EnginePtr = std::shared_ptr<const DiffusionEngine>;

  static PropagationSpec identity() { return PropagationSpec(PropagationKind::identity, {}, {}); }
  static PropagationSpec gcn(OperatorPtr op) {
    return PropagationSpec(PropagationKind::gcn_hat, {std::move(op)}, {});
  }
  static PropagationSpec diffusion(EnginePtr engine) {
    return PropagationSpec(PropagationKind::diffusion, {}, {std::move(engine)});
  }
  static PropagationSpec aug_gcn(OperatorPtr forward, OperatorPtr backward) {
    return PropagationSpec(PropagationKind::aug_gcn, {std::move(forward), std::move(backward)}, {});
  }
  static PropagationSpec aug_diffusion(EnginePtr forward, EnginePtr backward) {
    return PropagationSpec(PropagationKind::aug_diffusion, {}, {std::move(forward), std::move(backward)});
  }

  PropagationKind kind() const { return kind_; }
  int channels() const {
    return kind_ == PropagationKind::aug_gcn || kind_ == PropagationKind::aug_diffusion ? 2 : 1;
  }
  bool has_time() const {
    return kind_ == PropagationKind::diffusion || kind_ == PropagationKind::aug_diffusion;
  }
  const std::vector<OperatorPtr>& operators() const { return operators_; }
  const std::vector<EnginePtr>& engines() const { return engines_; }

  Matrix propagate(int channel, const Matrix& v, double t) const {
    switch (kind_) {
      case PropagationKind::identity: return v;
      case PropagationKind::gcn_hat:
      case PropagationKind::aug_gcn: return operators_[channel]->apply(v);
      case PropagationKind::diffusion:
      case PropagationKind::aug_diffusion: return engines_[channel]->expm_action(v, t);
    }
    return v;
  }

  Matrix propagate_transpose(int channel, const Matrix& g, double t) const {
    switch (kind_) {
      case PropagationKind::identity: return g;
      case PropagationKind::gcn_hat:
      case PropagationKind::aug_gcn: return operators_[channel]->apply_transpose(g);
      case PropagationKind::diffusion:
      case PropagationKind::aug_diffusion: return engines_[channel]->expm_action(g, t);
    }
    return g;
  }

  // L Y for the generator of the channel's heat kernel.
  Matrix generator(int channel, const Matrix& y) const { return engines_[channel]->apply_operator(y); }

  Index n_nodes() const {
    if (!operators_.empty()) return operators_.front()->size();
    if (!engines_.empty()) return engines_.front()->size();
    return -1;
  }

 private:
  PropagationSpec(PropagationKind kind, std::vector<OperatorPtr> ops, std::vector<EnginePtr> engines)
      : kind_(kind), operators_(std::move(ops)), engines_(std::move(engines)) {
    const std::size_t need = static_cast<std::size_t>(channels());
    const bool uses_ops = kind_ == PropagationKind::gcn_hat || kind_ == PropagationKind::aug_gcn;
    const bool uses_engines = has_time();
    if ((uses_ops && operators_.size() != need) || (uses_engines && engines_.size() != need)) {
      throw Error(ErrorKind::parameter, "propagation-arity",
                  std::string(to_string(kind_)) + " needs " + std::to_string(need) + " operator(s)");
    }
    for (const auto& op : operators_) {
      if (!op) throw Error(ErrorKind::parameter, "null-operator", "missing operator");
    }
    for (const auto& e : engines_) {
      if (!e) throw Error(ErrorKind::parameter, "null-operator", "missing diffusion engine");
    }
  }

  PropagationKind kind_;
  std::vector<OperatorPtr> operators_;
  std::vector<EnginePtr> engines_;
};

// Per-channel weight blocks; a single channel for non-augmented kinds.
struct LayerWeights {
  std::vector<Matrix> w0;  // F x d1 each
  std::vector<Matrix> w1;  // d1 x c each
  double t = 0.0;

  int channels() const { return static_cast<int>(w0.size()); }
};

struct Gradients {
  std::vector<Matrix> w0;
  std::vector<Matrix> w1;
  double t = 0.0;
};

struct TrainConfig {
  int hidden = 16;
  double dropout = 0.5;
  int epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  // 0 keeps the best-validation weights over all epochs; k > 0 also stops
  // after k epochs without improvement.
  int early_stopping_window = 0;
  double t_init = 1.0;
  bool learn_t = true;
};

enum class Mode { train, eval };

inline Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    out.row(i) = (z.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline LayerWeights glorot_weights(int channels, Index features, int hidden, int classes,
                                   std::uint64_t seed, double t_init = 0.0) {
  std::mt19937_64 rng(seed);
  auto init = [&rng](Index rows, Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    }
    return m;
  };
  LayerWeights w;
  for (int k = 0; k < channels; ++k) {
    w.w0.push_back(init(features, hidden));
    w.w1.push_back(init(hidden, classes));
  }
  w.t = t_init;
  return w;
}

namespace nn_detail {

inline SparseMatrix dropout(const SparseMatrix& x, double rate, std::mt19937_64& rng) {
  SparseMatrix out = x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Index k = 0; k < out.nonZeros(); ++k) {
    out.valuePtr()[k] = keep(rng) ? out.valuePtr()[k] * scale : 0.0;
  }
  out.prune(0.0);
  return out;
}

inline Matrix dropout(const Matrix& x, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Matrix out = x;
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index i = 0; i < out.rows(); ++i) out(i, j) = keep(rng) ? out(i, j) * scale : 0.0;
  }
  return out;
}

inline void check_layer(const Matrix& m, const char* layer) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::numerical, "non-finite-activation",
                std::string("non-finite values in ") + layer);
  }
}

template <typename Features>
void check_shapes(const PropagationSpec& spec, const LayerWeights& w, const Features& x) {
  if (w.channels() != spec.channels() || static_cast<int>(w.w1.size()) != spec.channels()) {
    throw Error(ErrorKind::input, "shape-mismatch",
                "weights carry " + std::to_string(w.channels()) + " channel(s), propagation needs " +
                    std::to_string(spec.channels()));
  }
  const Index n = spec.n_nodes();
  if (n >= 0 && x.rows() != n) {
    throw Error(ErrorKind::input, "shape-mismatch",
                "features have " + std::to_string(x.rows()) + " rows, graph has " + std::to_string(n));
  }
  for (int k = 0; k < w.channels(); ++k) {
    if (w.w0[k].rows() != x.cols() || w.w1[k].rows() != w.w0[k].cols() ||
        w.w1[k].cols() != w.w1[0].cols()) {
      throw Error(ErrorKind::input, "shape-mismatch", "weight block shapes disagree with features");
    }
  }
}

}  // namespace nn_detail

// Intermediate values of one forward pass, kept for backpropagation.
template <typename Features>
struct ForwardPass {
  Features input;                    // after input dropout
  std::vector<Matrix> layer1_mixed;  // P_k (X W0_k)
  Matrix hidden_pre;                 // sum of layer1_mixed
  Matrix hidden;                     // ReLU, then dropout
  Matrix hidden_dropout_scale;       // 0 or 1/(1-p) per entry (train mode)
  std::vector<Matrix> layer2_mixed;  // P_k (H W1_k)
  Matrix logits;
  Matrix output;
};

template <typename Features>
ForwardPass<Features> forward_pass(const PropagationSpec& spec, const LayerWeights& w,
                                   const Features& x, Mode mode, double dropout_rate,
                                   std::mt19937_64& rng) {
  nn_detail::check_shapes(spec, w, x);
  ForwardPass<Features> f;
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  f.input = drop ? nn_detail::dropout(x, dropout_rate, rng) : x;
  const Index n = x.rows();
  f.hidden_pre = Matrix::Zero(n, w.w0[0].cols());
  for (int k = 0; k < spec.channels(); ++k) {
    Matrix xw = f.input * w.w0[k];
    f.layer1_mixed.push_back(spec.propagate(k, xw, w.t));
    f.hidden_pre += f.layer1_mixed.back();
  }
  nn_detail::check_layer(f.hidden_pre, "layer 1");
  f.hidden = f.hidden_pre.cwiseMax(0.0);
  if (drop) {
    f.hidden_dropout_scale =
        nn_detail::dropout(Matrix::Ones(f.hidden.rows(), f.hidden.cols()), dropout_rate, rng);
    f.hidden = f.hidden.cwiseProduct(f.hidden_dropout_scale);
  }
  f.logits = Matrix::Zero(n, w.w1[0].cols());
  for (int k = 0; k < spec.channels(); ++k) {
    Matrix hw = f.hidden * w.w1[k];
    f.layer2_mixed.push_back(spec.propagate(k, hw, w.t));
    f.logits += f.layer2_mixed.back();
  }
  nn_detail::check_layer(f.logits, "layer 2");
  f.output = softmax_rows(f.logits);
  return f;
}

// softmax(P ReLU(P X W0) W1), summed over channels for augmented kinds.
template <typename Features>
Matrix forward(const PropagationSpec& spec, const LayerWeights& w, const Features& x,
               Mode mode = Mode::eval, std::uint64_t seed = 0, double dropout_rate = 0.5) {
  std::mt19937_64 rng(seed);
  return forward_pass(spec, w, x, mode, dropout_rate, rng).output;
}

// Masked mean cross-entropy plus (weight_decay / 2) * ||W0||^2.
// `labels` are 0-based classes.
inline double loss(const Matrix& pred, const std::vector<int>& labels, const std::vector<bool>& mask,
                   const LayerWeights& w, double weight_decay) {
  double total = 0.0;
  long count = 0;
  for (Index i = 0; i < pred.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    total -= std::log(std::max(pred(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::input, "empty-mask", "loss needs at least one training row");
  double decay = 0.0;
  for (const Matrix& m : w.w0) decay += m.squaredNorm();
  return total / static_cast<double>(count) + 0.5 * weight_decay * decay;
}

template <typename Features>
Gradients backward_pass(const PropagationSpec& spec, const LayerWeights& w,
                        const ForwardPass<Features>& f, const std::vector<int>& labels,
                        const std::vector<bool>& mask, double weight_decay) {
  const Index n = f.output.rows();
  long count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw Error(ErrorKind::input, "empty-mask", "gradient needs at least one training row");

  Matrix d_logits = Matrix::Zero(n, f.output.cols());
  for (Index i = 0; i < n; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    d_logits.row(i) = f.output.row(i);
    d_logits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  d_logits /= static_cast<double>(count);

  Gradients g;
  Matrix d_hidden = Matrix::Zero(n, f.hidden.cols());
  for (int k = 0; k < spec.channels(); ++k) {
    const Matrix back = spec.propagate_transpose(k, d_logits, w.t);
    g.w1.push_back(f.hidden.transpose() * back);
    d_hidden.noalias() += back * w.w1[k].transpose();
    if (spec.has_time()) g.t -= d_logits.cwiseProduct(spec.generator(k, f.layer2_mixed[k])).sum();
  }
  if (f.hidden_dropout_scale.size() != 0) d_hidden = d_hidden.cwiseProduct(f.hidden_dropout_scale);
  const Matrix d_pre = d_hidden.cwiseProduct((f.hidden_pre.array() > 0.0).template cast<double>().matrix());
  for (int k = 0; k < spec.channels(); ++k) {
    const Matrix back = spec.propagate_transpose(k, d_pre, w.t);
    g.w0.push_back(Matrix(f.input.transpose() * back) + weight_decay * w.w0[k]);
    if (spec.has_time()) g.t -= d_pre.cwiseProduct(spec.generator(k, f.layer1_mixed[k])).sum();
  }
  return g;
}

// Exact gradients of loss(forward(...)) in eval mode.
template <typename Features>
Gradients backward(const PropagationSpec& spec, const LayerWeights& w, const Features& x,
                   const std::vector<int>& labels, const std::vector<bool>& mask,
                   double weight_decay = 0.0) {
  std::mt19937_64 rng(0);
  const auto f = forward_pass(spec, w, x, Mode::eval, 0.0, rng);
  return backward_pass(spec, w, f, labels, mask, weight_decay);
}

// Adaptive-moment optimizer over all weight blocks and t.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(LayerWeights& w, const Gradients& g, bool update_t) {
    if (m0_.empty()) init(w);
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, step_);
    const double c2 = 1.0 - std::pow(beta2_, step_);
    auto update = [&](Matrix& p, const Matrix& grad, Matrix& m, Matrix& v) {
      m = beta1_ * m + (1.0 - beta1_) * grad;
      v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (int k = 0; k < w.channels(); ++k) {
      update(w.w0[k], g.w0[k], m0_[k], v0_[k]);
      update(w.w1[k], g.w1[k], m1_[k], v1_[k]);
    }
    if (update_t) {
      mt_ = beta1_ * mt_ + (1.0 - beta1_) * g.t;
      vt_ = beta2_ * vt_ + (1.0 - beta2_) * g.t * g.t;
      w.t -= lr_ * (mt_ / c1) / (std::sqrt(vt_ / c2) + eps_);
      w.t = std::max(w.t, 0.0);
    }
  }

 private:
  void init(const LayerWeights& w) {
    for (int k = 0; k < w.channels(); ++k) {
      m0_.push_back(Matrix::Zero(w.w0[k].rows(), w.w0[k].cols()));
      v0_.push_back(Matrix::Zero(w.w0[k].rows(), w.w0[k].cols()));
      m1_.push_back(Matrix::Zero(w.w1[k].rows(), w.w1[k].cols()));
      v1_.push_back(Matrix::Zero(w.w1[k].rows(), w.w1[k].cols()));
    }
  }

  double lr_, beta1_, beta2_, eps_;
  int step_ = 0;
  std::vector<Matrix> m0_, v0_, m1_, v1_;
  double mt_ = 0.0, vt_ = 0.0;
};

struct TraceRow {
  int epoch = 0;
  double loss = 0.0;
  double val_acc = 0.0;
  double t_param = 0.0;
};

struct TrainResult {
  LayerWeights weights;
  Matrix predictions;  // eval-mode output of the kept weights, N x c
  std::vector<TraceRow> trace;
  int best_epoch = 0;
  double best_val_acc = 0.0;
};

inline double masked_accuracy(const Matrix& pred, const std::vector<int>& labels,
                              const std::vector<bool>& mask) {
  long correct = 0;
  long total = 0;
  for (Index i = 0; i < pred.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    Index best = 0;
    for (Index j = 1; j < pred.cols(); ++j) {
      if (pred(i, j) > pred(i, best)) best = j;
    }
    ++total;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

inline void validate_train_config(const TrainConfig& c) {
  if (c.hidden < 1) throw Error(ErrorKind::config, "bad-hidden", "hidden units must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw Error(ErrorKind::config, "bad-dropout", "dropout must lie in [0,1)");
  }
  if (c.epochs < 1) throw Error(ErrorKind::config, "bad-epochs", "epochs must be positive");
  if (!(c.learning_rate > 0.0)) throw Error(ErrorKind::config, "bad-learning-rate", "learning rate must be positive");
  if (!(c.weight_decay >= 0.0)) throw Error(ErrorKind::config, "bad-weight-decay", "weight decay must be >= 0");
  if (!(c.t_init >= 0.0)) throw Error(ErrorKind::config, "bad-t-init", "t_init must be >= 0");
}

// Trains with dropout, keeps the weights with the best validation accuracy
// (earliest epoch on ties). Deterministic for a fixed seed.
template <typename Features>
TrainResult train(const PropagationSpec& spec, const TrainConfig& config, const Features& x,
                  const std::vector<int>& labels, const std::vector<bool>& train_mask,
                  const std::vector<bool>& val_mask, int n_classes) {
  validate_train_config(config);
  TrainResult result;
  LayerWeights w = glorot_weights(spec.channels(), x.cols(), config.hidden, n_classes, config.seed,
                                  spec.has_time() ? config.t_init : 0.0);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(config.learning_rate);
  result.weights = w;
  result.best_val_acc = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto f = forward_pass(spec, w, x, Mode::train, config.dropout, rng);
    const double train_loss = loss(f.output, labels, train_mask, w, config.weight_decay);
    if (!std::isfinite(train_loss)) {
      throw Error(ErrorKind::numerical, "training-diverged",
                  "non-finite loss at epoch " + std::to_string(epoch));
    }
    const Gradients g = backward_pass(spec, w, f, labels, train_mask, config.weight_decay);
    adam.step(w, g, spec.has_time() && config.learn_t);

    std::mt19937_64 unused(0);
    const Matrix eval = forward_pass(spec, w, x, Mode::eval, 0.0, unused).output;
    const double val_acc = masked_accuracy(eval, labels, val_mask);
    result.trace.push_back({epoch, train_loss, val_acc, w.t});
    if (val_acc > result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      result.weights = w;
      result.predictions = eval;
      since_best = 0;
    } else if (config.early_stopping_window > 0 && ++since_best >= config.early_stopping_window) {
      break;
    }
  }
  return result;
}

// L1-normalizes each feature row (rows of zeros stay zero).
inline SparseMatrix row_normalize(const SparseMatrix& x) {
  SparseMatrix out = x;
  for (Index i = 0; i < out.outerSize(); ++i) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(out, i); it; ++it) s += std::abs(it.value());
    if (s == 0.0) continue;
    for (SparseMatrix::InnerIterator it(out, i); it; ++it) it.valueRef() /= s;
  }
  return out;
}

}  // namespace gdr
