#pragma once

// Adam and Nesterov SGD over ModelParams, plus the phased training loop with
// validation-loss model selection.
//
// Masked entries (inactive max-plus weights, pruned linear weights) carry
// zero optimizer state and are never updated.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maxplus/data.hpp"
#include "maxplus/evaluate.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/rng.hpp"

namespace maxplus {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { kAdam, kSgdNesterov };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd_nesterov"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd_nesterov" || s == "sgd-nesterov" || s == "sgd") return OptimizerKind::kSgdNesterov;
  throw ContractViolation("unknown optimizer '" + std::string(s) + "' (expected adam or sgd_nesterov)");
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for every parameter tensor; `m` doubles as the Nesterov buffer.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;

  static OptimizerState zeros(const ModelParams& model, OptimizerKind kind) {
    OptimizerState s;
    s.kind = kind;
    for (const auto& p : model.params) {
      s.m.emplace_back(p.value.shape(), 0.0);
      if (kind == OptimizerKind::kAdam) s.v.emplace_back(p.value.shape(), 0.0);
    }
    return s;
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Which parameters receive L2 weight decay.
struct DecayScope {
  bool morph = false;  // max-plus weights and biases; off: shrinking toward 0 has no meaning there

  bool applies(ParamKind k) const {
    if (k == ParamKind::kLinearWeight) return true;
    if (k == ParamKind::kMorphWeight || k == ParamKind::kMorphBias) return morph;
    return false;
  }
};

namespace detail {

inline void check_finite(const Parameter& p, const Tensor& g) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (p.active[i] && !std::isfinite(g[i]))
      throw TrainingDiverged("non-finite gradient " + std::to_string(g[i]) + " in " + p.name + "[" +
                             std::to_string(i) + "]");
}

inline void check_shapes(const ModelParams& model, std::span<const Tensor> grads, const OptimizerState& s) {
  if (grads.size() != model.params.size() || s.m.size() != model.params.size())
    throw ContractViolation("optimizer: gradient/state count does not match the model");
}

}  // namespace detail

/// One Adam step with coupled L2 decay (added to the gradient).
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<const std::uint8_t> active,
                        std::span<double> m, std::span<double> v, std::uint64_t t, double lr, double weight_decay,
                        const AdamHyper& h = {}) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!active[i]) continue;
    const double g = grad[i] + weight_decay * param[i];
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
  }
}

/// One Nesterov step: buf = μ·buf + g;  p -= lr·(g + μ·buf).
inline void nesterov_update(std::span<double> param, std::span<const double> grad,
                            std::span<const std::uint8_t> active, std::span<double> buf, double lr, double momentum,
                            double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!active[i]) continue;
    const double g = grad[i] + weight_decay * param[i];
    buf[i] = momentum * buf[i] + g;
    param[i] -= lr * (g + momentum * buf[i]);
  }
}

inline void adam_step(ModelParams& model, std::span<const Tensor> grads, OptimizerState& state, double lr,
                      double weight_decay, DecayScope scope = {}, const AdamHyper& h = {}) {
  detail::check_shapes(model, grads, state);
  if (state.kind != OptimizerKind::kAdam) throw ContractViolation("adam_step: state belongs to another optimizer");
  for (std::size_t k = 0; k < model.params.size(); ++k) detail::check_finite(model.params[k], grads[k]);
  ++state.step;
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    auto& p = model.params[k];
    adam_update(p.value.data(), grads[k].data(), p.active, state.m[k].data(), state.v[k].data(), state.step, lr,
                scope.applies(p.kind) ? weight_decay : 0.0, h);
  }
}

inline void sgd_nesterov_step(ModelParams& model, std::span<const Tensor> grads, OptimizerState& state, double lr,
                              double momentum, double weight_decay, DecayScope scope = {}) {
  detail::check_shapes(model, grads, state);
  if (state.kind != OptimizerKind::kSgdNesterov)
    throw ContractViolation("sgd_nesterov_step: state belongs to another optimizer");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractViolation("sgd_nesterov_step: momentum must lie in [0, 1)");
  for (std::size_t k = 0; k < model.params.size(); ++k) detail::check_finite(model.params[k], grads[k]);
  ++state.step;
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    auto& p = model.params[k];
    nesterov_update(p.value.data(), grads[k].data(), p.active, state.m[k].data(), lr, momentum,
                    scope.applies(p.kind) ? weight_decay : 0.0);
  }
}

struct Phase {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  std::size_t epochs = 1;
};

struct TrainConfig {
  std::vector<Phase> phases{Phase{}};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  DecayScope decay;
  AdamHyper adam;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps in total (0 = run every epoch).
  std::size_t max_steps = 0;

  void validate() const {
    if (phases.empty()) throw ContractViolation("train config: at least one phase required");
    for (const auto& p : phases) {
      if (p.epochs == 0) throw ContractViolation("train config: every phase needs epochs >= 1");
      if (!(p.lr >= 0.0) || !std::isfinite(p.lr)) throw ContractViolation("train config: learning rate must be finite and >= 0");
    }
    if (batch_size == 0) throw ContractViolation("train config: batch_size must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractViolation("train config: momentum must lie in [0, 1)");
  }
};

/// MTAT protocol: Adam 1e-4 for 80 epochs, then Nesterov SGD (0.9) at 1e-3
/// for 20, weight decay 1e-4.
inline TrainConfig mtat_schedule() {
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-4, 80}, {OptimizerKind::kSgdNesterov, 1e-3, 20}};
  c.momentum = 0.9;
  c.weight_decay = 1e-4;
  return c;
}

/// CIFAR-10 protocol: Adam 1e-3 for 10 epochs.
inline TrainConfig cifar_schedule() {
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-3, 10}};
  c.weight_decay = 1e-4;
  return c;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, global across phases
  std::size_t phase = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::optional<double> val_roc_auc, val_pr_auc, val_accuracy;
  std::size_t steps = 0;  // cumulative optimizer steps
};

struct TrainResult {
  ModelParams best;
  OptimizerState best_state;
  std::size_t best_epoch = 0;  // 0: the initialization was never beaten
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> curves;
  bool diverged = false;
  std::string abort_reason;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs the phases in order. Parameters carry over between phases while
/// optimizer state is reset at each boundary. Returns the checkpoint with the
/// lowest validation loss; divergence stops training and keeps the best so far.
inline TrainResult train(ModelParams model, const Dataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  model.validate();
  if (ds.splits.train.empty() || ds.splits.val.empty())
    throw ContractViolation("train: dataset needs non-empty train and validation splits");
  if (ds.dim() != model.spec.d_in || ds.outputs() != model.spec.d_out)
    throw ContractViolation("train: dataset shape (" + std::to_string(ds.dim()) + " -> " +
                            std::to_string(ds.outputs()) + ") does not match the head");

  TrainResult result;
  result.best = model;
  result.best_state = OptimizerState::zeros(model, cfg.phases.front().optimizer);
  {
    const auto init = evaluate(model, ds, ds.splits.val);
    if (std::isfinite(init.loss)) result.best_val_loss = init.loss;
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order = ds.splits.train;
  const bool needs_pairs = model.spec.batchnorm;
  std::size_t epoch = 0;
  bool stop = false;

  for (std::size_t ph = 0; ph < cfg.phases.size() && !stop; ++ph) {
    const Phase& phase = cfg.phases[ph];
    OptimizerState state = OptimizerState::zeros(model, phase.optimizer);
    for (std::size_t e = 0; e < phase.epochs && !stop; ++e) {
      ++epoch;
      rng.shuffle(order);
      double loss_sum = 0;
      std::size_t seen = 0;
      try {
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
          const std::size_t len = std::min(cfg.batch_size, order.size() - start);
          if (needs_pairs && len < 2) continue;
          const std::span<const std::size_t> idx(order.data() + start, len);
          Tape tape;
          const Var x = tape.constant(ds.batch_features(idx));
          const Graph g = forward(tape, model, x, Mode::kTrain);
          const Var loss = task_loss(tape, g.logits, ds, idx);
          const double lv = tape.value(loss)[0];
          if (!std::isfinite(lv)) throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch));
          tape.backward(loss);
          const auto grads = collect_grads(tape, g);
          if (phase.optimizer == OptimizerKind::kAdam)
            adam_step(model, grads, state, phase.lr, cfg.weight_decay, cfg.decay, cfg.adam);
          else
            sgd_nesterov_step(model, grads, state, phase.lr, cfg.momentum, cfg.weight_decay, cfg.decay);
          loss_sum += lv * static_cast<double>(len);
          seen += len;
          ++result.steps;
          if (cfg.max_steps && result.steps >= cfg.max_steps) {
            stop = true;
            break;
          }
        }
      } catch (const TrainingDiverged& err) {
        result.diverged = true;
        result.abort_reason = err.what();
        break;
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = ph;
      rec.optimizer = phase.optimizer;
      rec.lr = phase.lr;
      rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
      rec.steps = result.steps;
      const auto val = evaluate(model, ds, ds.splits.val);
      rec.val_loss = val.loss;
      rec.val_roc_auc = val.roc_auc;
      rec.val_pr_auc = val.pr_auc;
      rec.val_accuracy = val.accuracy;
      result.curves.push_back(rec);
      if (on_epoch) on_epoch(rec);

      if (!std::isfinite(val.loss)) {
        result.diverged = true;
        result.abort_reason = "non-finite validation loss at epoch " + std::to_string(epoch);
        break;
      }
      if (val.loss < result.best_val_loss) {
        result.best_val_loss = val.loss;
        result.best_epoch = epoch;
        result.best = model;
        result.best_state = state;
      }
    }
    if (result.diverged) break;
  }
  return result;
}

}  // namespace maxplus
