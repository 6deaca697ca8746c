#pragma once

// Reverse-mode differentiation on a linear tape.
//
// Values are features x batch matrices. Every op appends its backward closure
// to the tape; backward() replays them once in reverse order. Max-type ops
// (relu, group max, max-plus) route the full incoming gradient to the single
// recorded winner, so inactive tropical entries receive exactly zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maxplus/tensor.hpp"
#include "maxplus/tropical.hpp"

namespace maxplus {

struct Var {
  std::size_t id = 0;
};

enum class Mode { kTrain, kEval };

/// Running statistics owned by the model, updated by train-mode batchnorm.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormStats make(std::size_t features) {
    return {Tensor({features}, 0.0), Tensor({features}, 1.0)};
  }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value) { return push(std::move(value), nullptr, false); }

  /// Leaf bound to external storage that must outlive the tape.
  Var parameter(const Tensor& value) { return push(Tensor{}, &value, true); }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }

  /// Accumulated gradient; zeros if nothing flowed into this node.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.grad.empty()) return n.grad;
    return Tensor(value(v).shape(), 0.0);
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest gap between a max-type winner and its runner-up seen so far.
  /// Only maintained when margin tracking is on (used by gradient checks).
  void track_margins(bool on) { track_margins_ = on; }
  double min_margin() const noexcept { return min_margin_; }

  // ---- ops ---------------------------------------------------------------

  /// A x + bias (bias broadcast across the batch).
  Var linear(Var a, Var x, std::optional<Var> bias = std::nullopt) {
    const Tensor& A = value(a);
    const Tensor& X = value(x);
    require_matrix(A, "linear weight");
    require_matrix(X, "linear input");
    if (A.cols() != X.rows())
      throw ContractViolation("linear: weight " + shape_string(A.shape()) + " does not match input " +
                              shape_string(X.shape()));
    const std::size_t m = A.rows(), k = A.cols(), b = X.cols();
    if (bias && value(*bias).size() != m)
      throw ContractViolation("linear: bias length " + std::to_string(value(*bias).size()) + " != " +
                              std::to_string(m));

    Tensor out = Tensor::matrix(m, b);
    for (std::size_t i = 0; i < m; ++i) {
      auto orow = out.row(i);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double w = A(i, kk);
        if (w == 0.0) continue;
        const auto xrow = X.row(kk);
        for (std::size_t j = 0; j < b; ++j) orow[j] += w * xrow[j];
      }
      // Bias goes on last so that Ax + b rounds exactly like its max-plus rewrite.
      if (bias)
        for (auto& v : orow) v += value(*bias)[i];
    }
    const Var y = push(std::move(out), nullptr, true);
    record([this, a, x, bias, y, m, k, b] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty()) return;
      const Tensor& A = value(a);
      const Tensor& X = value(x);
      if (wants_grad(a)) {
        Tensor& ga = grad_ref(a);
        for (std::size_t i = 0; i < m; ++i) {
          const auto grow = g.row(i);
          for (std::size_t kk = 0; kk < k; ++kk) {
            const auto xrow = X.row(kk);
            double s = 0.0;
            for (std::size_t j = 0; j < b; ++j) s += grow[j] * xrow[j];
            ga(i, kk) += s;
          }
        }
      }
      if (wants_grad(x)) {
        Tensor& gx = grad_ref(x);
        for (std::size_t i = 0; i < m; ++i) {
          const auto grow = g.row(i);
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double w = A(i, kk);
            if (w == 0.0) continue;
            auto gxrow = gx.row(kk);
            for (std::size_t j = 0; j < b; ++j) gxrow[j] += w * grow[j];
          }
        }
      }
      if (bias && wants_grad(*bias)) {
        Tensor& gb = grad_ref(*bias);
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (double v : g.row(i)) s += v;
          gb[i] += s;
        }
      }
    });
    return y;
  }

  Var relu(Var x) {
    const Tensor& X = value(x);
    Tensor out = X;
    for (auto& v : out.storage()) {
      if (track_margins_) note_margin(std::abs(v));
      v = v > 0.0 ? v : 0.0;
    }
    const Var y = push(std::move(out), nullptr, true);
    record([this, x, y] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(x)) return;
      const Tensor& X = value(x);
      Tensor& gx = grad_ref(x);
      for (std::size_t i = 0; i < X.size(); ++i)
        if (X[i] > 0.0) gx[i] += g[i];
    });
    return y;
  }

  /// Maxout pooling: out_i = max_p g_{i + p*N} over P groups of N rows.
  Var group_max(Var x, std::size_t pooling) {
    const Tensor& X = value(x);
    require_matrix(X, "group_max input");
    if (pooling == 0 || X.rows() % pooling != 0)
      throw ContractViolation("group_max: " + std::to_string(X.rows()) + " rows not divisible by pooling " +
                              std::to_string(pooling));
    const std::size_t n = X.rows() / pooling, b = X.cols();
    Tensor out = Tensor::matrix(n, b);
    std::vector<std::uint32_t> winner(n * b, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        double best = X(i, j);
        std::uint32_t arg = 0;
        for (std::size_t p = 1; p < pooling; ++p) {
          const double c = X(i + p * n, j);
          if (c > best) {
            best = c;
            arg = static_cast<std::uint32_t>(p);
          }
        }
        if (track_margins_)
          for (std::size_t p = 0; p < pooling; ++p)
            if (p != arg) note_margin(best - X(i + p * n, j));
        out(i, j) = best;
        winner[i * b + j] = arg;
      }
    const Var y = push(std::move(out), nullptr, true);
    record([this, x, y, n, b, winner = std::move(winner)] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(x)) return;
      Tensor& gx = grad_ref(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b; ++j) gx(i + winner[i * b + j] * n, j) += g(i, j);
    });
    return y;
  }

  /// (W ⊞ y) ∨ w0. `weights` is an m x k value tensor whose entries count only
  /// where `active` is set; `bias` is an m-vector with its own mask.
  Var maxplus(Var weights, std::span<const std::uint8_t> active, Var y, std::optional<Var> bias = std::nullopt,
              std::span<const std::uint8_t> bias_active = {}) {
    const Tensor& W = value(weights);
    require_matrix(W, "max-plus weight");
    if (active.size() != W.size()) throw ContractViolation("max-plus: mask size does not match weights");
    const TropicalView wv{W.rows(), W.cols(), W.data(), active};
    TropicalView bv;
    std::vector<std::uint8_t> all_active;
    if (bias) {
      const Tensor& B = value(*bias);
      if (bias_active.empty()) {
        all_active.assign(B.size(), 1);
        bias_active = all_active;
      }
      if (bias_active.size() != B.size()) throw ContractViolation("max-plus: bias mask size mismatch");
      bv = TropicalView{B.size(), 1, B.data(), bias_active};
    }
    auto prod = detail::tropical_product<detail::Greater>(wv, value(y), bias ? &bv : nullptr);
    for (std::size_t i = 0; i < prod.bottom.size(); ++i)
      if (prod.bottom[i])
        throw ContractViolation("max-plus: output row " + std::to_string(i / prod.values.cols()) +
                                " has no active weight and no active bias");
    if (track_margins_) note_maxplus_margins(wv, value(y), bias ? &bv : nullptr, prod);

    const Var out = push(std::move(prod.values), nullptr, true);
    record([this, weights, y, bias, out, argmax = std::move(prod.argmax)] {
      const Tensor& g = nodes_[out.id].grad;
      if (g.empty()) return;
      const std::size_t m = argmax.rows, b = argmax.cols;
      Tensor* gw = wants_grad(weights) ? &grad_ref(weights) : nullptr;
      Tensor* gy = wants_grad(y) ? &grad_ref(y) : nullptr;
      Tensor* gb = bias && wants_grad(*bias) ? &grad_ref(*bias) : nullptr;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < b; ++j) {
          const double gij = g(i, j);
          const std::int32_t k = argmax(i, j);
          if (k >= 0) {
            if (gw) (*gw)(i, static_cast<std::size_t>(k)) += gij;
            if (gy) (*gy)(static_cast<std::size_t>(k), j) += gij;
          } else if (k == ArgmaxRecord::kBias && gb) {
            (*gb)[i] += gij;
          }
        }
    });
    return out;
  }

  /// Per-feature batch normalization over the batch axis.
  Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode) {
    const Tensor& X = value(x);
    require_matrix(X, "batchnorm input");
    const std::size_t m = X.rows(), b = X.cols();
    if (value(gamma).size() != m || value(beta).size() != m || stats.running_mean.size() != m)
      throw ContractViolation("batchnorm: parameter length does not match " + std::to_string(m) + " features");
    if (mode == Mode::kTrain && b < 2) throw ContractViolation("batchnorm: train mode needs a batch of at least 2");

    Tensor xhat = Tensor::matrix(m, b);
    Tensor inv_std({m});
    Tensor out = Tensor::matrix(m, b);
    for (std::size_t i = 0; i < m; ++i) {
      double mean, var;
      if (mode == Mode::kTrain) {
        mean = 0.0;
        for (double v : X.row(i)) mean += v;
        mean /= static_cast<double>(b);
        var = 0.0;
        for (double v : X.row(i)) var += (v - mean) * (v - mean);
        const double unbiased = var / static_cast<double>(b - 1);
        var /= static_cast<double>(b);
        stats.running_mean[i] = (1.0 - stats.momentum) * stats.running_mean[i] + stats.momentum * mean;
        stats.running_var[i] = (1.0 - stats.momentum) * stats.running_var[i] + stats.momentum * unbiased;
      } else {
        mean = stats.running_mean[i];
        var = stats.running_var[i];
      }
      inv_std[i] = 1.0 / std::sqrt(var + stats.eps);
      const double gm = value(gamma)[i], bt = value(beta)[i];
      for (std::size_t j = 0; j < b; ++j) {
        xhat(i, j) = (X(i, j) - mean) * inv_std[i];
        out(i, j) = gm * xhat(i, j) + bt;
      }
    }
    const Var y = push(std::move(out), nullptr, true);
    record([this, x, gamma, beta, y, m, b, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty()) return;
      const double n = static_cast<double>(b);
      for (std::size_t i = 0; i < m; ++i) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
          sum_g += g(i, j);
          sum_gx += g(i, j) * xhat(i, j);
        }
        if (wants_grad(gamma)) grad_ref(gamma)[i] += sum_gx;
        if (wants_grad(beta)) grad_ref(beta)[i] += sum_g;
        if (!wants_grad(x)) continue;
        Tensor& gx = grad_ref(x);
        const double gm = value(gamma)[i];
        if (mode == Mode::kEval) {
          for (std::size_t j = 0; j < b; ++j) gx(i, j) += g(i, j) * gm * inv_std[i];
        } else {
          // dx = gamma/(n*std) * (n*g - sum(g) - xhat*sum(g*xhat))
          const double c = gm * inv_std[i] / n;
          for (std::size_t j = 0; j < b; ++j) gx(i, j) += c * (n * g(i, j) - sum_g - xhat(i, j) * sum_gx);
        }
      }
    });
    return y;
  }

  /// Mean over all entries of the logistic loss; targets in {0, 1}.
  Var sigmoid_bce(Var logits, const Tensor& targets) {
    const Tensor& Z = value(logits);
    if (Z.shape() != targets.shape())
      throw ContractViolation("sigmoid_bce: targets " + shape_string(targets.shape()) + " vs logits " +
                              shape_string(Z.shape()));
    double total = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
      const double t = targets[i];
      if (t != 0.0 && t != 1.0) throw ContractViolation("sigmoid_bce: targets must be 0 or 1");
      const double z = Z[i];
      total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    const double count = static_cast<double>(Z.size());
    const Var y = push(Tensor({1}, total / count), nullptr, true);
    record([this, logits, y, count, targets] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(logits)) return;
      const Tensor& Z = value(logits);
      Tensor& gz = grad_ref(logits);
      for (std::size_t i = 0; i < Z.size(); ++i) gz[i] += g[0] * (sigmoid(Z[i]) - targets[i]) / count;
    });
    return y;
  }

  /// Mean over the batch of -log softmax(logits)[label]; logits are classes x batch.
  Var softmax_ce(Var logits, std::span<const int> labels) {
    const Tensor& Z = value(logits);
    require_matrix(Z, "softmax_ce logits");
    const std::size_t c = Z.rows(), b = Z.cols();
    if (labels.size() != b) throw ContractViolation("softmax_ce: label count does not match batch");
    Tensor probs = Tensor::matrix(c, b);
    double total = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] < 0 || static_cast<std::size_t>(labels[j]) >= c)
        throw ContractViolation("softmax_ce: label " + std::to_string(labels[j]) + " outside [0, " +
                                std::to_string(c) + ")");
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < c; ++i) mx = std::max(mx, Z(i, j));
      double se = 0.0;
      for (std::size_t i = 0; i < c; ++i) se += std::exp(Z(i, j) - mx);
      const double lse = mx + std::log(se);
      for (std::size_t i = 0; i < c; ++i) probs(i, j) = std::exp(Z(i, j) - lse);
      total += lse - Z(static_cast<std::size_t>(labels[j]), j);
    }
    const Var y = push(Tensor({1}, total / static_cast<double>(b)), nullptr, true);
    record([this, logits, y, c, b, probs = std::move(probs), labels = std::vector<int>(labels.begin(), labels.end())] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(logits)) return;
      Tensor& gz = grad_ref(logits);
      const double s = g[0] / static_cast<double>(b);
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t i = 0; i < c; ++i)
          gz(i, j) += s * (probs(i, j) - (static_cast<int>(i) == labels[j] ? 1.0 : 0.0));
    });
    return y;
  }

  /// Sum of all entries, as a scalar.
  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    const Var y = push(Tensor({1}, s), nullptr, true);
    record([this, x, y] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(x)) return;
      for (double& v : grad_ref(x).storage()) v += g[0];
    });
    return y;
  }

  /// Σ c_ij x_ij for a fixed coefficient tensor; gives random scalar losses in tests.
  Var weighted_sum(Var x, const Tensor& coeffs) {
    const Tensor& X = value(x);
    if (X.shape() != coeffs.shape()) throw ContractViolation("weighted_sum: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += coeffs[i] * X[i];
    const Var y = push(Tensor({1}, s), nullptr, true);
    record([this, x, y, coeffs] {
      const Tensor& g = nodes_[y.id].grad;
      if (g.empty() || !wants_grad(x)) return;
      Tensor& gx = grad_ref(x);
      for (std::size_t i = 0; i < coeffs.size(); ++i) gx[i] += g[0] * coeffs[i];
    });
    return y;
  }

  /// Reverse sweep from a scalar loss. Each recorded op runs exactly once.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ContractViolation("backward: loss must be a scalar");
    if (backward_done_) throw ContractViolation("backward: tape already consumed");
    backward_done_ = true;
    grad_ref(loss)[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
  };

  Var push(Tensor value, const Tensor* external, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), external, Tensor{}, needs_grad});
    return Var{nodes_.size() - 1};
  }
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  bool wants_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(value(v).shape(), 0.0);
    return n.grad;
  }

  void note_margin(double gap) { min_margin_ = std::min(min_margin_, gap); }

  void note_maxplus_margins(const TropicalView& w, const Tensor& y, const TropicalView* bias,
                            const TropicalProduct& prod) {
    for (std::size_t i = 0; i < w.rows; ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) {
        const double best = prod.values(i, j);
        const std::int32_t win = prod.argmax(i, j);
        for (std::size_t k = 0; k < w.cols; ++k)
          if (w.is_active(i, k) && static_cast<std::int32_t>(k) != win) note_margin(best - (w.value(i, k) + y(k, j)));
        if (bias && bias->is_active(i, 0) && win != ArgmaxRecord::kBias) note_margin(best - bias->value(i, 0));
      }
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  bool backward_done_ = false;
  bool track_margins_ = false;
  double min_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace maxplus
