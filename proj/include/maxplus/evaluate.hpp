#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maxplus/autodiff.hpp"
#include "maxplus/data.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/metrics.hpp"

namespace maxplus {

struct EvalResult {
  double loss = 0;
  std::optional<double> roc_auc;   // macro over tags (multilabel)
  std::optional<double> pr_auc;    // macro over tags (multilabel)
  std::optional<double> accuracy;  // multiclass
  std::size_t samples = 0;

  /// ROC-AUC for tagging, accuracy for classification.
  std::optional<double> primary() const { return roc_auc ? roc_auc : accuracy; }
};

/// Task loss of `logits` against the batch targets, recorded on the tape.
inline Var task_loss(Tape& tape, Var logits, const Dataset& ds, std::span<const std::size_t> idx) {
  if (ds.task == Task::kMultilabel) return tape.sigmoid_bce(logits, ds.batch_targets(idx));
  const auto labels = ds.batch_labels(idx);
  return tape.softmax_ce(logits, labels);
}

/// Eval-mode loss and metrics over `idx`, evaluated in chunks.
inline EvalResult evaluate(const ModelParams& model, const Dataset& ds, std::span<const std::size_t> idx,
                           std::size_t chunk = 2048) {
  EvalResult r;
  r.samples = idx.size();
  if (idx.empty()) return r;
  Tensor scores = Tensor::matrix(ds.outputs(), idx.size());
  double loss_sum = 0;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
    Tape tape;
    const Var x = tape.constant(ds.batch_features(part));
    const Graph g = forward(tape, const_cast<ModelParams&>(model), x, Mode::kEval);
    loss_sum += tape.value(task_loss(tape, g.logits, ds, part))[0] * static_cast<double>(part.size());
    const Tensor& z = tape.value(g.logits);
    for (std::size_t o = 0; o < z.rows(); ++o)
      for (std::size_t j = 0; j < part.size(); ++j) scores(o, start + j) = z(o, j);
  }
  r.loss = loss_sum / static_cast<double>(idx.size());
  if (ds.task == Task::kMultilabel) {
    const Tensor targets = ds.batch_targets(idx);
    r.roc_auc = macro_roc_auc(scores, targets);
    r.pr_auc = macro_pr_auc(scores, targets);
  } else {
    r.accuracy = accuracy(scores, ds.batch_labels(idx));
  }
  return r;
}

/// Test split when the dataset has one, validation split otherwise.
inline std::span<const std::size_t> evaluation_split(const Dataset& ds) {
  return ds.splits.test.empty() ? std::span<const std::size_t>(ds.splits.val)
                                : std::span<const std::size_t>(ds.splits.test);
}

}  // namespace maxplus
