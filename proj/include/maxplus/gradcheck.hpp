#pragma once

// Central finite differences against Tape::backward over every active
// parameter of a small head. Points closer than `min_margin` to a tie of any
// max-type op are rejected and redrawn.
//
// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "maxplus/autodiff.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/rng.hpp"

namespace maxplus {

struct GradcheckOptions {
  std::size_t batch = 5;
  double step = 1e-6;
  double floor = 1e-3;
  double min_margin = 1e-4;
  std::size_t max_attempts = 50;
  /// Batchnorm on for the variants that carry it.
  bool batchnorm = true;
};

struct GradcheckResult {
  Variant variant = Variant::kRelu;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::string worst_param;
  std::size_t checked = 0;      // active scalar parameters compared
  std::size_t resamples = 0;    // points rejected for being near a tie
  double margin = 0;            // tie margin of the accepted point
};

namespace detail {

inline double head_loss(ModelParams model, const Tensor& x, const Tensor& targets, double* margin) {
  Tape tape;
  tape.track_margins(margin != nullptr);
  const Var in = tape.constant(x);
  const Graph g = forward(tape, model, in, Mode::kTrain);
  const Var loss = tape.sigmoid_bce(g.logits, targets);
  if (margin) *margin = tape.min_margin();
  return tape.value(loss)[0];
}

}  // namespace detail

inline GradcheckResult gradient_check(Variant variant, std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                                      std::uint64_t seed, const GradcheckOptions& o = {}) {
  if (d_in == 0 || d_hidden == 0 || d_out == 0) throw ContractViolation("gradcheck: dims must be positive");
  const std::size_t batch = std::max<std::size_t>(o.batch, o.batchnorm ? 2 : 1);
  Rng rng(seed);
  GradcheckResult r;
  r.variant = variant;

  for (std::size_t attempt = 0;; ++attempt) {
    if (attempt == o.max_attempts)
      throw std::runtime_error("gradcheck: no tie-free point found in " + std::to_string(o.max_attempts) + " draws");
    HeadSpec spec{variant, d_in, d_hidden, d_out, 2, o.batchnorm, rng.next(), true};
    ModelParams model = build_head(spec);
    for (auto& p : model.params)
      for (std::size_t k = 0; k < p.value.size(); ++k)
        if (p.active[k]) p.value[k] += 0.5 * rng.normal();
    Tensor x = Tensor::matrix(d_in, batch);
    for (auto& v : x.storage()) v = rng.normal();
    Tensor y = Tensor::matrix(d_out, batch);
    for (auto& v : y.storage()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;

    double margin = 0;
    detail::head_loss(model, x, y, &margin);
    if (!(margin > o.min_margin)) {
      ++r.resamples;
      continue;
    }
    r.margin = margin;

    ModelParams work = model;
    Tape tape;
    const Var in = tape.constant(x);
    const Graph g = forward(tape, work, in, Mode::kTrain);
    const Var loss = tape.sigmoid_bce(g.logits, y);
    tape.backward(loss);
    const auto grads = collect_grads(tape, g);

    for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
      const Parameter& p = model.params[pi];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        if (!p.active[k]) continue;
        ModelParams plus = model, minus = model;
        plus.params[pi].value[k] += o.step;
        minus.params[pi].value[k] -= o.step;
        const double numeric =
            (detail::head_loss(plus, x, y, nullptr) - detail::head_loss(minus, x, y, nullptr)) / (2.0 * o.step);
        const double analytic = grads[pi][k];
        const double abs_err = std::abs(analytic - numeric);
        const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), o.floor});
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
        if (rel > r.max_rel_error) {
          r.max_rel_error = rel;
          r.worst_param = p.name + "[" + std::to_string(k) + "]";
        }
        ++r.checked;
      }
    }
    return r;
  }
}

}  // namespace maxplus
