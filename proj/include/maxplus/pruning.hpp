#pragma once

// One-shot unstructured magnitude pruning with per-variant ratio
// equalization, so that every head variant ends up with (nearly) the same
// number of remaining parameters as the relu head at the same (r1, r2).
//
// The last linear layer is pruned at r2, every other prunable layer of the
// head at r1 (adjusted per variant). Biases are never pruned. Pruned linear
// weights are zeroed; pruned max-plus weights are deactivated (-inf).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maxplus/data.hpp"
#include "maxplus/evaluate.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/report.hpp"

namespace maxplus {

/// floor(ratio * count) with a guard against ratios such as 0.8 landing a
/// hair below an exact product.
inline std::size_t pruned_count(double ratio, std::size_t count) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + 1e-9));
}

namespace detail {

inline void require_ratio(double r, const char* what) {
  if (!(r >= 0.0 && r < 1.0)) throw ContractViolation(std::string(what) + " must lie in [0, 1), got " + format_double(r));
}

// Deactivates entries until `target_pruned` of them are off. Entries already
// off count toward the target; the rest go by ascending |value|, ties to the
// lowest index. Masks only ever lose entries.
inline std::vector<std::uint8_t> prune_to_target(std::span<const double> values, std::vector<std::uint8_t> mask,
                                                 std::size_t target_pruned) {
  const std::size_t n = values.size();
  std::size_t already = 0;
  for (auto a : mask) already += a == 0;
  if (target_pruned <= already) return mask;
  std::vector<std::size_t> order;
  order.reserve(n - already);
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) order.push_back(i);
  const std::size_t need = target_pruned - already;
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(need - 1), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const double x = std::abs(values[a]), y = std::abs(values[b]);
                     return x < y || (x == y && a < b);
                   });
  for (std::size_t k = 0; k < need; ++k) mask[order[k]] = 0;
  return mask;
}

}  // namespace detail

/// Prunes floor(ratio * count) + extra weights of smallest magnitude. Entries
/// already pruned in `prior` stay pruned and count toward that total.
inline std::vector<std::uint8_t> l1_prune_linear(std::span<const double> weights, double ratio, std::size_t extra = 0,
                                                 std::span<const std::uint8_t> prior = {}) {
  detail::require_ratio(ratio, "l1_prune_linear: ratio");
  const std::size_t target = pruned_count(ratio, weights.size()) + extra;
  if (target >= weights.size())
    throw ContractViolation("l1_prune_linear: would prune all " + std::to_string(weights.size()) + " weights");
  std::vector<std::uint8_t> mask = prior.empty() ? std::vector<std::uint8_t>(weights.size(), 1)
                                                 : std::vector<std::uint8_t>(prior.begin(), prior.end());
  return detail::prune_to_target(weights, std::move(mask), target);
}

/// Deactivates floor(ratio * active) of the currently active max-plus
/// weights, smallest |value| first.
inline std::vector<std::uint8_t> l1_prune_morph(const TropicalMatrix& w, double ratio) {
  detail::require_ratio(ratio, "l1_prune_morph: ratio");
  const std::size_t active = w.active_count();
  const std::size_t inactive = w.size() - active;
  return detail::prune_to_target(w.values(), std::vector<std::uint8_t>(w.mask().begin(), w.mask().end()),
                                 inactive + pruned_count(ratio, active));
}

struct HeadDims {
  std::size_t d_in = 0, d_hidden = 0, d_out = 0, pooling = 2;
};

inline HeadDims dims_of(const HeadSpec& s) { return {s.d_in, s.d_hidden, s.d_out, s.pooling}; }

struct LayerPrune {
  std::string param;  // parameter name in ModelParams
  ParamKind kind = ParamKind::kLinearWeight;
  std::size_t count = 0;  // structural size the ratio applies to
  double ratio = 0;
  std::size_t extra = 0;

  std::size_t pruned() const { return pruned_count(ratio, count) + extra; }
  std::size_t remaining() const { return count - pruned(); }
};

struct PrunePlan {
  Variant variant = Variant::kRelu;
  double r1 = 0, r2 = 0;
  double r1_adjusted = 0;  // ratio actually used on the r1 layers
  HeadDims dims;
  std::vector<LayerPrune> layers;
  std::size_t untouched = 0;  // biases and any layer left alone

  /// Remaining parameters implied by the plan alone.
  std::size_t closed_form_remaining() const {
    std::size_t n = untouched;
    for (const auto& l : layers) n += l.remaining();
    return n;
  }
};

/// Per-variant equalization:
///   relu / zhang  first layer at r1, last at r2
///   maxout        first layer at 1-(1-r1)/P plus (P-1)*h extra weights (the extra biases)
///   dense_morph   first linear and max-plus layer both at 1-(1-r1)*i/(i+h)
///                 (= 1-(1-r1)/2 for square heads)
///   sparse_morph  first layer at r1 plus P*h extra weights; max-plus layer untouched
/// Adjustments and extras only apply when r1 > 0, so a (0, 0) plan is the identity.
inline PrunePlan build_prune_plan(Variant variant, double r1, double r2, const HeadDims& d) {
  detail::require_ratio(r1, "r1");
  detail::require_ratio(r2, "r2");
  if (d.d_in == 0 || d.d_hidden == 0 || d.d_out == 0 || d.pooling == 0)
    throw ContractViolation("build_prune_plan: dimensions must be positive");
  const std::size_t i = d.d_in, h = d.d_hidden, o = d.d_out, p = d.pooling;
  PrunePlan plan{variant, r1, r2, r1, d, {}, 0};
  const bool equalize = r1 > 0.0;

  switch (variant) {
    case Variant::kRelu:
      plan.layers = {{"fc1.weight", ParamKind::kLinearWeight, i * h, r1, 0},
                     {"fc2.weight", ParamKind::kLinearWeight, h * o, r2, 0}};
      plan.untouched = h + o;
      break;
    case Variant::kZhang:
      plan.layers = {{"fc1.weight", ParamKind::kLinearWeight, i * h, r1, 0},
                     {"morph.weight", ParamKind::kMorphWeight, h * o, r2, 0}};
      plan.untouched = h + o;
      break;
    case Variant::kMaxout:
      if (equalize) plan.r1_adjusted = 1.0 - (1.0 - r1) / static_cast<double>(p);
      plan.layers = {{"fc1.weight", ParamKind::kLinearWeight, p * i * h, plan.r1_adjusted, equalize ? (p - 1) * h : 0},
                     {"fc2.weight", ParamKind::kLinearWeight, h * o, r2, 0}};
      plan.untouched = p * h + o;
      break;
    case Variant::kDenseMorph:
      if (equalize) plan.r1_adjusted = 1.0 - (1.0 - r1) * static_cast<double>(i) / static_cast<double>(i + h);
      plan.layers = {{"fc1.weight", ParamKind::kLinearWeight, i * h, plan.r1_adjusted, 0},
                     {"morph.weight", ParamKind::kMorphWeight, h * h, plan.r1_adjusted, 0},
                     {"fc2.weight", ParamKind::kLinearWeight, h * o, r2, 0}};
      plan.untouched = h + o;
      break;
    case Variant::kSparseMorph:
      plan.layers = {{"fc1.weight", ParamKind::kLinearWeight, i * h, r1, equalize ? p * h : 0},
                     {"fc2.weight", ParamKind::kLinearWeight, h * o, r2, 0}};
      plan.untouched = p * h + h + o;
      break;
  }
  if (plan.r1_adjusted >= 1.0) throw ContractViolation("build_prune_plan: adjusted ratio reaches 1");
  for (const auto& l : plan.layers)
    if (l.pruned() >= l.count)
      throw ContractViolation("build_prune_plan: plan would empty " + l.param + " (" + std::to_string(l.count) +
                              " weights)");
  return plan;
}

/// Applies the plan's masks. Linear weights that get pruned are zeroed.
inline ModelParams apply_plan(const ModelParams& model, const PrunePlan& plan) {
  if (model.spec.variant != plan.variant) throw ContractViolation("apply_plan: plan is for a different variant");
  ModelParams out = model;
  for (const auto& l : plan.layers) {
    Parameter& p = out.get(l.param);
    if (p.value.size() != l.count)
      throw ContractViolation("apply_plan: " + l.param + " has " + std::to_string(p.value.size()) +
                              " entries, plan expects " + std::to_string(l.count));
    p.active = detail::prune_to_target(p.value.data(), p.active, l.pruned());
    if (p.kind == ParamKind::kLinearWeight)
      for (std::size_t k = 0; k < p.active.size(); ++k)
        if (!p.active[k]) p.value[k] = 0.0;
  }
  return out;
}

/// Prunes, evaluates on the test split (validation if there is none) and
/// reports the exact remaining-parameter census next to the plan's closed form.
inline RunReport prune_and_eval(const ModelParams& model, const PrunePlan& plan, const Dataset& ds) {
  ModelParams pruned = apply_plan(model, plan);
  RunReport r;
  r.kind = "prune";
  r.dataset = ds.name;
  r.variant = model.spec.variant;
  r.seed = model.spec.seed;
  r.d_in = model.spec.d_in;
  r.d_hidden = model.spec.d_hidden;
  r.d_out = model.spec.d_out;
  r.pooling = model.spec.pooling;
  r.split = ds.splits.test.empty() ? "val" : "test";
  r.params_total = model.census();
  r.params_remaining = pruned.census();
  r.params_closed_form = plan.closed_form_remaining();
  r.r1 = plan.r1;
  r.r2 = plan.r2;
  const auto bad = pruned.undefined_rows();
  if (!bad.empty()) {
    r.degenerate = true;
    auto& bias = pruned.get("morph.bias");
    for (auto row : bad) bias.active[row] = 1;
  }
  r.metrics = evaluate(pruned, ds, evaluation_split(ds));
  return r;
}

}  // namespace maxplus
