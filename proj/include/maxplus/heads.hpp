#pragma once

// Classification heads built from linear, batchnorm and max-plus layers.
//
//   relu         fc1(+b) -> [bn] -> relu      -> fc2(+b)
//   maxout       fc1(+b, P*h rows) -> [bn] -> group max over P -> fc2(+b)
//   zhang        fc1(+b) -> [bn] -> relu      -> max-plus(h -> out, +w0)
//   dense_morph  fc1      -> [bn] -> max-plus(h -> h, all active, +w0) -> fc2(+b)
//   sparse_morph fc1      -> [bn] -> max-plus(h -> h, P*h active,  +w0) -> fc2(+b)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maxplus/autodiff.hpp"
#include "maxplus/rng.hpp"
#include "maxplus/tensor.hpp"

namespace maxplus {

enum class Variant { kRelu, kMaxout, kZhang, kDenseMorph, kSparseMorph };

inline constexpr Variant kAllVariants[] = {Variant::kRelu, Variant::kMaxout, Variant::kZhang, Variant::kDenseMorph,
                                           Variant::kSparseMorph};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kRelu: return "relu";
    case Variant::kMaxout: return "maxout";
    case Variant::kZhang: return "zhang";
    case Variant::kDenseMorph: return "dense-morph";
    case Variant::kSparseMorph: return "sparse-morph";
  }
  return "?";
}

/// Accepts both dash and underscore spellings.
inline Variant parse_variant(std::string_view s) {
  std::string t(s);
  std::replace(t.begin(), t.end(), '_', '-');
  for (auto v : kAllVariants)
    if (to_string(v) == t) return v;
  throw ContractViolation("unknown head variant '" + std::string(s) +
                          "' (expected relu, maxout, zhang, dense-morph, sparse-morph)");
}

struct HeadSpec {
  Variant variant = Variant::kSparseMorph;
  std::size_t d_in = 0, d_hidden = 0, d_out = 0;
  std::size_t pooling = 2;
  bool batchnorm = true;
  std::uint64_t seed = 0;
  /// Resample the sparse mask until no row is empty. Off by default: rows
  /// without active weights are legal, the bias defines their output.
  bool ensure_row_nonempty = false;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

enum class ParamKind { kLinearWeight, kLinearBias, kMorphWeight, kMorphBias, kBnGamma, kBnBeta };

inline std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::kLinearWeight: return "linear_weight";
    case ParamKind::kLinearBias: return "linear_bias";
    case ParamKind::kMorphWeight: return "morph_weight";
    case ParamKind::kMorphBias: return "morph_bias";
    case ParamKind::kBnGamma: return "bn_gamma";
    case ParamKind::kBnBeta: return "bn_beta";
  }
  return "?";
}

inline ParamKind parse_param_kind(std::string_view s) {
  for (auto k : {ParamKind::kLinearWeight, ParamKind::kLinearBias, ParamKind::kMorphWeight, ParamKind::kMorphBias,
                 ParamKind::kBnGamma, ParamKind::kBnBeta})
    if (to_string(k) == s) return k;
  throw ContractViolation("unknown parameter kind '" + std::string(s) + "'");
}

/// One named parameter tensor with its mask. For morphological weights the
/// mask is the activity mask (0 = -inf); for linear weights it is the pruning
/// mask (0 = pruned, value held at zero). Biases and BN stay all-active.
struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor value;
  std::vector<std::uint8_t> active;

  bool is_morph() const { return kind == ParamKind::kMorphWeight || kind == ParamKind::kMorphBias; }
  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(active.begin(), active.end(), [](auto a) { return a != 0; }));
  }
  friend bool operator==(const Parameter&, const Parameter&) = default;
};

struct ModelParams {
  HeadSpec spec;
  std::vector<Parameter> params;
  std::optional<BatchNormStats> bn;

  bool has(std::string_view name) const {
    return std::any_of(params.begin(), params.end(), [&](const Parameter& p) { return p.name == name; });
  }
  Parameter& get(std::string_view name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw ContractViolation("model has no parameter '" + std::string(name) + "'");
  }
  const Parameter& get(std::string_view name) const { return const_cast<ModelParams*>(this)->get(name); }

  /// Active linear and morphological entries. BatchNorm affine terms are not
  /// counted, matching how head sizes are reported for pruning comparisons.
  std::size_t census() const {
    std::size_t n = 0;
    for (const auto& p : params)
      if (p.kind != ParamKind::kBnGamma && p.kind != ParamKind::kBnBeta) n += p.active_count();
    return n;
  }

  /// Rows of a max-plus layer with no active weight and an inactive bias
  /// would produce bottom; such models are rejected here, never at forward.
  std::vector<std::size_t> undefined_rows() const {
    std::vector<std::size_t> rows;
    if (!has("morph.weight")) return rows;
    const auto& w = get("morph.weight");
    const auto& b = get("morph.bias");
    const std::size_t r = w.value.rows(), c = w.value.cols();
    for (std::size_t i = 0; i < r; ++i) {
      bool any = b.active[i] != 0;
      for (std::size_t k = 0; k < c && !any; ++k) any = w.active[i * c + k] != 0;
      if (!any) rows.push_back(i);
    }
    return rows;
  }
  void validate() const {
    const auto rows = undefined_rows();
    if (!rows.empty())
      throw ContractViolation("model has " + std::to_string(rows.size()) + " max-plus row(s) with undefined output (first: " +
                              std::to_string(rows.front()) + ")");
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    const bool bn_eq = a.bn.has_value() == b.bn.has_value() &&
                       (!a.bn || (a.bn->running_mean == b.bn->running_mean && a.bn->running_var == b.bn->running_var &&
                                  a.bn->momentum == b.bn->momentum && a.bn->eps == b.bn->eps));
    return a.spec == b.spec && a.params == b.params && bn_eq;
  }
};

/// Closed-form parameter census for a freshly built head.
inline std::size_t expected_census(const HeadSpec& s) {
  const std::size_t i = s.d_in, h = s.d_hidden, o = s.d_out, p = s.pooling;
  switch (s.variant) {
    case Variant::kRelu:
    case Variant::kZhang: return i * h + h + h * o + o;
    case Variant::kMaxout: return p * i * h + p * h + h * o + o;
    case Variant::kDenseMorph: return i * h + h * h + h + h * o + o;
    case Variant::kSparseMorph: return i * h + p * h + h + h * o + o;
  }
  return 0;
}

/// Activity mask for an n x n morphological layer: exactly P*n positions
/// drawn uniformly without replacement, so row degrees vary around P.
inline std::vector<std::uint8_t> sparse_init(std::size_t n_out, std::size_t pooling, Rng& rng,
                                             bool ensure_row_nonempty = false) {
  if (n_out == 0 || pooling == 0) throw ContractViolation("sparse_init: n_out and P must be positive");
  const std::size_t cells = n_out * n_out, budget = pooling * n_out;
  if (budget > cells)
    throw ContractViolation("sparse_init: budget P*n_out = " + std::to_string(budget) + " exceeds " +
                            std::to_string(cells) + " entries");
  for (;;) {
    std::vector<std::uint8_t> mask(cells, 0);
    for (auto idx : rng.sample_without_replacement(cells, budget)) mask[idx] = 1;
    if (!ensure_row_nonempty) return mask;
    bool ok = true;
    for (std::size_t r = 0; r < n_out && ok; ++r)
      ok = std::any_of(mask.begin() + r * n_out, mask.begin() + (r + 1) * n_out, [](auto a) { return a != 0; });
    if (ok) return mask;
  }
}

inline std::vector<std::uint8_t> sparse_init(std::size_t n_out, std::size_t pooling, std::uint64_t seed) {
  Rng rng(seed);
  return sparse_init(n_out, pooling, rng);
}

namespace detail {

inline Parameter dense_param(std::string name, ParamKind kind, Tensor value) {
  const auto n = value.size();
  return Parameter{std::move(name), kind, std::move(value), std::vector<std::uint8_t>(n, 1)};
}

// Uniform in ±1/sqrt(fan_in).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

inline ModelParams build_head(const HeadSpec& spec) {
  if (spec.d_in == 0 || spec.d_hidden == 0 || spec.d_out == 0 || spec.pooling == 0)
    throw ContractViolation("build_head: dimensions and pooling must be positive");
  const std::size_t i = spec.d_in, h = spec.d_hidden, o = spec.d_out, p = spec.pooling;
  ModelParams m;
  m.spec = spec;
  Rng root(spec.seed);
  Rng fc1_rng = root.fork(1), fc2_rng = root.fork(2), mask_rng = root.fork(3);
  using detail::dense_param;
  using detail::uniform_init;

  const bool morph_mid = spec.variant == Variant::kDenseMorph || spec.variant == Variant::kSparseMorph;
  const std::size_t fc1_rows = spec.variant == Variant::kMaxout ? p * h : h;

  m.params.push_back(dense_param("fc1.weight", ParamKind::kLinearWeight, uniform_init({fc1_rows, i}, i, fc1_rng)));
  if (!morph_mid)
    m.params.push_back(dense_param("fc1.bias", ParamKind::kLinearBias, uniform_init({fc1_rows}, i, fc1_rng)));
  if (spec.batchnorm) {
    m.params.push_back(dense_param("bn.gamma", ParamKind::kBnGamma, Tensor({fc1_rows}, 1.0)));
    m.params.push_back(dense_param("bn.beta", ParamKind::kBnBeta, Tensor({fc1_rows}, 0.0)));
    m.bn = BatchNormStats::make(fc1_rows);
  }

  if (morph_mid) {
    std::vector<std::uint8_t> mask(h * h, 1);
    if (spec.variant == Variant::kSparseMorph) {
      if (p * h > h * h)
        throw ContractViolation("build_head: sparse budget P*d_hidden exceeds the d_hidden x d_hidden layer");
      mask = sparse_init(h, p, mask_rng, spec.ensure_row_nonempty);
    }
    m.params.push_back(Parameter{"morph.weight", ParamKind::kMorphWeight, Tensor::matrix(h, h, 0.0), std::move(mask)});
    m.params.push_back(dense_param("morph.bias", ParamKind::kMorphBias, Tensor({h}, 0.0)));
    m.params.push_back(dense_param("fc2.weight", ParamKind::kLinearWeight, uniform_init({o, h}, h, fc2_rng)));
    m.params.push_back(dense_param("fc2.bias", ParamKind::kLinearBias, uniform_init({o}, h, fc2_rng)));
  } else if (spec.variant == Variant::kZhang) {
    m.params.push_back(dense_param("morph.weight", ParamKind::kMorphWeight, Tensor::matrix(o, h, 0.0)));
    m.params.push_back(dense_param("morph.bias", ParamKind::kMorphBias, Tensor({o}, 0.0)));
  } else {
    m.params.push_back(dense_param("fc2.weight", ParamKind::kLinearWeight, uniform_init({o, h}, h, fc2_rng)));
    m.params.push_back(dense_param("fc2.bias", ParamKind::kLinearBias, uniform_init({o}, h, fc2_rng)));
  }

  if (m.census() != expected_census(spec))
    throw std::logic_error("build_head: census " + std::to_string(m.census()) + " != closed form " +
                           std::to_string(expected_census(spec)));
  return m;
}

/// Tape handles for one forward pass: the parameter leaves (same order as
/// ModelParams::params) and the logits.
struct Graph {
  std::vector<Var> params;
  Var logits;
};

/// Records the head's forward pass on `tape`. Train mode updates BN running
/// statistics in `model`.
inline Graph forward(Tape& tape, ModelParams& model, Var x, Mode mode) {
  const HeadSpec& s = model.spec;
  const Tensor& X = tape.value(x);
  if (X.rank() != 2 || X.rows() != s.d_in)
    throw ContractViolation("forward: input " + shape_string(X.shape()) + " does not have " + std::to_string(s.d_in) +
                            " feature rows");
  Graph g;
  g.params.reserve(model.params.size());
  for (const auto& p : model.params) g.params.push_back(tape.parameter(p.value));
  auto var = [&](std::string_view name) {
    for (std::size_t k = 0; k < model.params.size(); ++k)
      if (model.params[k].name == name) return g.params[k];
    throw ContractViolation("model has no parameter '" + std::string(name) + "'");
  };

  const bool morph_mid = s.variant == Variant::kDenseMorph || s.variant == Variant::kSparseMorph;
  Var h = morph_mid ? tape.linear(var("fc1.weight"), x) : tape.linear(var("fc1.weight"), x, var("fc1.bias"));
  if (s.batchnorm) h = tape.batchnorm(h, var("bn.gamma"), var("bn.beta"), *model.bn, mode);

  switch (s.variant) {
    case Variant::kRelu: h = tape.relu(h); break;
    case Variant::kMaxout: h = tape.group_max(h, s.pooling); break;
    case Variant::kZhang: h = tape.relu(h); break;
    case Variant::kDenseMorph:
    case Variant::kSparseMorph: {
      const auto& w = model.get("morph.weight");
      const auto& b = model.get("morph.bias");
      h = tape.maxplus(var("morph.weight"), w.active, h, var("morph.bias"), b.active);
      break;
    }
  }
  if (s.variant == Variant::kZhang) {
    const auto& w = model.get("morph.weight");
    const auto& b = model.get("morph.bias");
    g.logits = tape.maxplus(var("morph.weight"), w.active, h, var("morph.bias"), b.active);
  } else {
    g.logits = tape.linear(var("fc2.weight"), h, var("fc2.bias"));
  }
  return g;
}

/// Eval-mode logits for a features x batch input; the model is not modified.
inline Tensor predict(const ModelParams& model, const Tensor& x) {
  ModelParams& m = const_cast<ModelParams&>(model);  // eval mode never writes BN statistics
  Tape tape;
  const Var in = tape.constant(x);
  return tape.value(forward(tape, m, in, Mode::kEval).logits);
}

/// Gradients of every parameter after tape.backward(), in model order.
inline std::vector<Tensor> collect_grads(const Tape& tape, const Graph& g) {
  std::vector<Tensor> out;
  out.reserve(g.params.size());
  for (auto v : g.params) out.push_back(tape.grad(v));
  return out;
}

}  // namespace maxplus
