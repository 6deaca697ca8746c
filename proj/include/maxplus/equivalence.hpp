#pragma once

// Exact rewrites of ReLU and maxout layers as max-plus blocks:
//
//   max(Ax + b, 0)           = diag_mp(b) ⊞ (Ax) ∨ 0
//   max_p (A_p x + b_p)      = [diag_mp(b_1) … diag_mp(b_P)] ⊞ ([A_1; …; A_P] x)
//
// Both sides perform the same floating-point additions, so the match is exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maxplus/heads.hpp"
#include "maxplus/rng.hpp"
#include "maxplus/tensor.hpp"
#include "maxplus/tropical.hpp"

namespace maxplus {

/// Unbiased linear map followed by a max-plus layer with bias.
struct MaxPlusBlock {
  Tensor linear;           // m x k
  TropicalMatrix weights;  // n x m
  TropicalMatrix bias;     // n x 1, possibly all inactive
};

/// Max-plus diagonal matrix: v on the diagonal, -inf elsewhere.
inline TropicalMatrix diag_mp(std::span<const double> v) {
  if (v.empty()) throw ContractViolation("diag_mp: empty vector");
  auto m = TropicalMatrix::bottom(v.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m.set(i, i, v[i]);
  return m;
}
inline TropicalMatrix diag_mp(const Tensor& v) { return diag_mp(v.data()); }

/// Biased ReLU layer -> unbiased linear + diagonal max-plus layer with zero bias.
inline MaxPlusBlock relu_to_maxplus(const Tensor& a, const Tensor& b) {
  require_matrix(a, "relu_to_maxplus weight");
  if (b.size() != a.rows()) throw ContractViolation("relu_to_maxplus: bias length does not match rows");
  return {a, diag_mp(b), TropicalMatrix(a.rows(), 1, 0.0)};
}

/// Maxout layer with P pieces -> stacked linear + concatenated diagonal
/// max-plus layer without bias.
inline MaxPlusBlock maxout_to_maxplus(const std::vector<Tensor>& a_pieces, const std::vector<Tensor>& b_pieces) {
  const std::size_t pool = a_pieces.size();
  if (pool == 0 || b_pieces.size() != pool) throw ContractViolation("maxout_to_maxplus: need P >= 1 matching pieces");
  require_matrix(a_pieces[0], "maxout piece");
  const std::size_t n = a_pieces[0].rows(), k = a_pieces[0].cols();
  Tensor stacked = Tensor::matrix(pool * n, k);
  auto w = TropicalMatrix::bottom(n, pool * n);
  for (std::size_t p = 0; p < pool; ++p) {
    const Tensor& a = a_pieces[p];
    if (a.rank() != 2 || a.rows() != n || a.cols() != k || b_pieces[p].size() != n)
      throw ContractViolation("maxout_to_maxplus: piece " + std::to_string(p) + " has inconsistent shape");
    std::copy(a.data().begin(), a.data().end(), stacked.data().begin() + static_cast<std::ptrdiff_t>(p * n * k));
    for (std::size_t i = 0; i < n; ++i) w.set(i, p * n + i, b_pieces[p][i]);
  }
  return {std::move(stacked), std::move(w), TropicalMatrix::bottom(n, 1)};
}

/// Plain matrix product, accumulated in the same order as the tape's linear op.
inline Tensor matmul(const Tensor& a, const Tensor& x) {
  require_matrix(a, "matmul lhs");
  require_matrix(x, "matmul rhs");
  if (a.cols() != x.rows()) throw ContractViolation("matmul: inner dimensions disagree");
  Tensor out = Tensor::matrix(a.rows(), x.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += a(i, k) * x(k, j);
  return out;
}

/// W ⊞ (A x) ∨ w0. Rows that come out bottom are a contract violation.
inline Tensor block_forward(const MaxPlusBlock& blk, const Tensor& x) {
  const auto p = max_plus_matmul(blk.weights, matmul(blk.linear, x), blk.bias);
  if (std::find(p.bottom.begin(), p.bottom.end(), 1) != p.bottom.end())
    throw ContractViolation("block_forward: undefined (bottom) output");
  return p.values;
}

/// max(Ax + b, 0), evaluated directly.
inline Tensor relu_layer(const Tensor& a, const Tensor& b, const Tensor& x) {
  Tensor out = matmul(a, x);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = std::max(out(i, j) + b[i], 0.0);
  return out;
}

/// max_p (A_p x + b_p), evaluated directly.
inline Tensor maxout_layer(const std::vector<Tensor>& a_pieces, const std::vector<Tensor>& b_pieces, const Tensor& x) {
  Tensor out;
  for (std::size_t p = 0; p < a_pieces.size(); ++p) {
    Tensor g = matmul(a_pieces[p], x);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += b_pieces[p][i];
    if (p == 0) {
      out = std::move(g);
    } else {
      for (std::size_t q = 0; q < out.size(); ++q) out[q] = std::max(out[q], g[q]);
    }
  }
  return out;
}

/// A bias-free relu head rewritten as a dense_morph-topology model whose
/// max-plus layer is diag_mp(fc1.bias) with zero bias. Forward-identical.
inline ModelParams relu_head_to_morph(const ModelParams& relu) {
  if (relu.spec.variant != Variant::kRelu || relu.spec.batchnorm)
    throw ContractViolation("relu_head_to_morph: needs a relu head without batchnorm");
  ModelParams m;
  m.spec = relu.spec;
  m.spec.variant = Variant::kDenseMorph;
  const auto blk = relu_to_maxplus(relu.get("fc1.weight").value, relu.get("fc1.bias").value);
  const std::size_t h = relu.spec.d_hidden;
  m.params.push_back(relu.get("fc1.weight"));
  m.params.push_back(Parameter{"morph.weight", ParamKind::kMorphWeight,
                               Tensor::matrix(h, h, std::vector<double>(blk.weights.values().begin(), blk.weights.values().end())),
                               std::vector<std::uint8_t>(blk.weights.mask().begin(), blk.weights.mask().end())});
  m.params.push_back(Parameter{"morph.bias", ParamKind::kMorphBias, Tensor({h}, 0.0), std::vector<std::uint8_t>(h, 1)});
  m.params.push_back(relu.get("fc2.weight"));
  m.params.push_back(relu.get("fc2.bias"));
  return m;
}

/// A maxout head (no batchnorm) rewritten with a concatenated-diagonal,
/// unbiased max-plus layer.
inline ModelParams maxout_head_to_morph(const ModelParams& maxout) {
  if (maxout.spec.variant != Variant::kMaxout || maxout.spec.batchnorm)
    throw ContractViolation("maxout_head_to_morph: needs a maxout head without batchnorm");
  const std::size_t h = maxout.spec.d_hidden, p = maxout.spec.pooling;
  const Tensor& bias = maxout.get("fc1.bias").value;
  auto w = TropicalMatrix::bottom(h, p * h);
  for (std::size_t q = 0; q < p; ++q)
    for (std::size_t i = 0; i < h; ++i) w.set(i, q * h + i, bias[q * h + i]);
  ModelParams m;
  m.spec = maxout.spec;
  m.spec.variant = Variant::kDenseMorph;
  m.params.push_back(maxout.get("fc1.weight"));
  m.params.push_back(Parameter{"morph.weight", ParamKind::kMorphWeight,
                               Tensor::matrix(h, p * h, std::vector<double>(w.values().begin(), w.values().end())),
                               std::vector<std::uint8_t>(w.mask().begin(), w.mask().end())});
  m.params.push_back(Parameter{"morph.bias", ParamKind::kMorphBias, Tensor({h}, 0.0), std::vector<std::uint8_t>(h, 0)});
  m.params.push_back(maxout.get("fc2.weight"));
  m.params.push_back(maxout.get("fc2.bias"));
  return m;
}

struct EquivalenceOptions {
  std::size_t trials = 1000;
  std::size_t max_in = 16, max_out = 16, max_pool = 4;
  std::size_t inputs_per_trial = 8;
  double input_range = 10.0;
  double tolerance = 1e-12;
  std::uint64_t seed = 0;
  /// Negative control: perturbs one converted weight per trial.
  bool corrupt = false;
};

struct EquivalenceSummary {
  std::size_t trials = 0;
  std::size_t relu_failures = 0, maxout_failures = 0;
  double relu_max_dev = 0, maxout_max_dev = 0;

  bool passed() const { return relu_failures == 0 && maxout_failures == 0; }
};

/// Randomized check of both rewrites against the direct layer definitions.
inline EquivalenceSummary run_equivalence_suite(const EquivalenceOptions& o) {
  if (o.max_in == 0 || o.max_out == 0 || o.max_pool == 0) throw ContractViolation("equivalence: dims must be positive");
  Rng rng(o.seed);
  EquivalenceSummary s;
  auto random_matrix = [&](std::size_t r, std::size_t c, double range) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.storage()) v = rng.uniform(-range, range);
    return t;
  };
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::size_t k = 1 + rng.index(o.max_in), m = 1 + rng.index(o.max_out), pool = 1 + rng.index(o.max_pool);
    const Tensor x = random_matrix(k, o.inputs_per_trial, o.input_range);

    const Tensor a = random_matrix(m, k, 1.0);
    const Tensor b = Tensor({m}, random_matrix(m, 1, 1.0).storage());
    auto relu_blk = relu_to_maxplus(a, b);
    if (o.corrupt) relu_blk.weights.set(0, 0, relu_blk.weights.value(0, 0) + 1.0);
    const double dr = max_abs_diff(block_forward(relu_blk, x), relu_layer(a, b, x));
    s.relu_max_dev = std::max(s.relu_max_dev, dr);
    s.relu_failures += !(dr <= o.tolerance);

    std::vector<Tensor> ap, bp;
    for (std::size_t p = 0; p < pool; ++p) {
      ap.push_back(random_matrix(m, k, 1.0));
      bp.push_back(Tensor({m}, random_matrix(m, 1, 1.0).storage()));
    }
    auto mo_blk = maxout_to_maxplus(ap, bp);
    if (o.corrupt) mo_blk.weights.set(0, 0, mo_blk.weights.value(0, 0) + 1.0);
    const double dm = max_abs_diff(block_forward(mo_blk, x), maxout_layer(ap, bp, x));
    s.maxout_max_dev = std::max(s.maxout_max_dev, dm);
    s.maxout_failures += !(dm <= o.tolerance);
    ++s.trials;
  }
  return s;
}

}  // namespace maxplus
