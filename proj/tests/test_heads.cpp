#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "maxplus/checkpoint.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/optim.hpp"

using namespace maxplus;
namespace fs = std::filesystem;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

HeadSpec spec(Variant v, std::size_t i, std::size_t h, std::size_t o, bool bn = false, std::uint64_t seed = 7) {
  return HeadSpec{v, i, h, o, 2, bn, seed, false};
}

// Straight-line helpers for the oracles below; row-major loops, no tape.
std::vector<double> affine(const Tensor& w, const Tensor* b, const std::vector<double>& x) {
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < w.cols(); ++k) s += w(i, k) * x[k];
    out[i] = s + (b ? (*b)[i] : 0.0);
  }
  return out;
}

std::vector<double> column(const Tensor& x, std::size_t j) {
  std::vector<double> c(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) c[i] = x(i, j);
  return c;
}

void perturb(ModelParams& m, Rng& rng) {
  for (auto& p : m.params)
    for (auto& v : p.value.storage()) v += 0.5 * rng.normal();
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "maxplus_test_heads";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Census, ReluAtFullScale) {
  const auto m = build_head(spec(Variant::kRelu, 512, 512, 50, true));
  EXPECT_EQ(m.census(), 288306u);
  EXPECT_EQ(512u * 512 + 512, m.get("fc1.weight").active_count() + m.get("fc1.bias").active_count());
  EXPECT_EQ(25650u, m.get("fc2.weight").active_count() + m.get("fc2.bias").active_count());
}

TEST(Census, ClosedFormsForEveryVariant) {
  const std::size_t i = 7, h = 5, o = 3, p = 2;
  EXPECT_EQ(build_head(spec(Variant::kRelu, i, h, o)).census(), i * h + h + h * o + o);
  EXPECT_EQ(build_head(spec(Variant::kZhang, i, h, o)).census(), i * h + h + h * o + o);
  EXPECT_EQ(build_head(spec(Variant::kMaxout, i, h, o)).census(), p * i * h + p * h + h * o + o);
  EXPECT_EQ(build_head(spec(Variant::kDenseMorph, i, h, o)).census(), i * h + h * h + h + h * o + o);
  EXPECT_EQ(build_head(spec(Variant::kSparseMorph, i, h, o)).census(), i * h + p * h + h + h * o + o);
  // BN affine terms are outside the census
  EXPECT_EQ(build_head(spec(Variant::kRelu, i, h, o, true)).census(), build_head(spec(Variant::kRelu, i, h, o)).census());
}

TEST(BuildHead, SparseMorphMaskAtFullScale) {
  const auto m = build_head(spec(Variant::kSparseMorph, 512, 512, 50, true));
  EXPECT_EQ(m.get("morph.weight").active_count(), 1024u);
  EXPECT_EQ(m.get("morph.bias").active_count(), 512u);
  EXPECT_FALSE(m.has("fc1.bias"));
}

TEST(BuildHead, MaxoutFirstLayerIsTwiceAsWide) {
  const auto m = build_head(spec(Variant::kMaxout, 512, 512, 50, true));
  EXPECT_EQ(m.get("fc1.weight").value.shape(), (Shape{1024, 512}));
  EXPECT_EQ(m.get("fc1.bias").value.size(), 1024u);
  EXPECT_EQ(m.get("bn.gamma").value.size(), 1024u);
}

TEST(BuildHead, TopologyPerVariant) {
  const auto zhang = build_head(spec(Variant::kZhang, 6, 4, 3));
  EXPECT_EQ(zhang.get("morph.weight").value.shape(), (Shape{3, 4}));
  EXPECT_FALSE(zhang.has("fc2.weight"));
  const auto dense = build_head(spec(Variant::kDenseMorph, 6, 4, 3));
  EXPECT_EQ(dense.get("morph.weight").active_count(), 16u);
  for (double v : dense.get("morph.weight").value.data()) EXPECT_EQ(v, 0.0);
  for (double v : dense.get("morph.bias").value.data()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(dense.has("bn.gamma"));
}

TEST(BuildHead, RejectsBadSpecs) {
  EXPECT_THROW(build_head(spec(Variant::kRelu, 0, 4, 3)), ContractViolation);
  EXPECT_THROW(build_head(HeadSpec{Variant::kSparseMorph, 4, 1, 3, 2, false, 0, false}), ContractViolation);
  EXPECT_THROW(parse_variant("swish"), ContractViolation);
  EXPECT_EQ(parse_variant("sparse_morph"), Variant::kSparseMorph);
}

TEST(BuildHead, SeedDeterminesEverything) {
  EXPECT_EQ(build_head(spec(Variant::kSparseMorph, 9, 8, 4, true, 3)), build_head(spec(Variant::kSparseMorph, 9, 8, 4, true, 3)));
  EXPECT_NE(build_head(spec(Variant::kSparseMorph, 9, 8, 4, true, 3)), build_head(spec(Variant::kSparseMorph, 9, 8, 4, true, 4)));
}

TEST(SparseInit, SingleEntry) { EXPECT_EQ(sparse_init(1, 1, 0), std::vector<std::uint8_t>{1}); }

TEST(SparseInit, BudgetTooLarge) { EXPECT_THROW(sparse_init(2, 3, 0), ContractViolation); }

TEST(SparseInit, FullScaleBudget) {
  const auto mask = sparse_init(512, 2, 11);
  std::size_t active = 0;
  for (auto a : mask) active += a;
  EXPECT_EQ(active, 1024u);
}

TEST(SparseInit, RowDegreeIsHypergeometric) {
  // 16 of 64 cells drawn, each row holds 8 cells: degree mean 2, variance 16 * 1/8 * 7/8 * 48/63.
  const std::size_t n = 8, seeds = 10000;
  double sum = 0, sumsq = 0;
  std::size_t empty_rows = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto mask = sparse_init(n, 2, s);
    for (std::size_t r = 0; r < n; ++r) {
      double d = 0;
      for (std::size_t c = 0; c < n; ++c) d += mask[r * n + c];
      sum += d;
      sumsq += d * d;
      empty_rows += d == 0;
    }
  }
  const double cnt = static_cast<double>(seeds * n), mean = sum / cnt;
  EXPECT_NEAR(mean, 2.0, 0.05);
  EXPECT_NEAR(sumsq / cnt - mean * mean, 16.0 / 8 * 7 / 8 * 48 / 63, 0.05);
  EXPECT_GT(empty_rows, 0u);  // empty rows are allowed, never resampled by default
}

TEST(SparseInit, EnsureRowNonemptyOption) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto mask = sparse_init(8, 1, rng, true);
    for (std::size_t r = 0; r < 8; ++r) {
      std::size_t d = 0;
      for (std::size_t c = 0; c < 8; ++c) d += mask[r * 8 + c];
      ASSERT_EQ(d, 1u);
    }
  }
}

TEST(Forward, ReluMatchesStraightLineOracle) {
  Rng rng(21);
  auto m = build_head(spec(Variant::kRelu, 6, 5, 3));
  perturb(m, rng);
  const Tensor x = random_matrix(6, 4, rng);
  const Tensor got = predict(m, x);
  const Tensor &w1 = m.get("fc1.weight").value, &b1 = m.get("fc1.bias").value;
  const Tensor &w2 = m.get("fc2.weight").value, &b2 = m.get("fc2.bias").value;
  for (std::size_t j = 0; j < 4; ++j) {
    auto h = affine(w1, &b1, column(x, j));
    for (auto& v : h) v = std::max(v, 0.0);
    const auto z = affine(w2, &b2, h);
    for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(got(o, j), z[o], 1e-12);
  }
}

TEST(Forward, ReluWithBatchNormEvalMatchesOracle) {
  Rng rng(22);
  auto m = build_head(spec(Variant::kRelu, 4, 3, 2, true));
  perturb(m, rng);
  m.bn->running_mean = Tensor::vector({0.5, -0.2, 1.0});
  m.bn->running_var = Tensor::vector({2.0, 0.3, 1.1});
  const Tensor x = random_matrix(4, 3, rng);
  const Tensor got = predict(m, x);
  for (std::size_t j = 0; j < 3; ++j) {
    auto h = affine(m.get("fc1.weight").value, &m.get("fc1.bias").value, column(x, j));
    for (std::size_t i = 0; i < h.size(); ++i) {
      h[i] = (h[i] - m.bn->running_mean[i]) / std::sqrt(m.bn->running_var[i] + 1e-5) * m.get("bn.gamma").value[i] +
             m.get("bn.beta").value[i];
      h[i] = std::max(h[i], 0.0);
    }
    const auto z = affine(m.get("fc2.weight").value, &m.get("fc2.bias").value, h);
    for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(got(o, j), z[o], 1e-12);
  }
}

TEST(Forward, MaxoutMatchesPiecewiseOracle) {
  Rng rng(23);
  auto m = build_head(spec(Variant::kMaxout, 6, 4, 3));
  perturb(m, rng);
  const Tensor x = random_matrix(6, 5, rng);
  const Tensor got = predict(m, x);
  for (std::size_t j = 0; j < 5; ++j) {
    const auto g = affine(m.get("fc1.weight").value, &m.get("fc1.bias").value, column(x, j));
    std::vector<double> h(4);
    for (std::size_t i = 0; i < 4; ++i) h[i] = std::max(g[i], g[i + 4]);  // piece p of unit i sits at row i + p*N
    const auto z = affine(m.get("fc2.weight").value, &m.get("fc2.bias").value, h);
    for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(got(o, j), z[o], 1e-12);
  }
}

TEST(Forward, ZhangEndsInMaxPlusLayer) {
  Rng rng(24);
  auto m = build_head(spec(Variant::kZhang, 5, 4, 3));
  perturb(m, rng);
  const Tensor x = random_matrix(5, 3, rng);
  const Tensor got = predict(m, x);
  const Tensor &w = m.get("morph.weight").value, &b = m.get("morph.bias").value;
  for (std::size_t j = 0; j < 3; ++j) {
    auto h = affine(m.get("fc1.weight").value, &m.get("fc1.bias").value, column(x, j));
    for (auto& v : h) v = std::max(v, 0.0);
    for (std::size_t o = 0; o < 3; ++o) {
      double best = b[o];
      for (std::size_t k = 0; k < 4; ++k) best = std::max(best, w(o, k) + h[k]);
      EXPECT_EQ(got(o, j), best);
    }
  }
}

TEST(Forward, FreshSparseMorphIsFlooredSparseMaxPool) {
  Rng rng(25);
  auto m = build_head(spec(Variant::kSparseMorph, 6, 8, 3));
  const auto& mask = m.get("morph.weight").active;
  const Tensor x = random_matrix(6, 4, rng);
  const Tensor got = predict(m, x);
  for (std::size_t j = 0; j < 4; ++j) {
    const auto y = affine(m.get("fc1.weight").value, nullptr, column(x, j));
    std::vector<double> h(8, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t k = 0; k < 8; ++k)
        if (mask[i * 8 + k]) h[i] = std::max(h[i], y[k]);
    const auto z = affine(m.get("fc2.weight").value, &m.get("fc2.bias").value, h);
    for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(got(o, j), z[o], 1e-12);
  }
}

TEST(Forward, DiagonalDenseMorphReducesToRelu) {
  Rng rng(26);
  auto relu = build_head(spec(Variant::kRelu, 5, 4, 2));
  perturb(relu, rng);
  auto morph = build_head(spec(Variant::kDenseMorph, 5, 4, 2));
  morph.get("fc1.weight") = relu.get("fc1.weight");
  morph.get("fc2.weight") = relu.get("fc2.weight");
  morph.get("fc2.bias") = relu.get("fc2.bias");
  auto& w = morph.get("morph.weight");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      w.active[i * 4 + k] = i == k;
      w.value(i, k) = i == k ? relu.get("fc1.bias").value[i] : 0.0;
    }
  const Tensor x = random_matrix(5, 6, rng);
  EXPECT_LE(max_abs_diff(predict(relu, x), predict(morph, x)), 1e-12);
}

TEST(Forward, ShapeMismatchAndUndefinedRows) {
  auto m = build_head(spec(Variant::kSparseMorph, 4, 3, 2));
  EXPECT_THROW(predict(m, Tensor::matrix(5, 2)), ContractViolation);
  auto& b = m.get("morph.bias");
  std::fill(b.active.begin(), b.active.end(), 0);
  auto& w = m.get("morph.weight");
  std::fill(w.active.begin(), w.active.end(), 0);
  w.active[0] = 1;
  EXPECT_EQ(m.undefined_rows(), (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(m.validate(), ContractViolation);
}

TEST(Masks, InactiveMorphEntriesSurviveTraining) {
  Rng rng(27);
  auto m = build_head(spec(Variant::kSparseMorph, 6, 8, 3, true));
  const auto mask0 = m.get("morph.weight").active;
  const Tensor w0 = m.get("morph.weight").value;
  auto state = OptimizerState::zeros(m, OptimizerKind::kAdam);
  for (int step = 0; step < 20; ++step) {
    Tape tape;
    const Var x = tape.constant(random_matrix(6, 8, rng));
    const Graph g = forward(tape, m, x, Mode::kTrain);
    Tensor t = Tensor::matrix(3, 8);
    for (auto& v : t.storage()) v = rng.uniform() < 0.5;
    tape.backward(tape.sigmoid_bce(g.logits, t));
    adam_step(m, collect_grads(tape, g), state, 1e-2, 1e-4);
  }
  const auto& w = m.get("morph.weight");
  EXPECT_EQ(w.active, mask0);
  bool moved = false;
  for (std::size_t q = 0; q < mask0.size(); ++q) {
    if (!mask0[q]) {
      EXPECT_EQ(w.value[q], w0[q]);
    } else {
      moved |= w.value[q] != w0[q];
    }
  }
  EXPECT_TRUE(moved);
}

TEST(Checkpoint, RoundTripsBitwise) {
  Rng rng(28);
  for (Variant v : kAllVariants) {
    auto m = build_head(spec(v, 5, 4, 3, v != Variant::kDenseMorph, 9));
    perturb(m, rng);
    if (m.bn) m.bn->running_mean[0] = 0.1 + 1e-17;
    auto state = OptimizerState::zeros(m, OptimizerKind::kAdam);
    state.step = 42;
    for (auto& t : state.m) t[0] = rng.normal();
    const auto path = temp_file(to_string(v) + ".bin");
    save_checkpoint(path, m, &state);
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.model, m) << to_string(v);
    ASSERT_TRUE(ck.optimizer.has_value());
    EXPECT_EQ(*ck.optimizer, state);
    const auto again = temp_file(to_string(v) + ".again.bin");
    save_checkpoint(again, ck.model, &*ck.optimizer);
    EXPECT_EQ(slurp(path), slurp(again));
  }
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto m = build_head(spec(Variant::kSparseMorph, 3, 2, 2));
  const auto path = temp_file("ok.bin");
  save_checkpoint(path, m);
  EXPECT_FALSE(load_checkpoint(path).optimizer.has_value());
  const std::string bytes = slurp(path);

  const auto bad = temp_file("bad.bin");
  auto write = [&](const std::string& s) {
    std::ofstream f(bad, std::ios::binary | std::ios::trunc);
    f << s;
  };
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(bad), ParseError);
  write(bytes + "x");
  EXPECT_THROW(load_checkpoint(bad), ParseError);
  write("NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(bad), ParseError);
}
