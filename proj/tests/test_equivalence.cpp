#include <gtest/gtest.h>

#include "maxplus/equivalence.hpp"
#include "maxplus/optim.hpp"

using namespace maxplus;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_vector(std::size_t n, Rng& rng) {
  Tensor t({n});
  for (auto& v : t.storage()) v = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST(DiagMp, ZeroIsIdentityAndOffDiagonalInactive) {
  const auto d = diag_mp(Tensor({3}, 0.0));
  const auto id = TropicalMatrix::identity(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(d.at(i, k), id.at(i, k));
  const auto one = diag_mp(Tensor::vector({2.5}));
  EXPECT_EQ(one.at(0, 0), ExtScalar::finite(2.5));
  EXPECT_THROW(diag_mp(std::span<const double>{}), ContractViolation);
}

TEST(DiagMp, ProductAddsEntrywise) {
  Rng rng(1);
  const Tensor v = random_vector(4, rng), x = random_matrix(4, 6, rng, -10, 10);
  const auto p = max_plus_matmul(diag_mp(v), x);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(p.values(i, j), x(i, j) + v[i]);
}

TEST(ReluToMaxPlus, ZeroBiasGivesIdentityAndRelu) {
  Rng rng(2);
  const Tensor a = random_matrix(3, 4, rng);
  const auto blk = relu_to_maxplus(a, Tensor({3}, 0.0));
  EXPECT_EQ(blk.linear, a);
  EXPECT_EQ(blk.weights.active_count(), 3u);
  const Tensor x = random_matrix(4, 5, rng, -10, 10);
  const Tensor got = block_forward(blk, x), ax = matmul(a, x);
  for (std::size_t q = 0; q < got.size(); ++q) EXPECT_EQ(got[q], std::max(ax[q], 0.0));
}

TEST(ReluToMaxPlus, RandomLayerMatchesDirectForm) {
  Rng rng(3);
  const Tensor a = random_matrix(5, 4, rng), b = random_vector(5, rng);
  const Tensor x = random_matrix(4, 100, rng, -10, 10);
  EXPECT_LE(max_abs_diff(block_forward(relu_to_maxplus(a, b), x), relu_layer(a, b, x)), 1e-12);
}

TEST(ReluToMaxPlus, AllNegativeFloorsAtZero) {
  const Tensor a = Tensor::from_rows({{1, 0}, {0, 1}}), b = Tensor::vector({-1, -1});
  const Tensor x = Tensor::from_rows({{-3}, {0.5}});
  const Tensor out = block_forward(relu_to_maxplus(a, b), x);
  EXPECT_EQ(out, Tensor::from_rows({{0}, {0}}));
  EXPECT_THROW(relu_to_maxplus(a, Tensor::vector({1})), ContractViolation);
}

TEST(MaxoutToMaxPlus, SinglePieceZeroBiasIsLinear) {
  Rng rng(4);
  const Tensor a = random_matrix(3, 4, rng);
  const auto blk = maxout_to_maxplus({a}, {Tensor({3}, 0.0)});
  const Tensor x = random_matrix(4, 7, rng, -10, 10);
  EXPECT_EQ(block_forward(blk, x), matmul(a, x));
}

TEST(MaxoutToMaxPlus, TwoPiecesMatchDirectForm) {
  Rng rng(5);
  const std::vector<Tensor> a = {random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  const std::vector<Tensor> b = {random_vector(3, rng), random_vector(3, rng)};
  const auto blk = maxout_to_maxplus(a, b);
  EXPECT_EQ(blk.linear.shape(), (Shape{6, 4}));
  EXPECT_EQ(blk.weights.active_count(), 6u);
  EXPECT_EQ(blk.bias.active_count(), 0u);
  const Tensor x = random_matrix(4, 100, rng, -10, 10);
  EXPECT_LE(max_abs_diff(block_forward(blk, x), maxout_layer(a, b, x)), 1e-12);
}

TEST(MaxoutToMaxPlus, InconsistentShapesThrow) {
  Rng rng(6);
  EXPECT_THROW(maxout_to_maxplus({}, {}), ContractViolation);
  EXPECT_THROW(maxout_to_maxplus({random_matrix(3, 4, rng), random_matrix(2, 4, rng)},
                                 {random_vector(3, rng), random_vector(2, rng)}),
               ContractViolation);
  EXPECT_THROW(maxout_to_maxplus({random_matrix(3, 4, rng)}, {random_vector(2, rng)}), ContractViolation);
}

TEST(Equivalence, RandomizedSuitePassesAndCorruptionIsCaught) {
  EquivalenceOptions o;
  o.trials = 300;
  o.seed = 11;
  const auto s = run_equivalence_suite(o);
  EXPECT_TRUE(s.passed());
  EXPECT_EQ(s.trials, 300u);
  EXPECT_LE(std::max(s.relu_max_dev, s.maxout_max_dev), 1e-12);
  o.corrupt = true;
  EXPECT_FALSE(run_equivalence_suite(o).passed());
}

TEST(HeadConversion, ReluAndMaxoutHeadsKeepTheirForward) {
  Rng rng(7);
  for (Variant v : {Variant::kRelu, Variant::kMaxout}) {
    auto head = build_head(HeadSpec{v, 5, 4, 3, 2, false, 3, false});
    for (auto& p : head.params)
      for (auto& x : p.value.storage()) x = rng.uniform(-1, 1);
    const auto morph = v == Variant::kRelu ? relu_head_to_morph(head) : maxout_head_to_morph(head);
    EXPECT_EQ(morph.spec.variant, Variant::kDenseMorph);
    EXPECT_NO_THROW(morph.validate());
    const Tensor x = random_matrix(5, 20, rng, -10, 10);
    EXPECT_LE(max_abs_diff(predict(head, x), predict(morph, x)), 1e-12) << to_string(v);
  }
  EXPECT_THROW(relu_head_to_morph(build_head(HeadSpec{Variant::kRelu, 3, 2, 1, 2, true, 0, false})), ContractViolation);
}

TEST(HeadConversion, ConvertedModelTrainsOneStep) {
  Rng rng(8);
  for (Variant v : {Variant::kRelu, Variant::kMaxout}) {
    auto morph = v == Variant::kRelu ? relu_head_to_morph(build_head(HeadSpec{v, 5, 4, 3, 2, false, 1, false}))
                                     : maxout_head_to_morph(build_head(HeadSpec{v, 5, 4, 3, 2, false, 1, false}));
    const auto before = morph;
    Tape tape;
    const Var x = tape.constant(random_matrix(5, 6, rng));
    const Graph g = forward(tape, morph, x, Mode::kTrain);
    Tensor t = Tensor::matrix(3, 6);
    for (auto& y : t.storage()) y = rng.uniform() < 0.5;
    tape.backward(tape.sigmoid_bce(g.logits, t));
    auto state = OptimizerState::zeros(morph, OptimizerKind::kAdam);
    adam_step(morph, collect_grads(tape, g), state, 1e-2, 0.0);
    EXPECT_NE(morph.params, before.params);
    EXPECT_EQ(morph.get("morph.weight").active, before.get("morph.weight").active);
  }
}
