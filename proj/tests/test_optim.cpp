#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "maxplus/optim.hpp"
#include "maxplus/report.hpp"

using namespace maxplus;

namespace {

ModelParams scalar_model(double w, ParamKind kind = ParamKind::kLinearWeight) {
  ModelParams m;
  m.params.push_back(Parameter{"w", kind, Tensor::vector({w}), {1}});
  return m;
}

std::vector<Tensor> grad_of(double g) { return {Tensor::vector({g})}; }

// Two Gaussian blobs at ±2 along the first axis, separable by a wide margin.
Dataset blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.name = "blobs";
  ds.task = Task::kMulticlass;
  ds.num_classes = 2;
  ds.features = Tensor::matrix(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    ds.labels.push_back(y);
    ds.features(i, 0) = (y ? 2.0 : -2.0) + 0.3 * rng.normal();
    ds.features(i, 1) = rng.normal();
    ds.features(i, 2) = rng.normal();
  }
  ds.splits = make_splits(n, seed, 0.8, 0.2);
  return ds;
}

Dataset small_multilabel(std::uint64_t seed) {
  MaxAffineOptions o;
  o.n = 400;
  o.d = 6;
  o.k_pieces = 2;
  o.tags = 4;
  o.seed = seed;
  return gen_max_affine(o);
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto m = scalar_model(1.5);
  auto s = OptimizerState::zeros(m, OptimizerKind::kAdam);
  for (int i = 0; i < 5; ++i) adam_step(m, grad_of(0.0), s, 0.1, 0.0);
  EXPECT_EQ(m.params[0].value[0], 1.5);
}

TEST(Adam, FirstStepIsLearningRateAfterBiasCorrection) {
  auto m = scalar_model(0.0);
  auto s = OptimizerState::zeros(m, OptimizerKind::kAdam);
  adam_step(m, grad_of(1.0), s, 0.1, 0.0);
  EXPECT_NEAR(m.params[0].value[0], -0.1, 1e-8);
  // a constant gradient keeps m_hat / sqrt(v_hat) at 1
  adam_step(m, grad_of(1.0), s, 0.1, 0.0);
  EXPECT_NEAR(m.params[0].value[0], -0.2, 1e-8);
  EXPECT_EQ(s.step, 2u);
}

TEST(Adam, WeightDecayIsCoupledAndScoped) {
  auto lin = scalar_model(2.0);
  auto s = OptimizerState::zeros(lin, OptimizerKind::kAdam);
  adam_step(lin, grad_of(0.0), s, 0.1, 0.1);
  EXPECT_NEAR(lin.params[0].value[0], 1.9, 1e-7);  // g = 0 + 0.1 * 2 goes through the moments
  EXPECT_NEAR(s.m[0][0], 0.1 * 0.2, 1e-15);

  for (ParamKind k : {ParamKind::kMorphWeight, ParamKind::kMorphBias, ParamKind::kLinearBias, ParamKind::kBnGamma}) {
    auto m = scalar_model(2.0, k);
    auto st = OptimizerState::zeros(m, OptimizerKind::kAdam);
    adam_step(m, grad_of(0.0), st, 0.1, 0.1);
    EXPECT_EQ(m.params[0].value[0], 2.0) << to_string(k);
  }
  auto morph = scalar_model(2.0, ParamKind::kMorphWeight);
  auto st = OptimizerState::zeros(morph, OptimizerKind::kAdam);
  adam_step(morph, grad_of(0.0), st, 0.1, 0.1, DecayScope{true});
  EXPECT_LT(morph.params[0].value[0], 2.0);
}

TEST(Nesterov, ZeroMomentumIsPlainSgd) {
  auto m = scalar_model(1.0);
  auto s = OptimizerState::zeros(m, OptimizerKind::kSgdNesterov);
  sgd_nesterov_step(m, grad_of(0.5), s, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(m.params[0].value[0], 1.0 - 0.05);
  sgd_nesterov_step(m, grad_of(-2.0), s, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(m.params[0].value[0], 0.95 + 0.2);
}

TEST(Nesterov, TwoStepsOnQuadratic) {
  // f(x) = x^2 / 2, x0 = 1, lr 0.1, mu 0.9:
  //   g1 = 1,    buf = 1,                 x1 = 1 - 0.1 * (1 + 0.9)           = 0.81
  //   g2 = 0.81, buf = 0.9 + 0.81 = 1.71,  x2 = 0.81 - 0.1 * (0.81 + 0.9*1.71) = 0.5751
  auto m = scalar_model(1.0);
  auto s = OptimizerState::zeros(m, OptimizerKind::kSgdNesterov);
  sgd_nesterov_step(m, grad_of(m.params[0].value[0]), s, 0.1, 0.9, 0.0);
  EXPECT_NEAR(m.params[0].value[0], 0.81, 1e-15);
  sgd_nesterov_step(m, grad_of(m.params[0].value[0]), s, 0.1, 0.9, 0.0);
  EXPECT_NEAR(m.params[0].value[0], 0.5751, 1e-15);
  EXPECT_THROW(sgd_nesterov_step(m, grad_of(1.0), s, 0.1, 1.0, 0.0), ContractViolation);
}

TEST(Nesterov, UpdateIndependentOfMagnitudeWithoutDecay) {
  auto a = scalar_model(1.0), b = scalar_model(1000.0);
  auto sa = OptimizerState::zeros(a, OptimizerKind::kSgdNesterov), sb = sa;
  sgd_nesterov_step(a, grad_of(0.3), sa, 0.1, 0.9, 0.0);
  sgd_nesterov_step(b, grad_of(0.3), sb, 0.1, 0.9, 0.0);
  EXPECT_NEAR(1.0 - a.params[0].value[0], 1000.0 - b.params[0].value[0], 1e-12);
}

TEST(Optimizers, MaskedEntriesCarryNoStateAndNoUpdate) {
  ModelParams m;
  m.params.push_back(Parameter{"morph.weight", ParamKind::kMorphWeight, Tensor::vector({1, 2, 3}), {1, 0, 1}});
  const std::vector<Tensor> g = {Tensor::vector({0.5, 7.0, -0.5})};
  for (OptimizerKind k : {OptimizerKind::kAdam, OptimizerKind::kSgdNesterov}) {
    auto p = m;
    auto s = OptimizerState::zeros(p, k);
    for (int i = 0; i < 10; ++i) {
      if (k == OptimizerKind::kAdam) adam_step(p, g, s, 0.1, 0.1, DecayScope{true});
      else sgd_nesterov_step(p, g, s, 0.1, 0.9, 0.1, DecayScope{true});
    }
    EXPECT_EQ(p.params[0].value[1], 2.0);
    EXPECT_EQ(s.m[0][1], 0.0);
    if (k == OptimizerKind::kAdam) {
      EXPECT_EQ(s.v[0][1], 0.0);
    }
    EXPECT_NE(p.params[0].value[0], 1.0);
  }
}

TEST(Optimizers, NonFiniteGradientAborts) {
  auto m = scalar_model(1.0);
  auto s = OptimizerState::zeros(m, OptimizerKind::kAdam);
  EXPECT_THROW(adam_step(m, grad_of(std::nan("")), s, 0.1, 0.0), TrainingDiverged);
  auto n = OptimizerState::zeros(m, OptimizerKind::kSgdNesterov);
  EXPECT_THROW(sgd_nesterov_step(m, grad_of(INFINITY), n, 0.1, 0.9, 0.0), TrainingDiverged);
  EXPECT_EQ(m.params[0].value[0], 1.0);
  // a NaN behind an inactive entry is ignored
  m.params[0].active[0] = 0;
  EXPECT_NO_THROW(adam_step(m, grad_of(std::nan("")), s, 0.1, 0.0));
  EXPECT_THROW(adam_step(m, grad_of(0.0), n, 0.1, 0.0), ContractViolation);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.phases = {};
  EXPECT_THROW(c.validate(), ContractViolation);
  c.phases = {{OptimizerKind::kAdam, 1e-3, 0}};
  EXPECT_THROW(c.validate(), ContractViolation);
  c.phases = {{OptimizerKind::kAdam, -1, 1}};
  EXPECT_THROW(c.validate(), ContractViolation);
  const auto mtat = mtat_schedule();
  ASSERT_EQ(mtat.phases.size(), 2u);
  EXPECT_EQ(mtat.phases[0].epochs + mtat.phases[1].epochs, 100u);
  EXPECT_EQ(mtat.phases[1].optimizer, OptimizerKind::kSgdNesterov);
}

TEST(Train, ZeroLearningRateReturnsInitialization) {
  const auto ds = small_multilabel(1);
  const auto init = build_head(HeadSpec{Variant::kSparseMorph, 6, 8, 4, 2, false, 2, false});
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 0.0, 1}};
  const auto r = train(init, ds, c);
  EXPECT_EQ(r.best.params, init.params);
  EXPECT_EQ(r.curves.size(), 1u);
}

TEST(Train, SeparableToyReachesFullTrainAccuracy) {
  const auto ds = blobs(200, 3);
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-2, 50}};
  c.batch_size = 32;
  c.seed = 4;
  const auto r = train(build_head(HeadSpec{Variant::kRelu, 3, 8, 2, 2, true, 5, false}), ds, c);
  const auto acc = evaluate(r.best, ds, ds.splits.train).accuracy;
  ASSERT_TRUE(acc.has_value());
  EXPECT_EQ(*acc, 1.0);
}

TEST(Train, SeedFixedRunsAreBitwiseIdentical) {
  const auto ds = small_multilabel(2);
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-2, 3}};
  c.batch_size = 32;
  c.seed = 9;
  const auto spec = HeadSpec{Variant::kSparseMorph, 6, 8, 4, 2, true, 1, false};
  const auto a = train(build_head(spec), ds, c), b = train(build_head(spec), ds, c);
  EXPECT_EQ(curves_csv(a.curves), curves_csv(b.curves));
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.best_state, b.best_state);
}

TEST(Train, PhasesSwitchOptimizerAndCarryParameters) {
  const auto ds = small_multilabel(3);
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-2, 2}, {OptimizerKind::kSgdNesterov, 1e-2, 2}};
  c.batch_size = 64;
  const auto r = train(build_head(HeadSpec{Variant::kRelu, 6, 8, 4, 2, true, 1, false}), ds, c);
  ASSERT_EQ(r.curves.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(r.curves[e].epoch, e + 1);
    EXPECT_EQ(r.curves[e].phase, e < 2 ? 0u : 1u);
    EXPECT_EQ(r.curves[e].optimizer, e < 2 ? OptimizerKind::kAdam : OptimizerKind::kSgdNesterov);
  }
  EXPECT_LT(r.curves.back().train_loss, r.curves.front().train_loss);
  // the selected state belongs to the phase of the selected epoch
  ASSERT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.best_state.kind, r.best_epoch > 2 ? OptimizerKind::kSgdNesterov : OptimizerKind::kAdam);
}

TEST(Train, SelectsLowestValidationLoss) {
  const auto ds = small_multilabel(4);
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 3e-2, 6}};
  c.batch_size = 32;
  const auto r = train(build_head(HeadSpec{Variant::kMaxout, 6, 8, 4, 2, true, 1, false}), ds, c);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.curves) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.best_val_loss, best);
  EXPECT_EQ(r.curves[r.best_epoch - 1].val_loss, best);
  EXPECT_DOUBLE_EQ(evaluate(r.best, ds, ds.splits.val).loss, best);
}

TEST(Train, DivergenceKeepsBestSoFar) {
  const auto ds = small_multilabel(5);
  TrainConfig c;
  c.phases = {{OptimizerKind::kSgdNesterov, 1e300, 3}};
  c.weight_decay = 0;
  const auto init = build_head(HeadSpec{Variant::kRelu, 6, 8, 4, 2, false, 1, false});
  const auto r = train(init, ds, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.abort_reason.empty());
  for (const auto& p : r.best.params) EXPECT_TRUE(p.value.all_finite());
  EXPECT_TRUE(std::isfinite(evaluate(r.best, ds, ds.splits.val).loss));
}

TEST(Train, MaxStepsStopsEarly) {
  const auto ds = small_multilabel(6);
  TrainConfig c;
  c.phases = {{OptimizerKind::kAdam, 1e-3, 5}};
  c.batch_size = 32;
  c.max_steps = 3;
  const auto r = train(build_head(HeadSpec{Variant::kRelu, 6, 8, 4, 2, true, 1, false}), ds, c);
  EXPECT_EQ(r.steps, 3u);
  EXPECT_EQ(r.curves.size(), 1u);
}

TEST(Train, RejectsMismatchedDataset) {
  const auto ds = small_multilabel(7);
  TrainConfig c;
  EXPECT_THROW(train(build_head(HeadSpec{Variant::kRelu, 5, 8, 4, 2, true, 1, false}), ds, c), ContractViolation);
}
