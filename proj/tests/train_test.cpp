#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "redlab/train.hpp"

using namespace redlab;
using namespace redlab::sim;

namespace {

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

struct Setup {
  SimWorld world;
  Model model;
};

Setup toy(FusionStrategy strategy, double noise = 0.1, bool frozen = false) {
  auto world = SimWorld::create(16, noise,
                                {{"a", Category::general, range(0, 8), 4},
                                 {"b", Category::ocr_chart, range(8, 12), 4}},
                                7);
  Rng rng(3);
  std::vector<EncoderSpec> es{EncoderSpec::random("e0", range(0, 8), 4, 8, 16, rng, frozen),
                              EncoderSpec::random("e1", range(4, 12), 4, 8, 16, rng, frozen),
                              EncoderSpec::random("e2", range(12, 16), 4, 8, 16, rng, frozen)};
  FusionSpec f;
  f.strategy = strategy;
  return {world, make_model(world, es, f, HeadSpec{}, 11)};
}

constexpr FusionStrategy kAllFusions[] = {FusionStrategy::sequence_append, FusionStrategy::channel_concat,
                                          FusionStrategy::shared_mlp, FusionStrategy::cross_attention};

}  // namespace

TEST(Loss, AnalyticValues) {
  RowVector uniform = RowVector::Constant(4, 0.25);
  EXPECT_NEAR(loss(uniform, 2), std::log(4.0), 1e-12);
  RowVector sure = RowVector::Zero(3);
  sure(1) = 1.0;
  EXPECT_EQ(loss(sure, 1), 0.0);
  EXPECT_NEAR(loss(sure, 0), std::log(1e12), 1e-9);
  EXPECT_THROW(loss(uniform, 4), PreconditionError);
  EXPECT_THROW(loss(uniform, -1), PreconditionError);
}

TEST(GradCheck, AllFusionStrategiesPass) {
  for (auto strategy : kAllFusions) {
    auto [world, model] = toy(strategy);
    Rng rng(5);
    auto batch = draw_batch(world, model, 16, 0.3, rng);
    auto r = grad_check(model, world, batch, 1e-3);
    EXPECT_TRUE(r.passed) << to_string(strategy) << " " << r.max_relative_error << " at " << r.worst_parameter;
    EXPECT_GE(r.checked, 100);
  }
}

TEST(GradCheck, SignFlipsAreDetected) {
  struct Case {
    FusionStrategy strategy;
    BackwardFault fault;
  };
  std::vector<Case> cases;
  for (auto s : kAllFusions)
    for (auto f : {BackwardFault::output_layer, BackwardFault::hidden_layer, BackwardFault::pooling,
                   BackwardFault::encoder})
      cases.push_back({s, f});
  cases.push_back({FusionStrategy::shared_mlp, BackwardFault::fusion_mlp});
  cases.push_back({FusionStrategy::cross_attention, BackwardFault::attention_softmax});
  for (const auto& c : cases) {
    auto [world, model] = toy(c.strategy);
    Rng rng(5);
    auto batch = draw_batch(world, model, 16, 0.3, rng);
    GradCheckOptions opt;
    opt.fault = c.fault;
    auto r = grad_check(model, world, batch, 1e-3, opt);
    EXPECT_FALSE(r.passed) << to_string(c.strategy) << " fault " << static_cast<int>(c.fault);
  }
}

TEST(GradCheck, ZeroHeadOnMaskedInputsUsesAbsoluteFloor) {
  auto [world, model] = toy(FusionStrategy::channel_concat);
  for (auto* group : {&model.head_params.hidden_w, &model.head_params.out_w})
    for (auto& w : *group) w.setZero();
  Rng rng(1);
  auto batch = draw_batch(world, model, 8, 0.0, rng);
  for (auto& item : batch) item.active = EncoderSubset::none(3);
  // Only the output biases see a gradient; everything else is exactly zero analytically and
  // numerically, so the floor keeps the ratio finite.
  Gradients g;
  batch_gradient(model, world, batch, g);
  for (const auto& t : tensors(g)) {
    bool output_bias = t.name.find(".out[") != std::string::npos && t.name.back() == 'b';
    if (!output_bias) {
      EXPECT_TRUE(t.value->isZero(0.0)) << t.name;
    }
  }
  auto r = grad_check(model, world, batch, 1e-3);
  EXPECT_TRUE(std::isfinite(r.max_relative_error));
  EXPECT_LT(r.max_absolute_error, 1e-9);
}

TEST(GradCheck, TinyToleranceFails) {
  auto [world, model] = toy(FusionStrategy::channel_concat);
  Rng rng(2);
  auto batch = draw_batch(world, model, 8, 0.3, rng);
  EXPECT_FALSE(grad_check(model, world, batch, 1e-12).passed);
}

TEST(GradCheck, NonFiniteParameterIsNumericalError) {
  auto [world, model] = toy(FusionStrategy::channel_concat);
  model.head_params.out_b[0](0, 0) = std::nan("");
  Rng rng(2);
  auto batch = draw_batch(world, model, 4, 0.0, rng);
  EXPECT_THROW(grad_check(model, world, batch, 1e-3), NumericalError);
}

TEST(RelativeError, AbsoluteFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1e-10, 0.0), 1e-2, 1e-15);
  EXPECT_NEAR(relative_error(2.0, 1.0), 0.5, 1e-15);
}

TEST(Train, SeparableTaskLearned) {
  auto world = SimWorld::create(8, 0.0, {{"sep", Category::general, range(0, 8), 2}}, 4);
  Rng rng(9);
  auto model = make_model(world, {EncoderSpec::random("all", range(0, 8), 4, 8, 8, rng)}, FusionSpec{},
                          HeadSpec{}, 4);
  TrainConfig cfg;
  cfg.encoder_dropout = 0.0;
  cfg.steps = 2000;
  cfg.batch_size = 128;
  auto result = train(model, world, cfg);
  EXPECT_EQ(result.losses.size(), 2000u);
  for (double l : result.losses) ASSERT_TRUE(std::isfinite(l));
  auto acc = evaluate(result.model, world, EncoderSubset::full(1), 5000, 77);
  EXPECT_GE(acc[0], 0.95);
}

TEST(Train, DropoutClonesAreSymmetric) {
  auto world = SimWorld::create(16, 0.0, {{"t", Category::general, range(0, 8), 4}}, 2);
  Rng rng(12);
  auto a = EncoderSpec::random("a", range(0, 8), 4, 8, 16, rng);
  auto b = a;
  b.name = "b";
  auto model = make_model(world, {a, b}, FusionSpec{}, HeadSpec{}, 2);
  TrainConfig cfg;
  cfg.encoder_dropout = 0.5;
  cfg.steps = 3000;
  auto trained = train(model, world, cfg).model;
  auto only_a = evaluate(trained, world, EncoderSubset(1, 2), 5000, 5)[0];
  auto only_b = evaluate(trained, world, EncoderSubset(2, 2), 5000, 5)[0];
  EXPECT_GT(only_a, 0.5);
  EXPECT_NEAR(only_a, only_b, 0.05);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto [world, model] = toy(FusionStrategy::cross_attention);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.steps = 20;
  cfg.train_encoders = true;
  auto result = train(model, world, cfg);
  auto before = tensors(model);
  auto after = tensors(result.model);
  for (std::size_t p = 0; p < before.size(); ++p) EXPECT_EQ(*before[p].value, *after[p].value) << before[p].name;
  // Each entry is the untouched model's loss on that step's batch.
  Rng rng(mix_seed(cfg.seed, stream::train));
  for (int step = 0; step < cfg.steps; ++step) {
    auto batch = draw_batch(world, model, cfg.batch_size, cfg.encoder_dropout, rng);
    EXPECT_EQ(result.losses[step], batch_loss(model, world, batch));
  }
}

TEST(Train, FrozenEncodersAreBitwiseUnchanged) {
  auto [world, model] = toy(FusionStrategy::shared_mlp, 0.1, true);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.train_encoders = true;  // frozen flag still wins
  auto result = train(model, world, cfg);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(result.model.encoders[e].weights, model.encoders[e].weights);
  EXPECT_NE(result.model.head_params.out_w[0], model.head_params.out_w[0]);
}

TEST(Train, UnfrozenEncodersMoveWhenEnabled) {
  auto [world, model] = toy(FusionStrategy::channel_concat, 0.1, false);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.train_encoders = true;
  auto result = train(model, world, cfg);
  EXPECT_NE(result.model.encoders[0].weights, model.encoders[0].weights);
  cfg.train_encoders = false;
  EXPECT_EQ(train(model, world, cfg).model.encoders[0].weights, model.encoders[0].weights);
}

TEST(Train, ValidatesConfig) {
  auto [world, model] = toy(FusionStrategy::channel_concat);
  TrainConfig cfg;
  cfg.encoder_dropout = 1.0;
  EXPECT_THROW(train(model, world, cfg), ConfigError);
  cfg = {};
  cfg.learning_rate = -0.1;
  EXPECT_THROW(train(model, world, cfg), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(train(model, world, cfg), ConfigError);
}

TEST(Train, DivergenceReportsStep) {
  auto [world, model] = toy(FusionStrategy::channel_concat);
  model.head_params.out_w[0](0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.steps = 5;
  try {
    train(model, world, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(TrainEvaluate, BitwiseReproducible) {
  auto [world, model] = toy(FusionStrategy::cross_attention);
  TrainConfig cfg;
  cfg.steps = 100;
  auto r1 = train(model, world, cfg);
  auto r2 = train(model, world, cfg);
  EXPECT_EQ(r1.losses, r2.losses);
  EXPECT_EQ(evaluate(r1.model, world, EncoderSubset(3, 3), 500, 4),
            evaluate(r2.model, world, EncoderSubset(3, 3), 500, 4));
}

TEST(Evaluate, EmptySubsetIsChance) {
  auto [world, model] = toy(FusionStrategy::channel_concat, 0.0);
  TrainConfig cfg;
  cfg.steps = 300;
  auto trained = train(model, world, cfg).model;
  const int samples = 10000;
  auto acc = evaluate(trained, world, EncoderSubset::none(3), samples, 8);
  double sigma = std::sqrt(0.25 * 0.75 / samples);
  for (double a : acc) EXPECT_NEAR(a, 0.25, 3 * sigma);
  EXPECT_THROW(evaluate(trained, world, EncoderSubset::none(3), 0, 8), PreconditionError);
}
