#include <catch2/catch_amalgamated.hpp>

#include "corrxfer/commands.hpp"
#include "corrxfer/dynamics.hpp"
#include "oracles.hpp"

using namespace corrxfer;

namespace {

EnvConfig small_env(std::uint64_t seed) {
  EnvConfig cfg;
  cfg.seed = seed;
  cfg.frame_size = 16;
  cfg.points_to_win = 2;
  cfg.max_episode_steps = 300;
  return cfg;
}

/// memory whose transitions never change state (constant dynamics)
ExperienceMemory constant_memory(int n, std::uint64_t seed) {
  EnvConfig cfg = small_env(seed);
  MiniPong env(cfg);
  const State s = env.reset();
  ExperienceMemory m(static_cast<std::size_t>(n));
  Rng rng = make_rng(seed);
  for (int i = 0; i < n; ++i)
    m.push({s, action_from_id(uniform_int(rng, 0, kNumActions - 1)), 0.f, s, false});
  return m;
}

}  // namespace

TEST_CASE("empty memory is rejected") {
  ExperienceMemory m(4);
  ModelConfig cfg;
  REQUIRE_THROWS_AS(train_model(m, cfg, 1), std::invalid_argument);
}

TEST_CASE("constant dynamics are fit to below 1e-3 within 5 epochs") {
  const ExperienceMemory m = constant_memory(512, 3);
  ModelConfig cfg;
  cfg.learning_rate = 0.01;  // trivial task: large steps reach the exact fixpoint fast
  cfg.epochs = 5;
  ModelTrainLog log;
  train_model(m, cfg, 4, &log);
  REQUIRE(log.epoch_loss.size() == 5);
  REQUIRE(log.epoch_loss.back() <= 1e-3);
  // loss is an absolute error: non-negative at every epoch
  for (double l : log.epoch_loss) REQUIRE(l >= 0.0);
}

TEST_CASE("memories smaller than one batch use the whole memory per step") {
  const ExperienceMemory m = constant_memory(5, 7);
  ModelConfig cfg;
  cfg.batch_size = 16;  // larger than the memory
  cfg.epochs = 2;
  ModelTrainLog log;
  train_model(m, cfg, 8, &log);
  REQUIRE(log.epoch_loss.size() == 2);  // one whole-memory batch per epoch
}

TEST_CASE("predictions are deterministic and clamped to [0,1]") {
  const ExperienceMemory m = constant_memory(8, 9);
  ModelConfig cfg;
  cfg.epochs = 1;
  EnvironmentModel model = train_model(m, cfg, 10);
  // force extreme outputs to exercise the clamp
  for (auto& p : model.net.params()) p *= 50.f;
  const Tensor<float> a = model.predict(m[0].s, Action::Up);
  const Tensor<float> b = model.predict(m[0].s, Action::Up);
  REQUIRE(a.data == b.data);
  for (float v : a.data) {
    REQUIRE(v >= 0.f);
    REQUIRE(v <= 1.f);
  }
  REQUIRE(a.shape == state_tensor<float>(m[0].s).shape);
}

TEST_CASE("injected actions change the prediction of a trained model") {
  const ExperienceMemory m = collect_random_memory(TransformKind::Identity, small_env(11), 400, 11);
  ModelConfig cfg;
  cfg.epochs = 2;
  const EnvironmentModel model = train_model(m, cfg, 12);
  const Tensor<float> up = model.predict(m[0].s, Action::Up);
  const Tensor<float> down = model.predict(m[0].s, Action::Down);
  float diff = 0.f;
  for (std::size_t i = 0; i < up.numel(); ++i) diff = std::max(diff, std::abs(up.data[i] - down.data[i]));
  REQUIRE(diff > 1e-6f);
}

TEST_CASE("held-out one-step error is small after training on the environment") {
  const ExperienceMemory m = collect_random_memory(TransformKind::Identity, small_env(13), 1200, 13);
  const std::size_t split = m.size() - m.size() / 10;  // last 10% held out
  ExperienceMemory train(split);
  for (std::size_t i = 0; i < split; ++i) {
    const Transition& t = m[i];
    train.push(Transition{t.s, t.a, t.r, t.s_next, t.terminal});
  }
  ModelConfig cfg;
  cfg.epochs = 6;
  const EnvironmentModel model = train_model(train, cfg, 14);
  const double err = model_holdout_error(model, m, split, m.size());
  REQUIRE(err <= 0.05);
}
