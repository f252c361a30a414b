#include <catch2/catch_amalgamated.hpp>

#include "corrxfer/transfer.hpp"
#include "oracles.hpp"

using namespace corrxfer;

namespace {

EnvConfig tiny_env(std::uint64_t seed) {
  EnvConfig cfg;
  cfg.seed = seed;
  cfg.frame_size = 8;
  cfg.points_to_win = 1;
  cfg.max_episode_steps = 150;
  return cfg;
}

CorrespondenceFunction identity_correspondence(int hw) {
  ArchitectureSpec a;
  a.name = "rotation-generator";
  a.in_channels = kStateChannels;
  a.in_h = a.in_w = hw;
  a.layers = {{LayerKind::Rotation}};
  return CorrespondenceFunction{Approximator<float>(a)};  // angle 0: identity
}

DqnConfig tiny_dqn() {
  DqnConfig d;
  d.total_steps = 4000;
  d.memory_size = 200;
  d.batch_size = 8;
  d.target_sync = 100;
  d.q_preset = "desk-q";
  return d;
}

}  // namespace

TEST_CASE("transformed Q composes exactly") {
  const int hw = 8;
  auto q = Approximator<float>::init(preset("desk-q", hw), 3);
  const CorrespondenceFunction corr = identity_correspondence(hw);
  TransferredQ tq{&q, &corr};
  MiniPong env(tiny_env(5));
  State s = env.reset();
  for (int i = 0; i < 10 && !env.terminal(); ++i) {
    const Tensor<float> via_transfer = transformed_q(tq, s);
    const Tensor<float> direct = q.eval(state_tensor<float>(corr.map_state(s)), Mode::Eval);
    REQUIRE(via_transfer.data == direct.data);  // identity map: also equals Q_S(s)
    REQUIRE(via_transfer.data == q.eval(state_tensor<float>(s), Mode::Eval).data);
    s = env.step(Action::NoOp).state;
  }
}

TEST_CASE("play_with_transfer reproduces the source agent under identity pipeline") {
  const int hw = 8;
  auto q = Approximator<float>::init(preset("desk-q", hw), 7);
  const CorrespondenceFunction corr = identity_correspondence(hw);
  TransferredQ tq{&q, &corr};
  const EnvConfig cfg = tiny_env(9);
  const auto transferred = play_with_transfer(TransformKind::Identity, cfg, tq, 4, 11);
  const auto direct = play_games(TransformKind::Identity, cfg, greedy_policy(q), 4, 11);
  REQUIRE(transferred == direct);
  for (double r : transferred) {
    REQUIRE(r <= cfg.points_to_win);
    REQUIRE(r >= -cfg.points_to_win);
  }
  // deterministic per seed
  REQUIRE(play_with_transfer(TransformKind::Identity, cfg, tq, 4, 11) == transferred);
}

TEST_CASE("moving average over the last 20 games") {
  detail::MovingAverage20 avg;
  SECTION("constant rewards average to the constant") {
    for (int i = 0; i < 50; ++i) REQUIRE(avg.push(1.0) == Catch::Approx(1.0));
  }
  SECTION("windows shorter than 20 average everything so far") {
    REQUIRE(avg.push(1.0) == Catch::Approx(1.0));
    REQUIRE(avg.push(0.0) == Catch::Approx(0.5));
    REQUIRE(avg.push(2.0) == Catch::Approx(1.0));
  }
  SECTION("window slides after 20 games") {
    detail::MovingAverage20 m;
    double last = 0;
    for (int i = 0; i < 21; ++i) last = m.push(i < 1 ? 100.0 : 0.0);
    REQUIRE(last == Catch::Approx(0.0));  // the 100 dropped out of the window
  }
}

TEST_CASE("fine-tuning keeps the correspondence frozen and logs every game") {
  const EnvConfig cfg = tiny_env(13);
  auto q = Approximator<float>::init(preset("desk-q", 8), 15);
  const CorrespondenceFunction corr = identity_correspondence(8);
  const auto snapshot = corr.g_t.params();
  const auto log = finetune_with_transfer(TransformKind::Identity, cfg, q, corr, tiny_dqn(), 5,
                                          "transfer_rotation", 17);
  REQUIRE(corr.g_t.params() == snapshot);
  REQUIRE(log.size() == 5);
  for (std::size_t i = 0; i < log.size(); ++i) {
    REQUIRE(log[i].game == static_cast<long>(i));
    REQUIRE(log[i].agent_tag == "transfer_rotation");
    REQUIRE(log[i].reward <= cfg.points_to_win);
    REQUIRE(log[i].reward >= -cfg.points_to_win);
  }
}

TEST_CASE("naive reuse coincides with identity-correspondence fine-tuning on identity target") {
  const EnvConfig cfg = tiny_env(19);
  auto q = Approximator<float>::init(preset("desk-q", 8), 21);
  const CorrespondenceFunction corr = identity_correspondence(8);
  const auto a = finetune_with_transfer(TransformKind::Identity, cfg, q, corr, tiny_dqn(), 4,
                                        "transfer_rotation", 23);
  const auto b = naive_transfer_baseline(TransformKind::Identity, cfg, q, tiny_dqn(), 4, 23);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].reward == b[i].reward);
    REQUIRE(a[i].moving_avg_20 == b[i].moving_avg_20);
    REQUIRE(b[i].agent_tag == "naive_q_reuse");
  }
}

TEST_CASE("scratch baseline trains from fresh weights") {
  const EnvConfig cfg = tiny_env(25);
  const auto log = scratch_baseline(TransformKind::Rotate90, cfg, tiny_dqn(), 3, 27);
  REQUIRE(log.size() == 3);
  for (const auto& r : log) REQUIRE(r.agent_tag == "scratch");
  // deterministic per seed
  const auto again = scratch_baseline(TransformKind::Rotate90, cfg, tiny_dqn(), 3, 27);
  for (std::size_t i = 0; i < log.size(); ++i) REQUIRE(log[i].reward == again[i].reward);
}
