#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "corrxfer/correspondence.hpp"
#include "corrxfer/dqn.hpp"

// Playing and fine-tuning on the target task with a frozen correspondence:
// Q_T(s, a) = Q_S(G_T(s), a).

namespace corrxfer {

struct TransferredQ {
  const Approximator<float>* q_s = nullptr;
  const CorrespondenceFunction* corr = nullptr;

  /// The 6 action values of the transformed Q-function at a target state.
  Tensor<float> values(const State& s) const {
    const Tensor<float> mapped = corr->g_t.eval(state_tensor<float>(s), Mode::Eval);
    return q_s->eval(mapped, Mode::Eval);
  }
};

inline Tensor<float> transformed_q(const TransferredQ& tq, const State& s) { return tq.values(s); }

inline Policy transferred_policy(const TransferredQ& tq) {
  return [&tq](const State& s) {
    const Tensor<float> v = tq.values(s);
    return action_from_id(argmax_action(std::span<const float>(v.ptr(), kNumActions)));
  };
}

/// Greedy play with the transformed Q-function; per-game rewards.
inline std::vector<double> play_with_transfer(TransformKind target_kind, const EnvConfig& cfg,
                                              const TransferredQ& tq, int n_games,
                                              std::uint64_t seed) {
  return play_games(target_kind, cfg, transferred_policy(tq), n_games, seed);
}

// -- fine-tuning ----------------------------------------------------------------

struct GameLogRow {
  long game = 0;
  double reward = 0.0;
  double moving_avg_20 = 0.0;
  std::string agent_tag;
};

namespace detail {

/// Moving average over the last 20 games; shorter windows at the start
/// average every game so far.
class MovingAverage20 {
 public:
  double push(double reward) {
    window_.push_back(reward);
    sum_ += reward;
    if (window_.size() > 20) {
      sum_ -= window_.front();
      window_.pop_front();
    }
    return sum_ / static_cast<double>(window_.size());
  }

 private:
  std::deque<double> window_;
  double sum_ = 0.0;
};

}  // namespace detail

/// DQN on the target task where every observed state first passes through a
/// state mapper before reaching the Q network (identity mapper trains from
/// scratch / reuses Q naively). Replay starts empty and stores mapped states;
/// the mapper stays frozen throughout. Runs until `n_games` games finish.
inline std::vector<GameLogRow> finetune_dqn_games(
    Environment& env, Approximator<float>& q, const DqnConfig& cfg, long n_games,
    const std::function<State(const State&)>& map_state, const std::string& agent_tag,
    std::uint64_t seed) {
  cfg.validate();
  Approximator<float> q_target = q;
  ExperienceMemory memory(static_cast<std::size_t>(cfg.memory_size));
  OptimizerConfig oc;
  oc.algo = opt_algo_from_string(cfg.optimizer);
  oc.lr = cfg.learning_rate;
  OptimizerState<float> opt(oc, q.param_count());
  Rng act_rng = make_rng(seed, 2);
  Rng sample_rng = make_rng(seed, 3);

  std::vector<GameLogRow> log;
  detail::MovingAverage20 avg;
  State s = map_state(env.reset());
  double game_reward = 0.0;
  long game = 0;
  for (long step = 0; game < n_games; ++step) {
    const double eps = cfg.eps.at(step, cfg.total_steps);
    const Tensor<float> qa = q.eval(state_tensor<float>(s), Mode::Eval);
    const Action a = action_from_id(
        epsilon_greedy(std::span<const float>(qa.ptr(), kNumActions), eps, act_rng));
    const StepResult res = env.step(a);
    const State s2 = map_state(res.state);
    memory.push({s, a, res.reward, s2, res.terminal});
    if (memory.size() >= static_cast<std::size_t>(cfg.batch_size))
      dqn_td_step(q, q_target, memory.sample(static_cast<std::size_t>(cfg.batch_size), sample_rng),
                  cfg.gamma, opt);
    if ((step + 1) % cfg.target_sync == 0) copy_params(q, q_target);
    game_reward += res.reward;
    if (res.terminal) {
      log.push_back({game, game_reward, avg.push(game_reward), agent_tag});
      ++game;
      game_reward = 0.0;
      s = map_state(env.reset());
    } else {
      s = s2;
    }
  }
  return log;
}

/// Transfer fine-tuning: states map through the frozen G_T before entering Q.
inline std::vector<GameLogRow> finetune_with_transfer(TransformKind target_kind,
                                                      const EnvConfig& env_cfg,
                                                      const Approximator<float>& q_s,
                                                      const CorrespondenceFunction& corr,
                                                      const DqnConfig& cfg, long n_games,
                                                      const std::string& agent_tag,
                                                      std::uint64_t seed) {
  const std::vector<float> corr_snapshot = corr.g_t.params();
  TransformedEnv env(target_kind, env_cfg);
  Approximator<float> q = q_s;  // fine-tune a copy; the source checkpoint stays intact
  auto mapper = [&corr](const State& s) { return corr.map_state(s); };
  auto log = finetune_dqn_games(env, q, cfg, n_games, mapper, agent_tag, seed);
  if (corr.g_t.params() != corr_snapshot)
    throw std::logic_error("finetune_with_transfer: correspondence was modified");
  return log;
}

/// Baseline: fresh Q trained on raw target states.
inline std::vector<GameLogRow> scratch_baseline(TransformKind target_kind, const EnvConfig& env_cfg,
                                                const DqnConfig& cfg, long n_games,
                                                std::uint64_t seed) {
  TransformedEnv env(target_kind, env_cfg);
  Approximator<float> q = Approximator<float>::init(preset(cfg.q_preset, env_cfg.frame_size),
                                                    derive_seed(seed, 1));
  auto identity = [](const State& s) { return s; };
  return finetune_dqn_games(env, q, cfg, n_games, identity, "scratch", seed);
}

/// Baseline: source Q reused on raw target states (no correspondence).
inline std::vector<GameLogRow> naive_transfer_baseline(TransformKind target_kind,
                                                       const EnvConfig& env_cfg,
                                                       const Approximator<float>& q_s,
                                                       const DqnConfig& cfg, long n_games,
                                                       std::uint64_t seed) {
  TransformedEnv env(target_kind, env_cfg);
  Approximator<float> q = q_s;
  auto identity = [](const State& s) { return s; };
  return finetune_dqn_games(env, q, cfg, n_games, identity, "naive_q_reuse", seed);
}

}  // namespace corrxfer
