#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "corrxfer/approximator.hpp"
#include "corrxfer/envsuite.hpp"
#include "corrxfer/optimizer.hpp"
#include "corrxfer/replay.hpp"

namespace corrxfer {

// -- action selection ------------------------------------------------------------

/// argmax with ties broken by the lowest action id.
template <typename T>
int argmax_action(std::span<const T> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename T>
int epsilon_greedy(std::span<const T> values, double eps, Rng& rng) {
  if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("epsilon must be in [0,1]");
  if (eps > 0.0 && uniform_real(rng) < eps)
    return uniform_int(rng, 0, static_cast<int>(values.size()) - 1);
  return argmax_action(values);
}

// -- tabular Q-learning -------------------------------------------------------------

struct TabularQ {
  int n_states = 0, n_actions = 0;
  std::vector<double> q;  // row-major (state, action)

  TabularQ() = default;
  TabularQ(int ns, int na) : n_states(ns), n_actions(na), q(static_cast<std::size_t>(ns) * na, 0.0) {}
  double& at(int s, int a) { return q[static_cast<std::size_t>(s) * n_actions + a]; }
  double at(int s, int a) const { return q[static_cast<std::size_t>(s) * n_actions + a]; }
  std::span<const double> row(int s) const { return {q.data() + static_cast<std::size_t>(s) * n_actions,
                                                     static_cast<std::size_t>(n_actions)}; }
};

struct TabularTransition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool terminal = false;
};

/// One temporal-difference update:
///   Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a'))
/// with the bootstrap dropped on terminal transitions.
inline void td_update(TabularQ& q, const TabularTransition& t, double alpha, double gamma) {
  if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("alpha must be in (0,1)");
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
  if (t.s < 0 || t.s >= q.n_states || t.a < 0 || t.a >= q.n_actions || t.s_next < 0 ||
      t.s_next >= q.n_states)
    throw std::invalid_argument("td_update: unknown state/action id");
  double target = t.r;
  if (!t.terminal) {
    double best = q.at(t.s_next, 0);
    for (int a = 1; a < q.n_actions; ++a) best = std::max(best, q.at(t.s_next, a));
    target += gamma * best;
  }
  q.at(t.s, t.a) = (1.0 - alpha) * q.at(t.s, t.a) + alpha * target;
}

// -- explicit small MDPs ---------------------------------------------------------------

struct MdpOutcome {
  double prob = 1.0;
  int next = 0;
  double reward = 0.0;
  bool terminal = false;
};

/// Transition/reward tables for MDPs small enough to solve exactly.
struct ExplicitMdp {
  int n_states = 0, n_actions = 0;
  std::vector<std::vector<std::vector<MdpOutcome>>> outcomes;  // [s][a] -> distribution

  void validate() const {
    if (n_states <= 0 || n_states > 100 || n_actions <= 0)
      throw std::invalid_argument("mdp: bad table sizes");
    if (static_cast<int>(outcomes.size()) != n_states) throw std::invalid_argument("mdp: bad rows");
    for (const auto& row : outcomes) {
      if (static_cast<int>(row.size()) != n_actions) throw std::invalid_argument("mdp: bad cols");
      for (const auto& dist : row) {
        double p = 0.0;
        for (const auto& o : dist) {
          if (o.next < 0 || o.next >= n_states) throw std::invalid_argument("mdp: bad next state");
          p += o.prob;
        }
        if (dist.empty() || std::abs(p - 1.0) > 1e-9)
          throw std::invalid_argument("mdp: outcome probabilities must sum to 1");
      }
    }
  }

  const MdpOutcome& sample(int s, int a, Rng& rng) const {
    const auto& dist = outcomes[s][a];
    double u = uniform_real(rng), acc = 0.0;
    for (const auto& o : dist) {
      acc += o.prob;
      if (u <= acc) return o;
    }
    return dist.back();
  }
};

struct TabularConfig {
  double alpha = 0.1;            // used when polynomial_alpha is off
  bool polynomial_alpha = true;  // alpha(s,a) = min(0.5, visits^-omega)
  double omega = 0.8;
  double gamma = 0.9;
  double epsilon = 1.0;  // off-policy learning; full exploration covers every pair
  // Stochastic MDPs converge slowly under decaying step sizes; 10M steps push
  // max |Q - Q*| below 0.05 on 10-state/4-action tables in a few seconds.
  long steps = 10000000;
  std::uint64_t seed = 1;
};

/// Q-learning on an explicit MDP with epsilon-greedy exploration. Episodes
/// restart from a uniformly random state after a terminal transition.
inline TabularQ tabular_q_learning(const ExplicitMdp& mdp, const TabularConfig& cfg) {
  mdp.validate();
  TabularQ q(mdp.n_states, mdp.n_actions);
  std::vector<long> visits(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0);
  Rng rng = make_rng(cfg.seed);
  int s = uniform_int(rng, 0, mdp.n_states - 1);
  for (long t = 0; t < cfg.steps; ++t) {
    const int a = epsilon_greedy(q.row(s), cfg.epsilon, rng);
    const MdpOutcome& o = mdp.sample(s, a, rng);
    long& v = visits[static_cast<std::size_t>(s) * mdp.n_actions + a];
    ++v;
    double alpha = cfg.alpha;
    if (cfg.polynomial_alpha)
      alpha = std::min(0.5, std::pow(static_cast<double>(v), -cfg.omega));
    td_update(q, {s, a, o.reward, o.next, o.terminal}, alpha, cfg.gamma);
    s = o.terminal ? uniform_int(rng, 0, mdp.n_states - 1) : o.next;
  }
  return q;
}

/// Monte-Carlo evaluation of the greedy policy of `q` from a fixed start:
/// mean discounted return over n rollouts (oracle-support utility).
inline double mc_evaluate_greedy(const ExplicitMdp& mdp, const TabularQ& q, int start_state,
                                 int first_action, double gamma, int n_rollouts, long horizon,
                                 std::uint64_t seed) {
  Rng rng = make_rng(seed);
  double total = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    int s = start_state;
    int a = first_action;
    double g = 1.0, ret = 0.0;
    for (long t = 0; t < horizon; ++t) {
      const MdpOutcome& o = mdp.sample(s, a, rng);
      ret += g * o.reward;
      if (o.terminal) break;
      g *= gamma;
      s = o.next;
      a = argmax_action(q.row(s));
    }
    total += ret;
  }
  return total / n_rollouts;
}

// -- deep DQN ------------------------------------------------------------------------------

struct EpsSchedule {
  double start = 1.0;
  double end = 0.05;
  long decay_steps = 0;  // linear decay horizon; 0 resolves to 20% of total steps

  double at(long step, long total) const {
    long horizon = decay_steps > 0 ? decay_steps : total / 5;
    if (horizon <= 0) return end;
    if (step >= horizon) return end;
    const double f = static_cast<double>(step) / static_cast<double>(horizon);
    return start + f * (end - start);
  }
};

struct DqnConfig {
  double learning_rate = 0.0001;
  double gamma = 0.99;
  EpsSchedule eps;
  long memory_size = 10000;
  int batch_size = 32;
  long target_sync = 1000;
  long total_steps = 120000;
  std::string optimizer = "rmsprop";
  std::string q_preset = "desk-q";

  void validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
    if (eps.start < 0 || eps.start > 1 || eps.end < 0 || eps.end > 1)
      throw std::invalid_argument("epsilon schedule must stay in [0,1]");
    if (memory_size <= 0 || batch_size <= 0 || target_sync <= 0 || total_steps <= 0)
      throw std::invalid_argument("dqn sizes must be positive");
  }
};

struct EpisodeLog {
  long episode = 0;
  long steps = 0;
  double accumulated_reward = 0.0;
  double epsilon = 0.0;
};

struct DqnTrainResult {
  Approximator<float> q;
  ExperienceMemory memory;
  std::vector<EpisodeLog> episodes;
  long steps_run = 0;
};

namespace detail {

template <typename T>
Tensor<T> batch_states(const std::vector<const Transition*>& batch, bool next) {
  const State& s0 = next ? batch[0]->s_next : batch[0]->s;
  Tensor<T> t({static_cast<int>(batch.size()), kFramesPerState, s0.frame_h(), s0.frame_w()});
  for (std::size_t i = 0; i < batch.size(); ++i)
    state_into_tensor(next ? batch[i]->s_next : batch[i]->s, t, static_cast<int>(i));
  return t;
}

}  // namespace detail

/// One mini-batch TD step: Huber loss between Q(s,a|theta) and
/// r + gamma max_a' Q(s',a'|theta_target) (r alone on terminal transitions).
/// Returns the batch loss.
inline double dqn_td_step(Approximator<float>& q, const Approximator<float>& q_target,
                          const std::vector<const Transition*>& batch, double gamma,
                          OptimizerState<float>& opt) {
  const Tensor<float> next_in = detail::batch_states<float>(batch, true);
  const Tensor<float> next_q = q_target.eval(next_in, Mode::Eval);
  Tensor<float> targets({static_cast<int>(batch.size())});
  std::vector<int> actions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    actions[i] = action_id(t.a);
    double target = t.r;
    if (!t.terminal) {
      const float* row = next_q.ptr() + i * kNumActions;
      target += gamma * *std::max_element(row, row + kNumActions);
    }
    targets.data[i] = static_cast<float>(target);
  }
  Graph<float> g;
  auto x = g.leaf(detail::batch_states<float>(batch, false), false);
  auto bound = q.forward(g, x, Mode::Eval, true);
  auto picked = g.gather_rows(bound.out, actions);
  auto loss = g.huber_mean(picked, targets);
  g.backward(loss);
  const std::vector<float> grads = q.extract_grads(g, bound);
  opt.apply(q.params(), grads);
  return loss->val.data[0];
}

/// Algorithm: epsilon-greedy acting, FIFO replay, uniform mini-batches,
/// periodic target sync. Gradient steps begin once the memory holds a full
/// batch. Returns the final Q net, the final memory contents and a per-episode
/// reward log.
inline DqnTrainResult dqn_train(Environment& env, const DqnConfig& cfg, std::uint64_t seed,
                                const std::function<void(long, const EpisodeLog&)>& on_episode = {}) {
  cfg.validate();
  const int fs = env.config().frame_size;
  Approximator<float> q = Approximator<float>::init(preset(cfg.q_preset, fs), derive_seed(seed, 1));
  Approximator<float> q_target = q;
  ExperienceMemory memory(static_cast<std::size_t>(cfg.memory_size));
  OptimizerConfig oc;
  oc.algo = opt_algo_from_string(cfg.optimizer);
  oc.lr = cfg.learning_rate;
  OptimizerState<float> opt(oc, q.param_count());
  Rng act_rng = make_rng(seed, 2);
  Rng sample_rng = make_rng(seed, 3);

  State s = env.reset();
  EpisodeLog ep{0, 0, 0.0, cfg.eps.at(0, cfg.total_steps)};
  std::vector<EpisodeLog> episodes;
  for (long step = 0; step < cfg.total_steps; ++step) {
    const double eps = cfg.eps.at(step, cfg.total_steps);
    const Tensor<float> qa = q.eval(state_tensor<float>(s), Mode::Eval);
    const Action a = action_from_id(
        epsilon_greedy(std::span<const float>(qa.ptr(), kNumActions), eps, act_rng));
    const StepResult res = env.step(a);
    memory.push({s, a, res.reward, res.state, res.terminal});
    if (memory.size() >= static_cast<std::size_t>(cfg.batch_size))
      dqn_td_step(q, q_target, memory.sample(static_cast<std::size_t>(cfg.batch_size), sample_rng),
                  cfg.gamma, opt);
    if ((step + 1) % cfg.target_sync == 0) copy_params(q, q_target);
    ep.steps++;
    ep.accumulated_reward += res.reward;
    ep.epsilon = eps;
    if (res.terminal) {
      episodes.push_back(ep);
      if (on_episode) on_episode(step, ep);
      ep = EpisodeLog{ep.episode + 1, 0, 0.0, eps};
      s = env.reset();
    } else {
      s = res.state;
    }
  }
  return {std::move(q), std::move(memory), std::move(episodes), cfg.total_steps};
}

// -- policy evaluation -----------------------------------------------------------------------

using Policy = std::function<Action(const State&)>;

inline Policy greedy_policy(const Approximator<float>& q) {
  return [&q](const State& s) {
    const Tensor<float> v = q.eval(state_tensor<float>(s), Mode::Eval);
    return action_from_id(argmax_action(std::span<const float>(v.ptr(), kNumActions)));
  };
}

/// Plays n_games greedy games on fresh environments seeded per game; returns
/// the per-game accumulated rewards.
inline std::vector<double> play_games(TransformKind kind, EnvConfig cfg, const Policy& policy,
                                      int n_games, std::uint64_t seed) {
  std::vector<double> rewards(static_cast<std::size_t>(n_games), 0.0);
  for (int gidx = 0; gidx < n_games; ++gidx) {
    EnvConfig c = cfg;
    c.seed = derive_seed(seed, static_cast<std::uint64_t>(gidx));
    TransformedEnv env(kind, c);
    State s = env.reset();
    double total = 0.0;
    while (!env.terminal()) {
      const StepResult r = env.step(policy(s));
      total += r.reward;
      s = r.state;
    }
    rewards[static_cast<std::size_t>(gidx)] = total;
  }
  return rewards;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Average accumulated reward of greedy play over n_games.
inline double evaluate_policy(TransformKind kind, const EnvConfig& cfg, const Approximator<float>& q,
                              int n_games, std::uint64_t seed) {
  if (n_games < 1) throw std::invalid_argument("n_games must be >= 1");
  return mean(play_games(kind, cfg, greedy_policy(q), n_games, seed));
}

}  // namespace corrxfer
