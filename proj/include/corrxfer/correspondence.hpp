#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "corrxfer/approximator.hpp"
#include "corrxfer/dqn.hpp"
#include "corrxfer/dynamics.hpp"
#include "corrxfer/optimizer.hpp"
#include "corrxfer/replay.hpp"

// Unpaired state-correspondence learning between two experience memories:
// generators G_S (source->target) and G_T (target->source) trained against
// patch discriminators with the composite loss
//   L = L_GAN + lambda_Cyc L_Cyc + lambda_Q L_Q + lambda_M L_M.

namespace corrxfer {

inline constexpr double kProbClamp = 1e-7;  // keeps the log terms finite

struct LossWeights {
  double cyc = 0.0;
  double q = 0.0;
  double m = 0.0;

  void validate() const {
    if (cyc < 0 || q < 0 || m < 0) throw std::invalid_argument("loss weights must be non-negative");
  }
  bool operator==(const LossWeights&) const = default;
};

/// Named weight settings: the baselines fall out of the composite loss.
inline LossWeights lambda_preset(const std::string& name) {
  if (name == "GAN") return {0, 0, 0};
  if (name == "CycleGAN") return {10, 0, 0};
  if (name == "full") return {1, 1, 1};
  if (name == "model-only") return {0, 0, 10};
  if (name == "resnet-best") return {1, 0, 1};
  throw std::invalid_argument("unknown lambda preset '" + name + "'");
}

/// The 18-point Cartesian grid swept in the identity-task experiment.
inline std::vector<LossWeights> lambda_grid_experiment1() {
  std::vector<LossWeights> out;
  for (double cyc : {0.0, 1.0, 10.0})
    for (double q : {0.0, 1.0})
      for (double m : {0.0, 1.0, 10.0}) out.push_back({cyc, q, m});
  return out;
}

struct LossComponents {
  double gan = 0.0;
  double cyc = 0.0;
  double q = 0.0;
  double m = 0.0;
};

/// Weighted sum exactly as written; with all weights zero the result is the
/// GAN term bit-for-bit.
inline double total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  double v = c.gan;
  if (w.cyc > 0) v += w.cyc * c.cyc;
  if (w.q > 0) v += w.q * c.q;
  if (w.m > 0) v += w.m * c.m;
  return v;
}

/// The correspondence function: a state map plus the identity action map.
struct CorrespondenceFunction {
  Approximator<float> g_t;  // target states -> source states

  State map_state(const State& s) const {
    const Tensor<float> out = g_t.eval(state_tensor<float>(s), Mode::Eval);
    State mapped;
    const int h = out.dim(2), w = out.dim(3);
    for (int f = 0; f < kFramesPerState; ++f) {
      auto px = std::make_shared<std::vector<float>>(static_cast<std::size_t>(h) * w);
      for (int i = 0; i < h * w; ++i)
        (*px)[static_cast<std::size_t>(i)] = out.data[(static_cast<std::size_t>(f) * h) * w + i];
      mapped.frames[static_cast<std::size_t>(f)] = Frame{h, w, std::move(px)};
    }
    return mapped;
  }

  Action map_action(Action a) const { return a; }  // identity by construction
};

// ---------------------------------------------------------------------------
// component losses (pure: no parameter or running-stat mutation)

namespace detail {

template <typename T>
typename Graph<T>::Ref log_prob(Graph<T>& g, typename Graph<T>::Ref logits, bool of_one) {
  auto p = g.clamp(g.sigmoid(logits), static_cast<T>(kProbClamp), static_cast<T>(1 - kProbClamp));
  if (!of_one) p = g.affine(p, T(-1), T(1));  // 1 - p
  return g.mean_all(g.log(p));
}

template <typename T>
void add_grads(std::vector<T>& acc, const std::vector<T>& g) {
  if (acc.empty()) acc.assign(g.size(), T(0));
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace detail

template <typename T>
struct GanLossResult {
  T value = T(0);  // E[log D_S(s_S)] + E[log(1-D_S(G_T(s_T)))] + (same for T side)
  std::vector<T> grad_g_s, grad_g_t;  // descent directions for the non-saturating generator loss
  std::vector<T> grad_d_s, grad_d_t;  // descent directions for the discriminators' own objective
};

/// Adversarial loss over one pair of state batches. Discriminators ascend the
/// written expectation (their gradients descend its negation); generators
/// descend the non-saturating surrogate -E[log D(G(.))].
template <typename T>
GanLossResult<T> gan_loss(const Tensor<T>& batch_s, const Tensor<T>& batch_t,
                          const Approximator<T>& g_s, const Approximator<T>& g_t,
                          const Approximator<T>& d_s, const Approximator<T>& d_t) {
  if (batch_s.ndim() != 4 || batch_t.ndim() != 4) throw std::invalid_argument("gan_loss: empty batch");
  GanLossResult<T> out;
  const Tensor<T> fake_t = g_s.eval(batch_s, nullptr, Mode::Train);  // detached fakes
  const Tensor<T> fake_s = g_t.eval(batch_t, nullptr, Mode::Train);
  {  // D_S: real source states vs mapped target states
    Graph<T> g;
    auto real = d_s.forward(g, g.leaf(batch_s, false), Mode::Train, true);
    auto fake = d_s.forward(g, g.leaf(fake_s, false), Mode::Train, true);
    auto t_real = detail::log_prob(g, real.out, true);
    auto t_fake = detail::log_prob(g, fake.out, false);
    auto objective = g.scale(g.add(t_real, t_fake), T(-1));  // descend the negation
    g.backward(objective);
    out.value += t_real->val.data[0] + t_fake->val.data[0];
    detail::add_grads(out.grad_d_s, d_s.extract_grads(g, real));
    detail::add_grads(out.grad_d_s, d_s.extract_grads(g, fake));
  }
  {  // D_T: real target states vs mapped source states
    Graph<T> g;
    auto real = d_t.forward(g, g.leaf(batch_t, false), Mode::Train, true);
    auto fake = d_t.forward(g, g.leaf(fake_t, false), Mode::Train, true);
    auto t_real = detail::log_prob(g, real.out, true);
    auto t_fake = detail::log_prob(g, fake.out, false);
    auto objective = g.scale(g.add(t_real, t_fake), T(-1));
    g.backward(objective);
    out.value += t_real->val.data[0] + t_fake->val.data[0];
    detail::add_grads(out.grad_d_t, d_t.extract_grads(g, real));
    detail::add_grads(out.grad_d_t, d_t.extract_grads(g, fake));
  }
  {  // generators: maximize log D(G(.)) through frozen discriminators
    Graph<T> g;
    auto gs = g_s.forward(g, g.leaf(batch_s, false), Mode::Train, true);
    auto gt = g_t.forward(g, g.leaf(batch_t, false), Mode::Train, true);
    auto ds = d_s.forward(g, gt.out, Mode::Train, false);
    auto dt = d_t.forward(g, gs.out, Mode::Train, false);
    auto surrogate = g.scale(
        g.add(detail::log_prob(g, ds.out, true), detail::log_prob(g, dt.out, true)), T(-1));
    g.backward(surrogate);
    out.grad_g_s = g_s.extract_grads(g, gs);
    out.grad_g_t = g_t.extract_grads(g, gt);
  }
  return out;
}

template <typename T>
struct GenLossResult {
  T value = T(0);
  std::vector<T> grad_g_s, grad_g_t;
};

/// ||G_T(G_S(s_S)) - s_S||_1 + ||G_S(G_T(s_T)) - s_T||_1, where the state norm
/// is the mean absolute pixel difference, averaged over the batch.
template <typename T>
GenLossResult<T> cycle_loss(const Tensor<T>& batch_s, const Tensor<T>& batch_t,
                            const Approximator<T>& g_s, const Approximator<T>& g_t) {
  if (batch_s.ndim() != 4 || batch_t.ndim() != 4) throw std::invalid_argument("cycle_loss: empty batch");
  Graph<T> g;
  auto sn = g.leaf(batch_s, false);
  auto tn = g.leaf(batch_t, false);
  auto gs1 = g_s.forward(g, sn, Mode::Train, true);
  auto gt1 = g_t.forward(g, gs1.out, Mode::Train, true);
  auto gt2 = g_t.forward(g, tn, Mode::Train, true);
  auto gs2 = g_s.forward(g, gt2.out, Mode::Train, true);
  auto loss = g.add(g.l1_mean(gt1.out, sn), g.l1_mean(gs2.out, tn));
  g.backward(loss);
  GenLossResult<T> out;
  out.value = loss->val.data[0];
  detail::add_grads(out.grad_g_s, g_s.extract_grads(g, gs1));
  detail::add_grads(out.grad_g_s, g_s.extract_grads(g, gs2));
  detail::add_grads(out.grad_g_t, g_t.extract_grads(g, gt1));
  detail::add_grads(out.grad_g_t, g_t.extract_grads(g, gt2));
  return out;
}

/// ||Q_S(G_T(G_S(s_S))) - Q_S(s_S)||_1 averaged over the batch; the norm runs
/// over the full 6-vector of action values. No gradient reaches q_s.
template <typename T>
GenLossResult<T> q_loss(const Tensor<T>& batch_s, const Approximator<T>& g_s,
                        const Approximator<T>& g_t, const Approximator<T>& q_s) {
  if (batch_s.ndim() != 4) throw std::invalid_argument("q_loss: empty batch");
  const Tensor<T> q_ref = q_s.eval(batch_s, nullptr, Mode::Eval);
  Graph<T> g;
  auto sn = g.leaf(batch_s, false);
  auto gs = g_s.forward(g, sn, Mode::Train, true);
  auto gt = g_t.forward(g, gs.out, Mode::Train, true);
  auto qv = q_s.forward(g, gt.out, Mode::Eval, false);
  auto loss = g.l1_rowsum_mean(qv.out, g.leaf(q_ref, false));
  g.backward(loss);
  GenLossResult<T> out;
  out.value = loss->val.data[0];
  out.grad_g_s = g_s.extract_grads(g, gs);
  out.grad_g_t = g_t.extract_grads(g, gt);
  return out;
}

template <typename T>
struct ModelLossResult {
  T value = T(0);
  std::vector<T> grad_g_t;
};

/// ||F(G_T(s_t), a_t) - G_T(s_{t+1})||_1 over target transitions; gradients
/// flow into G_T only (F stays frozen).
template <typename T>
ModelLossResult<T> model_loss(const Tensor<T>& batch_t, const Tensor<T>& onehot_actions,
                              const Tensor<T>& batch_t_next, const Approximator<T>& g_t,
                              const Approximator<T>& f) {
  if (batch_t.ndim() != 4) throw std::invalid_argument("model_loss: empty batch");
  Graph<T> g;
  auto tn = g.leaf(batch_t, false);
  auto tn_next = g.leaf(batch_t_next, false);
  auto a = g.leaf(onehot_actions, false);
  auto gt1 = g_t.forward(g, tn, Mode::Train, true);
  auto gt2 = g_t.forward(g, tn_next, Mode::Train, true);
  auto pred = f.forward(g, gt1.out, a, Mode::Eval, false);
  auto loss = g.l1_mean(pred.out, gt2.out);
  g.backward(loss);
  ModelLossResult<T> out;
  out.value = loss->val.data[0];
  detail::add_grads(out.grad_g_t, g_t.extract_grads(g, gt1));
  detail::add_grads(out.grad_g_t, g_t.extract_grads(g, gt2));
  return out;
}

// ---------------------------------------------------------------------------
// training

struct CorrespondenceConfig {
  LossWeights weights{1, 1, 1};
  std::string generator_preset = "desk-generator";
  std::string discriminator_preset = "desk-discriminator";
  double learning_rate = 0.0002;  // Adam, linearly decayed to zero
  double beta1 = 0.5;
  int batch_size = 1;
  long total_steps = 40000;  // 4 epochs of 10k generator iterations
  long eval_interval = 1000;
  int eval_games = 5;
  bool decay_lr = true;

  void validate() const {
    weights.validate();
    if (batch_size < 1 || total_steps < 1 || eval_interval < 1 || eval_games < 1)
      throw std::invalid_argument("correspondence config sizes must be positive");
  }
};

struct CorrespondenceEvalRow {
  long step = 0;
  double avg_reward = 0.0;
  double loss_gan = 0.0, loss_cyc = 0.0, loss_q = 0.0, loss_m = 0.0;
};

struct CorrespondenceResult {
  CorrespondenceFunction best;
  long best_step = 0;
  double best_score = 0.0;
  Approximator<float> final_g_s, final_g_t, final_d_s, final_d_t;
  std::vector<CorrespondenceEvalRow> log;
};

struct CorrespondenceHooks {
  // step, one target-task state, the same state through the current G_T
  std::function<void(long, const State&, const State&)> on_progress_dump;
  std::function<void(const CorrespondenceEvalRow&)> on_eval_row;
};

namespace detail {

inline Tensor<float> states_tensor_from(const ExperienceMemory& m, const std::vector<std::size_t>& idx,
                                        bool next) {
  const State& first = next ? m[idx[0]].s_next : m[idx[0]].s;
  Tensor<float> t({static_cast<int>(idx.size()), kFramesPerState, first.frame_h(), first.frame_w()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    state_into_tensor(next ? m[idx[i]].s_next : m[idx[i]].s, t, static_cast<int>(i));
  return t;
}

inline Tensor<float> onehot_from(const ExperienceMemory& m, const std::vector<std::size_t>& idx) {
  Tensor<float> t({static_cast<int>(idx.size()), kNumActions});
  for (std::size_t i = 0; i < idx.size(); ++i)
    t.data[i * kNumActions + static_cast<std::size_t>(action_id(m[idx[i]].a))] = 1.f;
  return t;
}

inline std::vector<std::size_t> draw_indices(std::size_t size, std::size_t n, Rng& rng) {
  std::vector<std::size_t> out(n);
  for (auto& v : out) v = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(size) - 1));
  return out;
}

}  // namespace detail

/// Greedy action on the target task through the transformed Q-function
/// Q_S(G_T(s), .) with an evaluation-mode generator snapshot.
inline Policy transformed_greedy_policy(const Approximator<float>& q_s,
                                        const Approximator<float>& g_t) {
  return [&q_s, &g_t](const State& s) {
    const Tensor<float> mapped = g_t.eval(state_tensor<float>(s), Mode::Eval);
    const Tensor<float> v = q_s.eval(mapped, Mode::Eval);
    return action_from_id(argmax_action(std::span<const float>(v.ptr(), kNumActions)));
  };
}

/// Alternating adversarial training: one discriminator ascent and one
/// generator descent per iteration on fresh mini-batches. Every eval_interval
/// steps the target task is played eval_games times with the transformed
/// Q-function; the G_T with the best average reward is retained (ties keep
/// the earliest).
inline CorrespondenceResult train_correspondence(
    const ExperienceMemory& m_s, const ExperienceMemory& m_t, const Approximator<float>& q_s,
    const EnvironmentModel& f, const CorrespondenceConfig& cfg, TransformKind target_kind,
    const EnvConfig& env_cfg, std::uint64_t seed, const CorrespondenceHooks& hooks = {}) {
  cfg.validate();
  if (m_s.empty() || m_t.empty()) throw std::invalid_argument("train_correspondence: empty memory");
  const std::vector<float> q_snapshot = q_s.params();
  const std::vector<float> f_snapshot = f.net.params();
  const int fs = m_s[0].s.frame_h();

  Approximator<float> g_s = Approximator<float>::init(preset(cfg.generator_preset, fs),
                                                      derive_seed(seed, 1));
  Approximator<float> g_t = Approximator<float>::init(preset(cfg.generator_preset, fs),
                                                      derive_seed(seed, 2));
  Approximator<float> d_s = Approximator<float>::init(preset(cfg.discriminator_preset, fs),
                                                      derive_seed(seed, 3));
  Approximator<float> d_t = Approximator<float>::init(preset(cfg.discriminator_preset, fs),
                                                      derive_seed(seed, 4));

  auto make_opt = [&](const Approximator<float>& net) {
    OptimizerConfig oc;
    oc.algo = OptAlgo::Adam;
    oc.lr = cfg.learning_rate;
    oc.beta1 = cfg.beta1;
    oc.decay_steps = cfg.decay_lr ? cfg.total_steps : 0;
    return OptimizerState<float>(oc, net.param_count());
  };
  OptimizerState<float> opt_gs = make_opt(g_s), opt_gt = make_opt(g_t);
  OptimizerState<float> opt_ds = make_opt(d_s), opt_dt = make_opt(d_t);

  Rng sample_rng = make_rng(seed, 5);
  const std::uint64_t eval_seed = derive_seed(seed, 6);
  const std::size_t nb = static_cast<std::size_t>(cfg.batch_size);

  CorrespondenceResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  LossComponents acc;  // means over the current eval interval
  long acc_n = 0;

  for (long step = 1; step <= cfg.total_steps; ++step) {
    const auto idx_s = detail::draw_indices(m_s.size(), nb, sample_rng);
    const auto idx_t = detail::draw_indices(m_t.size(), nb, sample_rng);
    const Tensor<float> batch_s = detail::states_tensor_from(m_s, idx_s, false);
    const Tensor<float> batch_t = detail::states_tensor_from(m_t, idx_t, false);

    // --- discriminator step (fakes detached) ---
    const Tensor<float> fake_t = g_s.eval(batch_s, nullptr, Mode::Train);
    const Tensor<float> fake_s = g_t.eval(batch_t, nullptr, Mode::Train);
    double log_gan = 0.0;
    {
      Graph<float> g;
      auto real = d_s.forward(g, g.leaf(batch_s, false), Mode::Train, true);
      auto fake = d_s.forward(g, g.leaf(fake_s, false), Mode::Train, true);
      auto t_real = detail::log_prob(g, real.out, true);
      auto t_fake = detail::log_prob(g, fake.out, false);
      auto objective = g.scale(g.add(t_real, t_fake), -1.f);
      g.backward(objective);
      log_gan += t_real->val.data[0] + t_fake->val.data[0];
      std::vector<float> grads = d_s.extract_grads(g, real);
      detail::add_grads(grads, d_s.extract_grads(g, fake));
      opt_ds.apply(d_s.params(), grads);
      d_s.update_running_stats(real);
    }
    {
      Graph<float> g;
      auto real = d_t.forward(g, g.leaf(batch_t, false), Mode::Train, true);
      auto fake = d_t.forward(g, g.leaf(fake_t, false), Mode::Train, true);
      auto t_real = detail::log_prob(g, real.out, true);
      auto t_fake = detail::log_prob(g, fake.out, false);
      auto objective = g.scale(g.add(t_real, t_fake), -1.f);
      g.backward(objective);
      log_gan += t_real->val.data[0] + t_fake->val.data[0];
      std::vector<float> grads = d_t.extract_grads(g, real);
      detail::add_grads(grads, d_t.extract_grads(g, fake));
      opt_dt.apply(d_t.params(), grads);
      d_t.update_running_stats(real);
    }

    // --- generator step (all active components share one graph) ---
    {
      Graph<float> g;
      auto sn = g.leaf(batch_s, false);
      auto tn = g.leaf(batch_t, false);
      auto gs1 = g_s.forward(g, sn, Mode::Train, true);
      auto gt1 = g_t.forward(g, tn, Mode::Train, true);
      auto ds = d_s.forward(g, gt1.out, Mode::Train, false);
      auto dt = d_t.forward(g, gs1.out, Mode::Train, false);
      auto loss = g.scale(
          g.add(detail::log_prob(g, ds.out, true), detail::log_prob(g, dt.out, true)), -1.f);

      typename Approximator<float>::Bound gt_cyc{}, gs_cyc{}, gt_next{};
      bool has_cyc = false, has_q = false, has_m = false;
      typename Graph<float>::Ref cyc_s = nullptr;

      if (cfg.weights.cyc > 0 || cfg.weights.q > 0) {
        gt_cyc = g_t.forward(g, gs1.out, Mode::Train, true);  // G_T(G_S(s_S))
        cyc_s = gt_cyc.out;
      }
      if (cfg.weights.cyc > 0) {
        has_cyc = true;
        gs_cyc = g_s.forward(g, gt1.out, Mode::Train, true);  // G_S(G_T(s_T))
        auto l_cyc = g.add(g.l1_mean(cyc_s, sn), g.l1_mean(gs_cyc.out, tn));
        acc.cyc += l_cyc->val.data[0];
        loss = g.add(loss, g.scale(l_cyc, static_cast<float>(cfg.weights.cyc)));
      }
      if (cfg.weights.q > 0) {
        has_q = true;
        const Tensor<float> q_ref = q_s.eval(batch_s, nullptr, Mode::Eval);
        auto qv = q_s.forward(g, cyc_s, Mode::Eval, false);
        auto l_q = g.l1_rowsum_mean(qv.out, g.leaf(q_ref, false));
        acc.q += l_q->val.data[0];
        loss = g.add(loss, g.scale(l_q, static_cast<float>(cfg.weights.q)));
      }
      if (cfg.weights.m > 0) {
        has_m = true;
        const Tensor<float> batch_t_next = detail::states_tensor_from(m_t, idx_t, true);
        const Tensor<float> onehot = detail::onehot_from(m_t, idx_t);
        gt_next = g_t.forward(g, g.leaf(batch_t_next, false), Mode::Train, true);
        auto pred = f.net.forward(g, gt1.out, g.leaf(onehot, false), Mode::Eval, false);
        auto l_m = g.l1_mean(pred.out, gt_next.out);
        acc.m += l_m->val.data[0];
        loss = g.add(loss, g.scale(l_m, static_cast<float>(cfg.weights.m)));
      }

      g.backward(loss);
      std::vector<float> grad_gs = g_s.extract_grads(g, gs1);
      std::vector<float> grad_gt = g_t.extract_grads(g, gt1);
      if (cfg.weights.cyc > 0 || cfg.weights.q > 0)
        detail::add_grads(grad_gt, g_t.extract_grads(g, gt_cyc));
      if (has_cyc) detail::add_grads(grad_gs, g_s.extract_grads(g, gs_cyc));
      if (has_m) detail::add_grads(grad_gt, g_t.extract_grads(g, gt_next));
      (void)has_q;
      opt_gs.apply(g_s.params(), grad_gs);
      opt_gt.apply(g_t.params(), grad_gt);
      g_s.update_running_stats(gs1);
      g_t.update_running_stats(gt1);
    }

    acc.gan += log_gan;
    ++acc_n;

    if (step % cfg.eval_interval == 0) {
      const double avg = mean(play_games(target_kind, env_cfg,
                                         transformed_greedy_policy(q_s, g_t), cfg.eval_games,
                                         eval_seed));
      CorrespondenceEvalRow row;
      row.step = step;
      row.avg_reward = avg;
      row.loss_gan = acc.gan / static_cast<double>(acc_n);
      row.loss_cyc = acc.cyc / static_cast<double>(acc_n);
      row.loss_q = acc.q / static_cast<double>(acc_n);
      row.loss_m = acc.m / static_cast<double>(acc_n);
      result.log.push_back(row);
      if (hooks.on_eval_row) hooks.on_eval_row(row);
      acc = LossComponents{};
      acc_n = 0;
      if (avg > result.best_score) {
        result.best_score = avg;
        result.best_step = step;
        result.best.g_t = g_t;
      }
      if (hooks.on_progress_dump) {
        const State& sample = m_t[0].s;
        CorrespondenceFunction cur{g_t};
        hooks.on_progress_dump(step, sample, cur.map_state(sample));
      }
    }
  }

  if (result.best_step == 0) result.best.g_t = g_t;  // no eval happened
  result.final_g_s = std::move(g_s);
  result.final_g_t = std::move(g_t);
  result.final_d_s = std::move(d_s);
  result.final_d_t = std::move(d_t);

  // frozen inputs must come through untouched
  if (q_s.params() != q_snapshot || f.net.params() != f_snapshot)
    throw std::logic_error("train_correspondence: frozen network was modified");
  return result;
}

}  // namespace corrxfer
