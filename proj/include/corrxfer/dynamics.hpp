#pragma once

#include <string>
#include <vector>

#include "corrxfer/approximator.hpp"
#include "corrxfer/dqn.hpp"
#include "corrxfer/optimizer.hpp"
#include "corrxfer/replay.hpp"

// Action-conditioned next-state model F(s_t, a_t) -> s_{t+1} of the source
// task, trained supervised from the source experience memory.

namespace corrxfer {

struct ModelConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  int epochs = 50;
  std::string preset = "desk-model";
};

struct EnvironmentModel {
  Approximator<float> net;

  /// Deterministic next-state prediction, pixel values clamped to [0,1].
  Tensor<float> predict(const Tensor<float>& states, const Tensor<float>& onehot_actions) const {
    Tensor<float> out = net.eval(states, &onehot_actions, Mode::Eval);
    for (auto& v : out.data) v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return out;
  }

  Tensor<float> predict(const State& s, Action a) const {
    Tensor<float> onehot({1, kNumActions});
    onehot.data[static_cast<std::size_t>(action_id(a))] = 1.f;
    return predict(state_tensor<float>(s), onehot);
  }
};

namespace detail {

inline Tensor<float> onehot_actions(const std::vector<const Transition*>& batch) {
  Tensor<float> t({static_cast<int>(batch.size()), kNumActions});
  for (std::size_t i = 0; i < batch.size(); ++i)
    t.data[i * kNumActions + static_cast<std::size_t>(action_id(batch[i]->a))] = 1.f;
  return t;
}

}  // namespace detail

/// One supervised step on mean absolute error |F(s,a) - s_next|; returns the
/// batch loss.
inline double model_train_step(Approximator<float>& net,
                               const std::vector<const Transition*>& batch,
                               OptimizerState<float>& opt) {
  Graph<float> g;
  auto x = g.leaf(detail::batch_states<float>(batch, false), false);
  auto a = g.leaf(detail::onehot_actions(batch), false);
  auto bound = net.forward(g, x, a, Mode::Train, true);
  auto target = g.leaf(detail::batch_states<float>(batch, true), false);
  auto loss = g.l1_mean(bound.out, target);
  g.backward(loss);
  opt.apply(net.params(), net.extract_grads(g, bound));
  net.update_running_stats(bound);
  return loss->val.data[0];
}

struct ModelTrainLog {
  std::vector<double> epoch_loss;  // mean L1 per epoch
};

/// Epoch-based training over the whole memory with shuffled mini-batches.
/// Batches clamp to the memory size when the memory is smaller than one batch.
inline EnvironmentModel train_model(const ExperienceMemory& memory, const ModelConfig& cfg,
                                    std::uint64_t seed, ModelTrainLog* log = nullptr) {
  if (memory.empty()) throw std::invalid_argument("train_model: empty memory");
  const int fs = memory[0].s.frame_h();
  Approximator<float> net = Approximator<float>::init(preset(cfg.preset, fs), derive_seed(seed, 1));
  OptimizerConfig oc;
  oc.algo = OptAlgo::Adam;
  oc.lr = cfg.learning_rate;
  OptimizerState<float> opt(oc, net.param_count());
  Rng rng = make_rng(seed, 2);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                  memory.size());
  std::vector<std::size_t> order(memory.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)))]);
    double total = 0.0;
    long batches = 0;
    for (std::size_t at = 0; at + batch <= order.size(); at += batch) {
      std::vector<const Transition*> b;
      b.reserve(batch);
      for (std::size_t i = 0; i < batch; ++i) b.push_back(&memory[order[at + i]]);
      total += model_train_step(net, b, opt);
      ++batches;
    }
    if (log) log->epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return EnvironmentModel{std::move(net)};
}

/// Mean absolute pixel error of one-step predictions over a range of
/// transitions (used for held-out evaluation).
inline double model_holdout_error(const EnvironmentModel& model, const ExperienceMemory& memory,
                                  std::size_t begin, std::size_t end) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = begin; i < end && i < memory.size(); ++i) {
    const Transition& t = memory[i];
    const Tensor<float> pred = model.predict(t.s, t.a);
    const Tensor<float> want = state_tensor<float>(t.s_next);
    double err = 0.0;
    for (std::size_t j = 0; j < pred.numel(); ++j) err += std::abs(pred.data[j] - want.data[j]);
    total += err / static_cast<double>(pred.numel());
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace corrxfer
