#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "corrxfer/arch.hpp"
#include "corrxfer/graph.hpp"
#include "corrxfer/rng.hpp"

namespace corrxfer {

enum class Mode { Train, Eval };

inline constexpr double kInitStdDev = 0.02;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningStatMomentum = 0.1;  // new stats weight

/// A parameterized differentiable map: flat parameter vector + architecture.
/// forward() builds autodiff graph nodes; eval() is the cheap no-graph path
/// used for action selection and frozen-network targets.
template <typename T>
class Approximator {
 public:
  Approximator() = default;

  explicit Approximator(ArchitectureSpec arch)
      : arch_(std::move(arch)), layout_(layout_params(arch_)) {
    params_.assign(layout_.param_count, T(0));
    buffers_.assign(layout_.buffer_count, T(0));
    // running variance starts at 1
    for (const auto& s : layout_.slices)
      if (s.buf_count > 0)
        for (std::size_t i = s.buf_count / 2; i < s.buf_count; ++i) buffers_[s.buf_offset + i] = T(1);
  }

  static Approximator init(const ArchitectureSpec& arch, std::uint64_t seed) {
    Approximator a(arch);
    Rng rng = make_rng(seed);
    for (const auto& s : a.layout_.slices) {
      const auto& l = arch.layers[static_cast<std::size_t>(s.layer_index)];
      if (!s.w_shape.empty()) {
        const std::size_t n = Tensor<T>::count(s.w_shape);
        if (l.kind == LayerKind::BatchNorm) {
          for (std::size_t i = 0; i < n; ++i)
            a.params_[s.w_offset + i] = static_cast<T>(gaussian(rng, 1.0, kInitStdDev));
        } else {
          for (std::size_t i = 0; i < n; ++i)
            a.params_[s.w_offset + i] = static_cast<T>(gaussian(rng, 0.0, kInitStdDev));
        }
      }
      // biases and batchnorm shifts stay zero
    }
    return a;
  }

  const ArchitectureSpec& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& buffers() { return buffers_; }
  const std::vector<T>& buffers() const { return buffers_; }
  std::size_t param_count() const { return layout_.param_count; }

  struct Bound {
    typename Graph<T>::Ref out = nullptr;
    // node per slice: (w node, b node); nullptr where absent
    std::vector<std::pair<typename Graph<T>::Ref, typename Graph<T>::Ref>> param_nodes;
    // (slice index, bn train node) pairs for running-stat harvest
    std::vector<std::pair<std::size_t, typename Graph<T>::Ref>> bn_nodes;
  };

  /// Builds the network as graph nodes on top of `x` (and `extra` for
  /// action-conditioned nets). train_params controls whether gradients are
  /// collected into the parameters (frozen networks still let gradients flow
  /// through to their inputs).
  Bound forward(Graph<T>& g, typename Graph<T>::Ref x, typename Graph<T>::Ref extra, Mode mode,
                bool train_params) const {
    Bound bind;
    bind.param_nodes.resize(layout_.slices.size(), {nullptr, nullptr});
    typename Graph<T>::Ref cur = x;
    std::vector<typename Graph<T>::Ref> res_stack;
    std::size_t slice_at = 0;
    bool spatial = true;
    for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
      const LayerSpec& l = arch_.layers[li];
      const ParamSlice* ps = nullptr;
      typename Graph<T>::Ref wn = nullptr, bn = nullptr;
      if (slice_at < layout_.slices.size() &&
          layout_.slices[slice_at].layer_index == static_cast<int>(li)) {
        ps = &layout_.slices[slice_at];
        if (!ps->w_shape.empty())
          wn = g.leaf(Tensor<T>(ps->w_shape, slice(params_, ps->w_offset, ps->w_shape)),
                      train_params);
        if (!ps->b_shape.empty())
          bn = g.leaf(Tensor<T>(ps->b_shape, slice(params_, ps->b_offset, ps->b_shape)),
                      train_params);
        bind.param_nodes[slice_at] = {wn, bn};
      }
      switch (l.kind) {
        case LayerKind::Conv:
          if (l.pad > 0) cur = g.pad2d(cur, l.pad, l.pad_mode);
          cur = g.conv2d(cur, wn, bn, l.stride);
          break;
        case LayerKind::ConvT:
          cur = g.conv_transpose2d(cur, wn, bn, 2, 1, 1);
          break;
        case LayerKind::FC:
          if (spatial) {
            cur = g.flatten(cur);
            spatial = false;
          }
          cur = g.linear(cur, wn, bn);
          break;
        case LayerKind::Flatten:
          cur = g.flatten(cur);
          spatial = false;
          break;
        case LayerKind::BatchNorm:
          if (mode == Mode::Train) {
            cur = g.batchnorm_train(cur, wn, bn, static_cast<T>(kBatchNormEps));
            bind.bn_nodes.emplace_back(slice_at, cur);
          } else {
            const int c = l_channels(ps);
            Tensor<T> rm({c}, slice(buffers_, ps->buf_offset, {c}));
            Tensor<T> rv({c}, slice(buffers_, ps->buf_offset + static_cast<std::size_t>(c), {c}));
            cur = g.batchnorm_eval(cur, wn, bn, rm, rv, static_cast<T>(kBatchNormEps));
          }
          break;
        case LayerKind::ReLU:
          cur = g.relu(cur);
          break;
        case LayerKind::LeakyReLU:
          cur = g.leaky_relu(cur, static_cast<T>(0.2));
          break;
        case LayerKind::Sigmoid:
          cur = g.sigmoid(cur);
          break;
        case LayerKind::ResOpen:
          res_stack.push_back(cur);
          break;
        case LayerKind::ResClose:
          cur = g.add(cur, res_stack.back());
          res_stack.pop_back();
          break;
        case LayerKind::ActionInject:
          if (!extra) throw std::invalid_argument(arch_.name + ": missing action input");
          cur = g.concat_channels_broadcast(cur, extra);
          break;
        case LayerKind::Rotation:
          cur = g.rotate_bilinear(cur, wn);
          break;
      }
      if (ps) ++slice_at;
    }
    bind.out = cur;
    return bind;
  }

  Bound forward(Graph<T>& g, typename Graph<T>::Ref x, Mode mode, bool train_params) const {
    return forward(g, x, nullptr, mode, train_params);
  }

  /// Plain forward without graph bookkeeping. Never mutates parameters or
  /// running statistics.
  Tensor<T> eval(const Tensor<T>& x, const Tensor<T>* extra, Mode mode) const {
    Graph<T> g;  // graph with no trainable leaves; forward values only
    auto xn = g.leaf(x, false);
    typename Graph<T>::Ref en = extra ? g.leaf(*extra, false) : nullptr;
    return forward(g, xn, en, mode, false).out->val;
  }
  Tensor<T> eval(const Tensor<T>& x, Mode mode = Mode::Eval) const { return eval(x, nullptr, mode); }

  /// Folds the batch statistics observed during a Train-mode forward into the
  /// running buffers (exponential moving average).
  void update_running_stats(const Bound& b) {
    const T m = static_cast<T>(kRunningStatMomentum);
    for (const auto& [slice_idx, node] : b.bn_nodes) {
      const ParamSlice& ps = layout_.slices[slice_idx];
      const std::size_t c = ps.buf_count / 2;
      for (std::size_t i = 0; i < c; ++i) {
        buffers_[ps.buf_offset + i] = (T(1) - m) * buffers_[ps.buf_offset + i] + m * node->aux0.data[i];
        buffers_[ps.buf_offset + c + i] =
            (T(1) - m) * buffers_[ps.buf_offset + c + i] + m * node->aux1.data[i];
      }
    }
  }

  /// Collects d(loss)/d(theta) into a flat vector aligned with params().
  std::vector<T> extract_grads(Graph<T>& g, const Bound& b) const {
    std::vector<T> out(layout_.param_count, T(0));
    for (std::size_t i = 0; i < layout_.slices.size(); ++i) {
      const ParamSlice& ps = layout_.slices[i];
      const auto& [wn, bnn] = b.param_nodes[i];
      if (wn)
        if (const Tensor<T>* gw = g.grad_if_any(wn))
          std::copy(gw->data.begin(), gw->data.end(), out.begin() + static_cast<long>(ps.w_offset));
      if (bnn)
        if (const Tensor<T>* gb = g.grad_if_any(bnn))
          std::copy(gb->data.begin(), gb->data.end(), out.begin() + static_cast<long>(ps.b_offset));
    }
    return out;
  }

  template <typename U>
  Approximator<U> cast() const {
    Approximator<U> out{arch_};
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    for (std::size_t i = 0; i < buffers_.size(); ++i) out.buffers()[i] = static_cast<U>(buffers_[i]);
    return out;
  }

 private:
  static std::vector<T> slice(const std::vector<T>& v, std::size_t off, const std::vector<int>& shape) {
    const std::size_t n = Tensor<T>::count(shape);
    return std::vector<T>(v.begin() + static_cast<long>(off), v.begin() + static_cast<long>(off + n));
  }
  static int l_channels(const ParamSlice* ps) { return ps->w_shape[0]; }

  ArchitectureSpec arch_;
  ParamLayout layout_;
  std::vector<T> params_;
  std::vector<T> buffers_;
};

/// Copies parameters (and running statistics) between same-architecture nets.
template <typename T>
void copy_params(const Approximator<T>& src, Approximator<T>& dst) {
  if (!(src.arch() == dst.arch()))
    throw std::invalid_argument("copy_params: architecture mismatch (" + src.arch().name + " vs " +
                                dst.arch().name + ")");
  dst.params() = src.params();
  dst.buffers() = src.buffers();
}

/// Gradient of a scalar loss with respect to the parameters of `f`.
/// `build` receives (graph, bound-forward result is up to the builder): it
/// must construct the loss node using f.forward on the given input.
template <typename T, typename BuildLoss>
std::vector<T> gradient_of(const Approximator<T>& f, BuildLoss&& build) {
  Graph<T> g;
  typename Approximator<T>::Bound bind;
  typename Graph<T>::Ref loss = build(g, bind);
  if (loss->val.numel() != 1) throw std::invalid_argument("gradient: loss must be scalar");
  g.backward(loss);
  return f.extract_grads(g, bind);
}

}  // namespace corrxfer
