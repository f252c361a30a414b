#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrxfer {

enum class OptAlgo { Sgd, RmsProp, Adam };

inline OptAlgo opt_algo_from_string(const std::string& s) {
  if (s == "sgd") return OptAlgo::Sgd;
  if (s == "rmsprop") return OptAlgo::RmsProp;
  if (s == "adam") return OptAlgo::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptAlgo algo = OptAlgo::Sgd;
  double lr = 0.01;
  long decay_steps = 0;  // >0: learning rate decays linearly to zero over this many steps
  double beta1 = 0.9;    // Adam
  double beta2 = 0.999;  // Adam
  double rho = 0.9;      // RMSprop accumulator decay
  double eps = 1e-8;
};

/// Per-parameter-vector optimizer state; update rules follow the published
/// forms of SGD, RMSprop and Adam.
template <typename T>
class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::size_t dim) : cfg_(cfg), dim_(dim) {
    if (cfg.algo == OptAlgo::RmsProp) acc1_.assign(dim, T(0));
    if (cfg.algo == OptAlgo::Adam) {
      acc1_.assign(dim, T(0));
      acc2_.assign(dim, T(0));
    }
  }

  double learning_rate() const {
    if (cfg_.decay_steps <= 0) return cfg_.lr;
    const double frac = 1.0 - static_cast<double>(step_) / static_cast<double>(cfg_.decay_steps);
    return cfg_.lr * (frac > 0.0 ? frac : 0.0);
  }

  long step_count() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }

  void apply(std::vector<T>& params, const std::vector<T>& grads) {
    if (params.size() != dim_ || grads.size() != dim_)
      throw std::invalid_argument("optimizer: dimension mismatch");
    const T lr = static_cast<T>(learning_rate());
    switch (cfg_.algo) {
      case OptAlgo::Sgd:
        for (std::size_t i = 0; i < dim_; ++i) params[i] -= lr * grads[i];
        break;
      case OptAlgo::RmsProp: {
        const T rho = static_cast<T>(cfg_.rho), eps = static_cast<T>(cfg_.eps);
        for (std::size_t i = 0; i < dim_; ++i) {
          acc1_[i] = rho * acc1_[i] + (T(1) - rho) * grads[i] * grads[i];
          params[i] -= lr * grads[i] / (std::sqrt(acc1_[i]) + eps);
        }
        break;
      }
      case OptAlgo::Adam: {
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T eps = static_cast<T>(cfg_.eps);
        const long t = step_ + 1;
        const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t));
        const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t));
        for (std::size_t i = 0; i < dim_; ++i) {
          acc1_[i] = b1 * acc1_[i] + (T(1) - b1) * grads[i];
          acc2_[i] = b2 * acc2_[i] + (T(1) - b2) * grads[i] * grads[i];
          params[i] -= lr * (acc1_[i] / c1) / (std::sqrt(acc2_[i] / c2) + eps);
        }
        break;
      }
    }
    ++step_;
  }

 private:
  OptimizerConfig cfg_;
  std::size_t dim_ = 0;
  long step_ = 0;
  std::vector<T> acc1_, acc2_;
};

}  // namespace corrxfer
