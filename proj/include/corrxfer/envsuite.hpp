#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "corrxfer/rng.hpp"
#include "corrxfer/tensor.hpp"

// Miniature deterministic Pong on a coarse pixel grid, plus the frame
// transforms that generate target tasks from the source task.

namespace corrxfer {

// -- observation types --------------------------------------------------------

struct Frame {
  int h = 0, w = 0;
  std::shared_ptr<const std::vector<float>> px;  // h*w intensities in [0,1]

  float at(int r, int c) const { return (*px)[static_cast<std::size_t>(r) * w + c]; }
};

inline constexpr int kFramesPerState = 4;

/// The last 4 rendered frames, oldest first.
struct State {
  std::array<Frame, kFramesPerState> frames;

  int frame_h() const { return frames[0].h; }
  int frame_w() const { return frames[0].w; }
};

/// Copies a state into NCHW storage at batch row `n` (channels = frames).
template <typename T>
void state_into_tensor(const State& s, Tensor<T>& t, int n) {
  const int h = s.frame_h(), w = s.frame_w();
  for (int f = 0; f < kFramesPerState; ++f) {
    T* dst = t.ptr() + ((static_cast<std::size_t>(n) * kFramesPerState + f) * h) * w;
    const auto& px = *s.frames[f].px;
    for (int i = 0; i < h * w; ++i) dst[i] = static_cast<T>(px[i]);
  }
}

template <typename T = float>
Tensor<T> state_tensor(const State& s) {
  Tensor<T> t({1, kFramesPerState, s.frame_h(), s.frame_w()});
  T* dst = t.ptr();
  (void)dst;
  state_into_tensor(s, t, 0);
  return t;
}

// -- actions --------------------------------------------------------------------

inline constexpr int kNumActions = 6;

enum class Action : int { NoOp = 0, Fire = 1, Up = 2, Down = 3, UpFast = 4, DownFast = 5 };

inline Action action_from_id(int id) {
  if (id < 0 || id >= kNumActions) throw std::invalid_argument("action id out of range");
  return static_cast<Action>(id);
}
inline int action_id(Action a) { return static_cast<int>(a); }

// -- configuration ----------------------------------------------------------------

struct EnvConfig {
  std::uint64_t seed = 0;
  int points_to_win = 5;
  int frame_size = 32;
  int paddle_speed = 1;
  int ball_speed = 1;
  double opponent_skill = 0.9;  // probability the scripted opponent tracks the ball
  long max_episode_steps = 3000;

  void validate() const {
    if (frame_size < 8) throw std::invalid_argument("frame_size must be >= 8");
    if (points_to_win < 1) throw std::invalid_argument("points_to_win must be positive");
    if (paddle_speed < 1 || ball_speed < 1) throw std::invalid_argument("speeds must be positive");
    if (opponent_skill < 0.0 || opponent_skill > 1.0)
      throw std::invalid_argument("opponent_skill must be in [0,1]");
  }
};

struct StepResult {
  State state;
  float reward = 0.f;
  bool terminal = false;
};

// -- environment interface ----------------------------------------------------------

class Environment {
 public:
  virtual ~Environment() = default;
  virtual State reset() = 0;
  virtual StepResult step(Action a) = 0;
  virtual bool terminal() const = 0;
  virtual const EnvConfig& config() const = 0;
};

// -- MiniPong ------------------------------------------------------------------------

/// Left paddle is the agent, right paddle is a scripted opponent that tracks
/// the ball with probability opponent_skill per step. Ball serves are held at
/// the centre until FIRE is pressed or an auto-serve timer expires. Reward is
/// +1 / -1 per point; the game ends at points_to_win (or the step cap).
class MiniPong final : public Environment {
 public:
  struct Debug {
    int ball_r, ball_c, vel_r, vel_c;
    int agent_top, opp_top;
    int agent_score, opp_score;
    bool held;
  };

  explicit MiniPong(const EnvConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    rng_ = make_rng(cfg_.seed);
    reset();
  }

  State reset() override {
    const int fs = cfg_.frame_size;
    agent_score_ = opp_score_ = 0;
    agent_top_ = opp_top_ = (fs - paddle_h()) / 2;
    serve_dir_ = uniform_real(rng_) < 0.5 ? -1 : +1;
    hold_ball();
    terminal_ = false;
    episode_steps_ = 0;
    const Frame f = render();
    for (auto& slot : stack_) slot = f;
    return current_state();
  }

  StepResult step(Action a) override {
    if (terminal_) throw std::logic_error("step on terminal environment");
    move_agent(a);
    move_opponent();
    float reward = 0.f;
    if (held_) {
      ++held_steps_;
      if (a == Action::Fire || held_steps_ >= kAutoServeSteps) release_serve();
    } else {
      reward = move_ball();
    }
    ++episode_steps_;
    if (agent_score_ >= cfg_.points_to_win || opp_score_ >= cfg_.points_to_win ||
        episode_steps_ >= cfg_.max_episode_steps)
      terminal_ = true;
    push_frame(render());
    return {current_state(), reward, terminal_};
  }

  bool terminal() const override { return terminal_; }
  const EnvConfig& config() const override { return cfg_; }

  Debug debug() const {
    return {ball_r_, ball_c_, vel_r_, vel_c_, agent_top_, opp_top_, agent_score_, opp_score_, held_};
  }

  int paddle_h() const { return std::max(3, 5 * cfg_.frame_size / 32); }
  int agent_col() const { return std::max(1, cfg_.frame_size / 16); }
  int opp_col() const { return cfg_.frame_size - 1 - agent_col(); }

  // dyadic intensities keep IntensityInvert exactly involutive in float
  static constexpr int kAutoServeSteps = 10;
  static constexpr float kWall = 0.5f;
  static constexpr float kAgentPaddle = 1.0f;
  static constexpr float kOppPaddle = 0.75f;
  static constexpr float kBall = 1.0f;

 private:
  void hold_ball() {
    held_ = true;
    held_steps_ = 0;
    ball_r_ = cfg_.frame_size / 2;
    ball_c_ = cfg_.frame_size / 2;
    vel_r_ = 0;
    vel_c_ = 0;
  }

  void release_serve() {
    held_ = false;
    vel_c_ = serve_dir_;
    vel_r_ = uniform_real(rng_) < 0.5 ? -1 : +1;
  }

  void move_agent(Action a) {
    int dy = 0;
    switch (a) {
      case Action::Up: dy = -cfg_.paddle_speed; break;
      case Action::Down: dy = cfg_.paddle_speed; break;
      case Action::UpFast: dy = -2 * cfg_.paddle_speed; break;
      case Action::DownFast: dy = 2 * cfg_.paddle_speed; break;
      default: break;
    }
    agent_top_ = clamp_paddle(agent_top_ + dy);
  }

  void move_opponent() {
    if (uniform_real(rng_) >= cfg_.opponent_skill) return;
    const int centre = opp_top_ + paddle_h() / 2;
    if (ball_r_ < centre) opp_top_ = clamp_paddle(opp_top_ - 1);
    else if (ball_r_ > centre) opp_top_ = clamp_paddle(opp_top_ + 1);
  }

  int clamp_paddle(int top) const {
    const int lo = 1, hi = cfg_.frame_size - 1 - paddle_h();
    return top < lo ? lo : (top > hi ? hi : top);
  }

  // One point at most per step; sub-steps implement ball_speed > 1 without
  // tunnelling through paddles.
  float move_ball() {
    for (int sub = 0; sub < cfg_.ball_speed; ++sub) {
      int nr = ball_r_ + vel_r_;
      if (nr < 1 || nr > cfg_.frame_size - 2) {  // wall reflection
        vel_r_ = -vel_r_;
        nr = ball_r_ + vel_r_;
      }
      ball_r_ = nr;
      ball_c_ += vel_c_;
      if (ball_c_ == agent_col() && vel_c_ < 0 && covers(agent_top_, ball_r_)) {
        vel_c_ = +1;
        vel_r_ = aim_offset(agent_top_);
      } else if (ball_c_ == opp_col() && vel_c_ > 0 && covers(opp_top_, ball_r_)) {
        vel_c_ = -1;
        vel_r_ = aim_offset(opp_top_);
      } else if (ball_c_ <= 0) {
        ++opp_score_;
        serve_dir_ = -1;  // conceder receives
        hold_ball();
        return -1.f;
      } else if (ball_c_ >= cfg_.frame_size - 1) {
        ++agent_score_;
        serve_dir_ = +1;
        hold_ball();
        return +1.f;
      }
    }
    return 0.f;
  }

  bool covers(int top, int r) const { return r >= top && r < top + paddle_h(); }

  int aim_offset(int top) const {
    const int off = ball_r_ - (top + paddle_h() / 2);
    return off < 0 ? -1 : (off > 0 ? +1 : 0);
  }

  Frame render() const {
    const int fs = cfg_.frame_size;
    auto px = std::make_shared<std::vector<float>>(static_cast<std::size_t>(fs) * fs, 0.f);
    auto set = [&](int r, int c, float v) { (*px)[static_cast<std::size_t>(r) * fs + c] = v; };
    for (int c = 0; c < fs; ++c) {
      set(0, c, kWall);
      set(fs - 1, c, kWall);
    }
    for (int r = agent_top_; r < agent_top_ + paddle_h(); ++r) set(r, agent_col(), kAgentPaddle);
    for (int r = opp_top_; r < opp_top_ + paddle_h(); ++r) set(r, opp_col(), kOppPaddle);
    if (ball_r_ >= 0 && ball_r_ < fs && ball_c_ >= 0 && ball_c_ < fs) set(ball_r_, ball_c_, kBall);
    return Frame{fs, fs, std::move(px)};
  }

  void push_frame(Frame f) {
    for (int i = 0; i + 1 < kFramesPerState; ++i) stack_[i] = stack_[i + 1];
    stack_[kFramesPerState - 1] = std::move(f);
  }

  State current_state() const {
    State s;
    s.frames = stack_;
    return s;
  }

  EnvConfig cfg_;
  Rng rng_;
  std::array<Frame, kFramesPerState> stack_;
  int agent_top_ = 0, opp_top_ = 0;
  int ball_r_ = 0, ball_c_ = 0, vel_r_ = 0, vel_c_ = 0;
  int agent_score_ = 0, opp_score_ = 0;
  int serve_dir_ = -1;
  bool held_ = true;
  int held_steps_ = 0;
  bool terminal_ = true;
  long episode_steps_ = 0;
};

// -- state transforms ------------------------------------------------------------------

enum class TransformKind { Identity, Rotate90, MirrorHorizontal, IntensityInvert };

inline const char* transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Rotate90: return "rotate90";
    case TransformKind::MirrorHorizontal: return "mirror-horizontal";
    case TransformKind::IntensityInvert: return "intensity-invert";
  }
  return "?";
}

inline TransformKind transform_from_name(const std::string& s) {
  if (s == "identity") return TransformKind::Identity;
  if (s == "rotate90") return TransformKind::Rotate90;
  if (s == "mirror-horizontal") return TransformKind::MirrorHorizontal;
  if (s == "intensity-invert") return TransformKind::IntensityInvert;
  throw std::invalid_argument("unknown transform '" + s + "'");
}

/// Rotate90 moves pixel (r,c) to (c, H-1-r); mirror maps (r,c) to (r, W-1-c);
/// intensity inversion maps v to 1-v.
inline Frame apply_transform_frame(TransformKind k, const Frame& f) {
  if (k == TransformKind::Identity) return f;
  const int h = f.h, w = f.w;
  auto out = std::make_shared<std::vector<float>>(static_cast<std::size_t>(h) * w, 0.f);
  switch (k) {
    case TransformKind::Rotate90:
      if (h != w) throw std::invalid_argument("rotate90 requires square frames");
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) (*out)[static_cast<std::size_t>(c) * w + (h - 1 - r)] = f.at(r, c);
      break;
    case TransformKind::MirrorHorizontal:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) (*out)[static_cast<std::size_t>(r) * w + (w - 1 - c)] = f.at(r, c);
      break;
    case TransformKind::IntensityInvert:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) (*out)[static_cast<std::size_t>(r) * w + c] = 1.f - f.at(r, c);
      break;
    default:
      break;
  }
  return Frame{h, w, std::move(out)};
}

inline Frame apply_transform_frame_inverse(TransformKind k, const Frame& f) {
  if (k == TransformKind::Rotate90) {
    const int h = f.h, w = f.w;
    auto out = std::make_shared<std::vector<float>>(static_cast<std::size_t>(h) * w, 0.f);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) (*out)[static_cast<std::size_t>(r) * w + c] = f.at(c, h - 1 - r);
    return Frame{h, w, std::move(out)};
  }
  return apply_transform_frame(k, f);  // the others are involutions
}

inline State apply_transform(TransformKind k, const State& s) {
  State out;
  for (int i = 0; i < kFramesPerState; ++i) out.frames[i] = apply_transform_frame(k, s.frames[i]);
  return out;
}

inline State apply_transform_inverse(TransformKind k, const State& s) {
  State out;
  for (int i = 0; i < kFramesPerState; ++i)
    out.frames[i] = apply_transform_frame_inverse(k, s.frames[i]);
  return out;
}

/// Environment whose observations pass through a fixed frame transform;
/// rewards and the action space are untouched.
class TransformedEnv final : public Environment {
 public:
  TransformedEnv(TransformKind kind, const EnvConfig& cfg) : kind_(kind), base_(cfg) {}

  State reset() override { return apply_transform(kind_, base_.reset()); }
  StepResult step(Action a) override {
    StepResult r = base_.step(a);
    r.state = apply_transform(kind_, r.state);
    return r;
  }
  bool terminal() const override { return base_.terminal(); }
  const EnvConfig& config() const override { return base_.config(); }
  MiniPong& base() { return base_; }

 private:
  TransformKind kind_;
  MiniPong base_;
};

inline std::unique_ptr<Environment> wrapped_env(TransformKind kind, const EnvConfig& cfg) {
  return std::make_unique<TransformedEnv>(kind, cfg);
}

// -- rollout dumps ------------------------------------------------------------------------
// One episode per file: header `H W points_to_win seed`, then per step
// `t action reward terminal` followed by the newly appended frame as H rows
// of W intensities with 4 decimal places.

inline void write_rollout(std::ostream& os, Environment& env, const std::vector<Action>& actions) {
  const EnvConfig& cfg = env.config();
  env.reset();
  os << cfg.frame_size << ' ' << cfg.frame_size << ' ' << cfg.points_to_win << ' ' << cfg.seed
     << '\n';
  os << std::fixed << std::setprecision(4);
  long t = 0;
  for (Action a : actions) {
    if (env.terminal()) break;
    const StepResult r = env.step(a);
    os << t << ' ' << action_id(a) << ' ' << r.reward << ' ' << (r.terminal ? 1 : 0) << '\n';
    const Frame& f = r.state.frames[kFramesPerState - 1];
    for (int rr = 0; rr < f.h; ++rr) {
      for (int cc = 0; cc < f.w; ++cc) {
        if (cc) os << ' ';
        os << f.at(rr, cc);
      }
      os << '\n';
    }
    ++t;
  }
}

}  // namespace corrxfer
