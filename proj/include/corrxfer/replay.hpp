#pragma once

#include <deque>
#include <stdexcept>
#include <vector>

#include "corrxfer/envsuite.hpp"
#include "corrxfer/rng.hpp"

namespace corrxfer {

/// One experience record.
struct Transition {
  State s;
  Action a = Action::NoOp;
  float r = 0.f;
  State s_next;
  bool terminal = false;
};

/// Fixed-capacity FIFO experience memory with uniform mini-batch sampling.
class ExperienceMemory {
 public:
  explicit ExperienceMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("memory capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return buf_.size(); }
  bool empty() const { return buf_.empty(); }
  const Transition& operator[](std::size_t i) const { return buf_[i]; }

  void push(Transition t) {
    if (t.s.frame_h() != t.s_next.frame_h() || t.s.frame_w() != t.s_next.frame_w())
      throw std::invalid_argument("push: state dimensions disagree");
    if (!buf_.empty() &&
        (t.s.frame_h() != buf_.front().s.frame_h() || t.s.frame_w() != buf_.front().s.frame_w()))
      throw std::invalid_argument("push: transition dimensions do not match memory contents");
    if (buf_.size() == capacity_) buf_.pop_front();
    buf_.push_back(std::move(t));
  }

  /// n distinct indices drawn uniformly (Floyd's algorithm); deterministic for
  /// a given rng state.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (n > buf_.size()) throw std::invalid_argument("sample: batch exceeds memory size");
    std::vector<std::size_t> out;
    out.reserve(n);
    std::vector<bool> taken(buf_.size(), false);
    for (std::size_t i = buf_.size() - n; i < buf_.size(); ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)));
      if (taken[j]) {
        taken[i] = true;
        out.push_back(i);
      } else {
        taken[j] = true;
        out.push_back(j);
      }
    }
    return out;
  }

  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t i : sample_indices(n, rng)) out.push_back(&buf_[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<Transition> buf_;
};

}  // namespace corrxfer
