#include <catch2/catch_amalgamated.hpp>

#include "corrxfer/replay.hpp"
#include "oracles.hpp"

using namespace corrxfer;

namespace {

State tagged_state(float tag, int hw = 8) {
  auto px = std::make_shared<std::vector<float>>(static_cast<std::size_t>(hw) * hw, tag);
  State s;
  for (auto& f : s.frames) f = Frame{hw, hw, px};
  return s;
}

Transition tagged(float tag, int hw = 8) {
  return Transition{tagged_state(tag, hw), Action::NoOp, tag, tagged_state(tag, hw), false};
}

}  // namespace

TEST_CASE("push keeps FIFO order and evicts the oldest") {
  ExperienceMemory m(3);
  for (int i = 1; i <= 4; ++i) m.push(tagged(static_cast<float>(i)));
  REQUIRE(m.size() == 3);
  REQUIRE(m[0].r == 2.f);
  REQUIRE(m[1].r == 3.f);
  REQUIRE(m[2].r == 4.f);
}

TEST_CASE("push to empty memory gives size 1") {
  ExperienceMemory m(5);
  m.push(tagged(1.f));
  REQUIRE(m.size() == 1);
}

TEST_CASE("dimension mismatches are rejected") {
  ExperienceMemory m(5);
  m.push(tagged(1.f, 8));
  REQUIRE_THROWS_AS(m.push(tagged(2.f, 16)), std::invalid_argument);
  // s and s_next must agree too
  Transition bad{tagged_state(1.f, 8), Action::NoOp, 0.f, tagged_state(1.f, 16), false};
  REQUIRE_THROWS_AS(m.push(bad), std::invalid_argument);
}

TEST_CASE("FIFO property: after k > capacity pushes the last capacity remain in order") {
  const std::size_t cap = 7;
  ExperienceMemory m(cap);
  const int k = 23;
  for (int i = 1; i <= k; ++i) m.push(tagged(static_cast<float>(i)));
  REQUIRE(m.size() == cap);
  for (std::size_t i = 0; i < cap; ++i)
    REQUIRE(m[i].r == static_cast<float>(k - static_cast<int>(cap) + 1 + static_cast<int>(i)));
}

TEST_CASE("sampling the whole memory returns each item once") {
  ExperienceMemory m(4);
  for (int i = 0; i < 4; ++i) m.push(tagged(static_cast<float>(i)));
  Rng rng = make_rng(1);
  const auto batch = m.sample(4, rng);
  std::vector<bool> seen(4, false);
  for (const Transition* t : batch) seen[static_cast<std::size_t>(t->r)] = true;
  for (bool b : seen) REQUIRE(b);
}

TEST_CASE("oversampling is an error") {
  ExperienceMemory m(8);
  for (int i = 0; i < 3; ++i) m.push(tagged(static_cast<float>(i)));
  Rng rng = make_rng(2);
  REQUIRE_THROWS_AS(m.sample(5, rng), std::invalid_argument);
}

TEST_CASE("sampling is deterministic per rng seed") {
  ExperienceMemory m(64);
  for (int i = 0; i < 64; ++i) m.push(tagged(static_cast<float>(i)));
  Rng r1 = make_rng(99), r2 = make_rng(99);
  REQUIRE(m.sample_indices(16, r1) == m.sample_indices(16, r2));
}

TEST_CASE("single-draw frequencies stay within 4 binomial deviations") {
  ExperienceMemory m(4);
  for (int i = 0; i < 4; ++i) m.push(tagged(static_cast<float>(i)));
  Rng rng = make_rng(7);
  std::vector<long> counts(4, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[m.sample_indices(1, rng)[0]];
  // binomial std for p=1/4, n=10000 is sqrt(10000*0.25*0.75) = 43.30
  for (long c : counts) {
    REQUIRE(c > 2500 - 4 * 43.31);
    REQUIRE(c < 2500 + 4 * 43.31);
  }
}

TEST_CASE("uniformity passes a chi-square test at significance 0.01") {
  ExperienceMemory m(10);
  for (int i = 0; i < 10; ++i) m.push(tagged(static_cast<float>(i)));
  Rng rng = make_rng(11);
  std::vector<long> counts(10, 0);
  for (int i = 0; i < 10000; ++i) ++counts[m.sample_indices(1, rng)[0]];
  REQUIRE(oracles::chi_square_uniform(counts) < oracles::kChi2Crit99Df9);
}

TEST_CASE("batch samples are without replacement") {
  ExperienceMemory m(32);
  for (int i = 0; i < 32; ++i) m.push(tagged(static_cast<float>(i)));
  Rng rng = make_rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    const auto idx = m.sample_indices(8, rng);
    std::vector<bool> seen(32, false);
    for (std::size_t i : idx) {
      REQUIRE_FALSE(seen[i]);
      seen[i] = true;
    }
  }
}
