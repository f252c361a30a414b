#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "corrxfer/approximator.hpp"
#include "corrxfer/graph.hpp"
#include "oracles.hpp"

using namespace corrxfer;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = scale * (2.0 * uniform_real(rng) - 1.0);
  return t;
}

ArchitectureSpec tiny_arch(const std::string& text, NetStyle style, int in_c, int hw,
                           int extra = 0) {
  ArchitectureSpec a;
  a.name = "tiny";
  a.in_channels = in_c;
  a.in_h = hw;
  a.in_w = hw;
  a.extra_inputs = extra;
  a.layers = parse_layer_string(text, style, 1);
  output_shape(a);
  return a;
}

}  // namespace

TEST_CASE("sum of squares has gradient 2 theta") {
  Graph<double> g;
  Tensor<double> theta({4}, {0.5, -1.0, 2.0, 0.0});
  auto t = g.leaf(theta, true);
  auto loss = g.scale(g.mean_all(g.mul(t, t)), 4.0);  // sum
  g.backward(loss);
  REQUIRE(loss->val.data[0] == Catch::Approx(0.25 + 1.0 + 4.0));
  for (int i = 0; i < 4; ++i)
    REQUIRE(g.grad_of(t).data[i] == Catch::Approx(2.0 * theta.data[i]));
}

TEST_CASE("constant loss has zero gradient") {
  Graph<double> g;
  auto t = g.leaf(Tensor<double>({3}, {1., 2., 3.}), true);
  auto c = g.leaf(Tensor<double>({3}, {5., 5., 5.}), false);
  auto loss = g.mean_all(c);
  g.backward(loss);
  REQUIRE(g.grad_if_any(t) == nullptr);
}

TEST_CASE("huber loss piecewise values") {
  Graph<double> g;
  auto pred = g.leaf(Tensor<double>({2}, {0.5, 2.0}), true);
  Tensor<double> target({2}, {0.0, 0.0});
  auto l = g.huber_mean(pred, target);
  REQUIRE(l->val.data[0] == Catch::Approx((0.125 + 1.5) / 2.0));
}

TEST_CASE("finite differences: conv/batchnorm/fc stacks") {
  Rng rng = make_rng(11);
  SECTION("tiny generator body (reflect pad, residual)") {
    auto arch = tiny_arch("c3s1-2,R2,c3s1-1", NetStyle::Generator, 1, 8);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 5);
    REQUIRE(f.param_count() <= 200);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    const auto target = random_tensor({2, 1, 8, 8}, rng);
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Train, true);
      return g.l1_mean(bind.out, g.leaf(target, false));
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
  SECTION("downsample + fractional-stride upsample pair") {
    auto arch = tiny_arch("d2,u2,c3s1-1", NetStyle::Generator, 1, 8);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 15);
    REQUIRE(f.param_count() <= 200);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    const auto target = random_tensor({2, 1, 8, 8}, rng);
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Train, true);
      return g.l1_mean(bind.out, g.leaf(target, false));
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
  SECTION("tiny discriminator with sigmoid-log head") {
    auto arch = tiny_arch("C2,C2", NetStyle::Discriminator, 1, 8);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 6);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Train, true);
      auto p = g.clamp(g.sigmoid(bind.out), 1e-7, 1.0 - 1e-7);
      return g.scale(g.mean_all(g.log(p)), -1.0);
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
  SECTION("tiny q net with gather + huber") {
    auto arch = tiny_arch("c-3-2-2,f-8,f-3", NetStyle::QNet, 1, 8);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 7);
    const auto x = random_tensor({3, 1, 8, 8}, rng);
    Tensor<double> target({3}, {0.3, -0.7, 2.5});
    std::vector<int> actions = {0, 2, 1};
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Eval, true);
      return g.huber_mean(g.gather_rows(bind.out, actions), target);
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
  SECTION("action injection (concat broadcast)") {
    auto arch = tiny_arch("c3s1-2,A2,c3s1-1", NetStyle::Generator, 1, 6, 2);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 8);
    const auto x = random_tensor({2, 1, 6, 6}, rng);
    Tensor<double> onehot({2, 2}, {1., 0., 0., 1.});
    const auto target = random_tensor({2, 1, 6, 6}, rng);
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      auto en = g.leaf(onehot, false);
      bind = net.forward(g, xn, en, Mode::Train, true);
      return g.l1_mean(bind.out, g.leaf(target, false));
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
  SECTION("batchnorm eval mode (running statistics)") {
    auto arch = tiny_arch("c3s1-2,d2,c3s1-1", NetStyle::Generator, 1, 8);
    Approximator<double> f(arch);
    oracles::randomize_params(f, 9);
    for (auto& b : f.buffers()) b = 0.3 + 0.1 * b;  // nudge stats off defaults
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    const auto target = random_tensor({2, 1, 4, 4}, rng);
    auto build = [&](Graph<double>& g, Approximator<double>& net,
                     Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Eval, true);
      return g.l1_mean(bind.out, g.leaf(target, false));
    };
    REQUIRE(oracles::max_rel_grad_error(f, build) < 1e-4);
  }
}

TEST_CASE("gradients flow through a frozen downstream network") {
  Rng rng = make_rng(21);
  auto arch1 = tiny_arch("c3s1-2,c3s1-1", NetStyle::Generator, 1, 6);
  auto arch2 = tiny_arch("c3s1-2,c3s1-1", NetStyle::Generator, 1, 6);
  Approximator<double> f1(arch1), f2(arch2);
  oracles::randomize_params(f1, 31);
  oracles::randomize_params(f2, 32);
  const auto x = random_tensor({1, 1, 6, 6}, rng);
  const auto snapshot = f2.params();
  auto build = [&](Graph<double>& g, Approximator<double>& net, Approximator<double>::Bound& bind) {
    auto xn = g.leaf(x, false);
    bind = net.forward(g, xn, Mode::Train, true);
    auto out2 = f2.forward(g, bind.out, Mode::Train, false);  // frozen
    return g.l1_mean(out2.out, g.leaf(x, false));
  };
  REQUIRE(oracles::max_rel_grad_error(f1, build) < 1e-4);
  REQUIRE(f2.params() == snapshot);
}

TEST_CASE("residual block with zero weights is the identity") {
  ArchitectureSpec a = tiny_arch("R2", NetStyle::Generator, 2, 6);
  Approximator<double> f(a);  // all-zero parameters
  Rng rng = make_rng(3);
  const auto x = random_tensor({1, 2, 6, 6}, rng);
  const auto y = f.eval(x, nullptr, Mode::Train);
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.data[i] == Catch::Approx(x.data[i]));
}

TEST_CASE("rotation layer") {
  SECTION("angle zero is the identity") {
    ArchitectureSpec a;
    a.name = "rot";
    a.in_channels = 1;
    a.in_h = a.in_w = 32;
    a.layers = {{LayerKind::Rotation}};
    Approximator<double> f(a);
    Rng rng = make_rng(4);
    const auto x = random_tensor({1, 1, 32, 32}, rng);
    const auto y = f.eval(x);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(y.data[i] - x.data[i]));
    REQUIRE(worst <= 1e-6);
  }
  SECTION("angle 90 degrees matches the grid rotation (0,0) -> (0,31)") {
    Tensor<double> x({1, 1, 32, 32});
    x.at4(0, 0, 0, 0) = 1.0;
    Tensor<double> y;
    rotate_forward(x, std::acos(-1.0) / 2.0, y);
    REQUIRE(y.at4(0, 0, 0, 31) == Catch::Approx(1.0));
    double total = 0.0;
    for (double v : y.data) total += std::abs(v);
    REQUIRE(total == Catch::Approx(1.0));
  }
  SECTION("input gradient is exact (map is linear in pixels)") {
    Rng rng = make_rng(5);
    Tensor<double> x = random_tensor({1, 1, 8, 8}, rng);
    const double angle = 0.37;
    Graph<double> g;
    auto xn = g.leaf(x, true);
    auto an = g.leaf(Tensor<double>({1}, {angle}), false);
    auto target = g.leaf(random_tensor({1, 1, 8, 8}, rng), false);
    auto loss = g.l1_mean(g.rotate_bilinear(xn, an), target);
    g.backward(loss);
    const auto base = loss->val.data[0];
    (void)base;
    for (std::size_t i : {std::size_t(9), std::size_t(27), std::size_t(35)}) {
      const double h = 1e-6;
      auto eval_at = [&](double v) {
        Tensor<double> xp = x;
        xp.data[i] = v;
        Graph<double> g2;
        auto l = g2.l1_mean(
            g2.rotate_bilinear(g2.leaf(xp, false), g2.leaf(Tensor<double>({1}, {angle}), false)),
            g2.leaf(target->val, false));
        return l->val.data[0];
      };
      const double fd = (eval_at(x.data[i] + h) - eval_at(x.data[i] - h)) / (2 * h);
      REQUIRE(g.grad_of(xn).data[i] == Catch::Approx(fd).margin(1e-6));
    }
  }
  SECTION("angle gradient vs finite differences on a smooth frame") {
    // The angle derivative is piecewise-smooth (bilinear kinks at pixel
    // crossings), so the check uses a smooth image and a looser tolerance.
    const int hw = 16;
    Tensor<double> x({1, 1, hw, hw});
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c)
        x.at4(0, 0, r, c) = 0.5 + 0.4 * std::sin(0.4 * r) * std::cos(0.3 * c);
    ArchitectureSpec a;
    a.name = "rot";
    a.in_channels = 1;
    a.in_h = a.in_w = hw;
    a.layers = {{LayerKind::Rotation}};
    Approximator<double> f(a);
    f.params()[0] = 0.31;
    Tensor<double> target({1, 1, hw, hw});
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c) target.at4(0, 0, r, c) = 0.5 + 0.3 * std::sin(0.2 * (r + c));
    auto build = [&](Graph<double>& g, Approximator<double>& net, Approximator<double>::Bound& bind) {
      auto xn = g.leaf(x, false);
      bind = net.forward(g, xn, Mode::Eval, true);
      return g.l1_mean(bind.out, g.leaf(target, false));
    };
    REQUIRE(oracles::max_rel_grad_error(f, build, 1e-5) < 1e-3);
  }
}
