#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "corrxfer/commands.hpp"
#include "corrxfer/correspondence.hpp"
#include "oracles.hpp"

using namespace corrxfer;

namespace {

ArchitectureSpec rotation_arch(int hw, int channels = kStateChannels) {
  ArchitectureSpec a;
  a.name = "rotation-generator";
  a.in_channels = channels;
  a.in_h = a.in_w = hw;
  a.layers = {{LayerKind::Rotation}};
  return a;
}

/// identity map as an Approximator (rotation layer at angle zero)
template <typename T>
Approximator<T> identity_net(int hw, int channels = kStateChannels) {
  return Approximator<T>(rotation_arch(hw, channels));
}

/// single fully-connected scalar map y = w*x + b on a 1x1 frame stack of 1
template <typename T>
Approximator<T> scalar_map(T w, T b) {
  ArchitectureSpec a;
  a.name = "scalar";
  a.in_channels = 1;
  a.in_h = a.in_w = 1;
  a.layers = {{LayerKind::FC, 0, 1, 1}};
  Approximator<T> f(a);
  f.params() = {w, b};
  return f;
}

template <typename T>
Tensor<T> random_states(int n, int hw, Rng& rng, int channels = kStateChannels) {
  Tensor<T> t({n, channels, hw, hw});
  for (auto& v : t.data) v = static_cast<T>(uniform_real(rng));
  return t;
}

}  // namespace

TEST_CASE("lambda machinery") {
  SECTION("grid has 18 points") { REQUIRE(lambda_grid_experiment1().size() == 18); }
  SECTION("named presets") {
    REQUIRE(lambda_preset("GAN") == LossWeights{0, 0, 0});
    REQUIRE(lambda_preset("CycleGAN") == LossWeights{10, 0, 0});
    REQUIRE(lambda_preset("full") == LossWeights{1, 1, 1});
    REQUIRE(lambda_preset("model-only") == LossWeights{0, 0, 10});
    REQUIRE(lambda_preset("resnet-best") == LossWeights{1, 0, 1});
    REQUIRE_THROWS_AS(lambda_preset("bogus"), std::invalid_argument);
  }
  SECTION("total loss arithmetic") {
    REQUIRE(total_loss({-2, 1, 2, 3}, {1, 1, 1}) == Catch::Approx(4.0));
  }
  SECTION("zero weights reduce bit-exactly to the GAN term") {
    const LossComponents c{-2.77258872223978, 0.73, 0.41, 0.99};
    const double v = total_loss(c, {0, 0, 0});
    REQUIRE(std::memcmp(&v, &c.gan, sizeof(double)) == 0);
  }
  SECTION("negative weights are rejected") {
    REQUIRE_THROWS_AS(total_loss({0, 0, 0, 0}, {-1, 0, 0}), std::invalid_argument);
  }
}

TEST_CASE("gan loss values") {
  Rng rng = make_rng(31);
  const int hw = 8;
  const auto batch_s = random_states<float>(2, hw, rng);
  const auto batch_t = random_states<float>(2, hw, rng);
  auto g_s = Approximator<float>::init(preset("desk-generator", hw), 1);
  auto g_t = Approximator<float>::init(preset("desk-generator", hw), 2);

  SECTION("discriminators at exactly 0.5 give 4 ln(1/2)") {
    // zero-parameter discriminators emit zero logits -> probability 1/2
    Approximator<float> d_s(preset("desk-discriminator", hw));
    Approximator<float> d_t(preset("desk-discriminator", hw));
    const auto r = gan_loss(batch_s, batch_t, g_s, g_t, d_s, d_t);
    REQUIRE(r.value == Catch::Approx(4.0 * std::log(0.5)).epsilon(1e-5));
  }
  SECTION("saturated discriminators stay finite under the probability clamp") {
    ArchitectureSpec a;
    a.name = "bias-disc";
    a.in_channels = kStateChannels;
    a.in_h = a.in_w = hw;
    a.layers = {{LayerKind::Conv, 1, 1, 1, 0, PadMode::Zero, 0}};
    Approximator<float> d_s(a), d_t(a);
    d_s.params().back() = 50.f;  // bias: logits +50 everywhere
    d_t.params().back() = 50.f;
    const auto r = gan_loss(batch_s, batch_t, g_s, g_t, d_s, d_t);
    REQUIRE(std::isfinite(r.value));
    // real terms approach 0 from below, fake terms are pinned by the clamp
    REQUIRE(r.value < 0.0);
    REQUIRE(r.value >= 4.0 * std::log(kProbClamp));
  }
}

TEST_CASE("gan loss gradients match finite differences") {
  Rng rng = make_rng(33);
  const int hw = 6;
  const auto batch_s = random_states<double>(1, hw, rng, 1);
  const auto batch_t = random_states<double>(1, hw, rng, 1);
  ArchitectureSpec ga;
  ga.name = "tiny-gen";
  ga.in_channels = 1;
  ga.in_h = ga.in_w = hw;
  ga.layers = parse_layer_string("c3s1-2,c3s1-1", NetStyle::Generator, 1);
  ArchitectureSpec da;
  da.name = "tiny-disc";
  da.in_channels = 1;
  da.in_h = da.in_w = hw;
  da.layers = parse_layer_string("C2", NetStyle::Discriminator, 1);
  Approximator<double> g_s(ga), g_t(ga), d_s(da), d_t(da);
  oracles::randomize_params(g_s, 41, 0.4);
  oracles::randomize_params(g_t, 42, 0.4);
  oracles::randomize_params(d_s, 43, 0.4);
  oracles::randomize_params(d_t, 44, 0.4);
  REQUIRE(d_s.param_count() + g_s.param_count() <= 200);

  const auto base = gan_loss(batch_s, batch_t, g_s, g_t, d_s, d_t);

  SECTION("discriminator gradients descend the negated objective") {
    const double h = 1e-4;
    for (std::size_t i = 0; i < d_s.param_count(); i += 3) {
      const double keep = d_s.params()[i];
      d_s.params()[i] = keep + h;
      const double up = gan_loss(batch_s, batch_t, g_s, g_t, d_s, d_t).value;
      d_s.params()[i] = keep - h;
      const double dn = gan_loss(batch_s, batch_t, g_s, g_t, d_s, d_t).value;
      d_s.params()[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(base.grad_d_s[i]), 0.01});
      REQUIRE(std::abs(-base.grad_d_s[i] - fd) / denom < 1e-4);
    }
  }
  SECTION("generator gradients match the non-saturating surrogate") {
    auto surrogate = [&]() {
      Graph<double> g;
      auto gs = g_s.forward(g, g.leaf(batch_s, false), Mode::Train, false);
      auto gt = g_t.forward(g, g.leaf(batch_t, false), Mode::Train, false);
      auto ds = d_s.forward(g, gt.out, Mode::Train, false);
      auto dt = d_t.forward(g, gs.out, Mode::Train, false);
      auto t1 = g.mean_all(g.log(g.clamp(g.sigmoid(ds.out), kProbClamp, 1 - kProbClamp)));
      auto t2 = g.mean_all(g.log(g.clamp(g.sigmoid(dt.out), kProbClamp, 1 - kProbClamp)));
      return -(t1->val.data[0] + t2->val.data[0]);
    };
    const double h = 1e-4;
    for (std::size_t i = 0; i < g_s.param_count(); i += 2) {
      const double keep = g_s.params()[i];
      g_s.params()[i] = keep + h;
      const double up = surrogate();
      g_s.params()[i] = keep - h;
      const double dn = surrogate();
      g_s.params()[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(base.grad_g_s[i]), 0.01});
      REQUIRE(std::abs(base.grad_g_s[i] - fd) / denom < 1e-4);
    }
  }
  SECTION("empty batches are rejected") {
    Tensor<double> empty;
    REQUIRE_THROWS_AS(gan_loss(empty, batch_t, g_s, g_t, d_s, d_t), std::exception);
  }
}

TEST_CASE("cycle loss") {
  SECTION("identity generators give zero") {
    Rng rng = make_rng(35);
    const int hw = 8;
    const auto batch_s = random_states<float>(2, hw, rng);
    const auto batch_t = random_states<float>(2, hw, rng);
    const auto gi = identity_net<float>(hw);
    const auto r = cycle_loss(batch_s, batch_t, gi, gi);
    REQUIRE(r.value == 0.0f);
    for (float g : r.grad_g_s) REQUIRE(g == 0.0f);
  }
  SECTION("scalar toy: G_S adds one, G_T is identity") {
    // each cycle leaves a unit gap: |G_T(G_S(0)) - 0| + |G_S(G_T(0)) - 0| = 2
    const auto g_s = scalar_map<double>(1.0, 1.0);
    const auto g_t = scalar_map<double>(1.0, 0.0);
    Tensor<double> zero({1, 1, 1, 1});
    const auto r = cycle_loss(zero, zero, g_s, g_t);
    REQUIRE(r.value == Catch::Approx(2.0));
  }
  SECTION("never negative") {
    Rng rng = make_rng(36);
    const int hw = 8;
    auto g_s = Approximator<float>::init(preset("desk-generator", hw), 7);
    auto g_t = Approximator<float>::init(preset("desk-generator", hw), 8);
    const auto r = cycle_loss(random_states<float>(2, hw, rng), random_states<float>(2, hw, rng),
                              g_s, g_t);
    REQUIRE(r.value >= 0.0f);
  }
  SECTION("gradient check") {
    Rng rng = make_rng(37);
    const int hw = 6;
    ArchitectureSpec ga;
    ga.name = "tiny-gen";
    ga.in_channels = 1;
    ga.in_h = ga.in_w = hw;
    ga.layers = parse_layer_string("c3s1-2,c3s1-1", NetStyle::Generator, 1);
    Approximator<double> g_s(ga), g_t(ga);
    oracles::randomize_params(g_s, 51, 0.4);
    oracles::randomize_params(g_t, 52, 0.4);
    const auto batch_s = random_states<double>(1, hw, rng, 1);
    const auto batch_t = random_states<double>(1, hw, rng, 1);
    const auto base = cycle_loss(batch_s, batch_t, g_s, g_t);
    const double h = 1e-4;
    for (std::size_t i = 0; i < g_t.param_count(); i += 2) {
      const double keep = g_t.params()[i];
      g_t.params()[i] = keep + h;
      const double up = cycle_loss(batch_s, batch_t, g_s, g_t).value;
      g_t.params()[i] = keep - h;
      const double dn = cycle_loss(batch_s, batch_t, g_s, g_t).value;
      g_t.params()[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(base.grad_g_t[i]), 0.01});
      REQUIRE(std::abs(base.grad_g_t[i] - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("q loss") {
  SECTION("identity generators give zero") {
    Rng rng = make_rng(38);
    const int hw = 8;
    const auto batch_s = random_states<float>(2, hw, rng);
    const auto gi = identity_net<float>(hw);
    auto q = Approximator<float>::init(preset("desk-q", hw), 9);
    REQUIRE(q_loss(batch_s, gi, gi, q).value == 0.0f);
  }
  SECTION("constant Q gives zero for any generators") {
    Rng rng = make_rng(39);
    const int hw = 8;
    const auto batch_s = random_states<float>(2, hw, rng);
    auto g_s = Approximator<float>::init(preset("desk-generator", hw), 10);
    auto g_t = Approximator<float>::init(preset("desk-generator", hw), 11);
    Approximator<float> q(preset("desk-q", hw));  // all-zero parameters
    REQUIRE(q_loss(batch_s, g_s, g_t, q).value == 0.0f);
  }
  SECTION("1-dim toy: Q(s) = (s, 2s), round trip lands at 1.5") {
    const auto g_s = scalar_map<double>(1.5, 0.0);  // G_S(1) = 1.5
    const auto g_t = scalar_map<double>(1.0, 0.0);  // identity
    ArchitectureSpec qa;
    qa.name = "toy-q";
    qa.in_channels = 1;
    qa.in_h = qa.in_w = 1;
    qa.layers = {{LayerKind::FC, 0, 1, 2}};
    Approximator<double> q(qa);
    q.params() = {1.0, 2.0, 0.0, 0.0};  // weights (1,2), zero biases
    Tensor<double> one({1, 1, 1, 1}, {1.0});
    const auto r = q_loss(one, g_s, g_t, q);
    REQUIRE(r.value == Catch::Approx(1.5));
  }
  SECTION("no gradient reaches a frozen Q") {
    Rng rng = make_rng(40);
    const int hw = 8;
    auto g_s = Approximator<float>::init(preset("desk-generator", hw), 12);
    auto g_t = Approximator<float>::init(preset("desk-generator", hw), 13);
    auto q = Approximator<float>::init(preset("desk-q", hw), 14);
    const auto snapshot = q.params();
    (void)q_loss(random_states<float>(2, hw, rng), g_s, g_t, q);
    REQUIRE(q.params() == snapshot);
  }
}

TEST_CASE("model loss") {
  const int hw = 8;
  SECTION("static transitions with an identity model give zero") {
    Rng rng = make_rng(41);
    const auto batch_t = random_states<float>(2, hw, rng);
    Tensor<float> onehot({2, kNumActions});
    onehot.data[0] = 1.f;
    onehot.data[kNumActions + 3] = 1.f;
    // F that copies its state input and ignores the injected actions
    ArchitectureSpec fa;
    fa.name = "copy-model";
    fa.in_channels = kStateChannels;
    fa.in_h = fa.in_w = hw;
    fa.extra_inputs = 6;
    fa.layers = {{LayerKind::ActionInject, 0, 1, 0, 0, PadMode::Zero, 6},
                 {LayerKind::Conv, 1, 1, kStateChannels, 0, PadMode::Zero, 0}};
    Approximator<float> f(fa);
    for (int out = 0; out < kStateChannels; ++out)
      f.params()[static_cast<std::size_t>(out) * (kStateChannels + 6) + out] = 1.f;
    const auto gi = identity_net<float>(hw);
    const auto r = model_loss(batch_t, onehot, batch_t, gi, EnvironmentModel{f}.net);
    REQUIRE(r.value == 0.0f);
  }
  SECTION("gradient check (gradients reach G_T only)") {
    Rng rng = make_rng(42);
    ArchitectureSpec ga;
    ga.name = "tiny-gen";
    ga.in_channels = 1;
    ga.in_h = ga.in_w = hw;
    ga.layers = parse_layer_string("c3s1-2,c3s1-1", NetStyle::Generator, 1);
    ArchitectureSpec fa;
    fa.name = "tiny-model";
    fa.in_channels = 1;
    fa.in_h = fa.in_w = hw;
    fa.extra_inputs = 2;
    fa.layers = parse_layer_string("c3s1-2,A2,c3s1-1", NetStyle::Model, 1);
    Approximator<double> g_t(ga), f(fa);
    oracles::randomize_params(g_t, 61, 0.4);
    oracles::randomize_params(f, 62, 0.4);
    const auto batch_t = random_states<double>(1, hw, rng, 1);
    const auto batch_next = random_states<double>(1, hw, rng, 1);
    Tensor<double> onehot({1, 2}, {1.0, 0.0});
    const auto f_snapshot = f.params();
    const auto base = model_loss(batch_t, onehot, batch_next, g_t, f);
    REQUIRE(f.params() == f_snapshot);
    const double h = 1e-4;
    for (std::size_t i = 0; i < g_t.param_count(); i += 2) {
      const double keep = g_t.params()[i];
      g_t.params()[i] = keep + h;
      const double up = model_loss(batch_t, onehot, batch_next, g_t, f).value;
      g_t.params()[i] = keep - h;
      const double dn = model_loss(batch_t, onehot, batch_next, g_t, f).value;
      g_t.params()[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(base.grad_g_t[i]), 0.01});
      REQUIRE(std::abs(base.grad_g_t[i] - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("correspondence training loop (smoke scale)") {
  EnvConfig env_cfg;
  env_cfg.seed = 70;
  env_cfg.frame_size = 8;
  env_cfg.points_to_win = 1;
  env_cfg.max_episode_steps = 120;
  const ExperienceMemory m_s = collect_random_memory(TransformKind::Identity, env_cfg, 50, 71);
  const ExperienceMemory m_t = collect_random_memory(TransformKind::Identity, env_cfg, 50, 72);
  auto q_s = Approximator<float>::init(preset("desk-q", 8), 73);
  ModelConfig mc;
  mc.epochs = 1;
  const EnvironmentModel f = train_model(m_s, mc, 74);

  CorrespondenceConfig cfg;
  cfg.total_steps = 24;
  cfg.eval_interval = 8;
  cfg.eval_games = 1;
  cfg.batch_size = 2;

  const auto q_snapshot = q_s.params();
  const auto f_snapshot = f.net.params();
  long dumps = 0;
  CorrespondenceHooks hooks;
  hooks.on_progress_dump = [&](long, const State&, const State& mapped) {
    ++dumps;
    REQUIRE(mapped.frame_h() == 8);
  };
  const CorrespondenceResult r =
      train_correspondence(m_s, m_t, q_s, f, cfg, TransformKind::Identity, env_cfg, 75, hooks);

  SECTION("eval log row count equals floor(total_steps / eval_interval)") {
    REQUIRE(r.log.size() == 3);
    REQUIRE(dumps == 3);
    for (std::size_t i = 0; i < r.log.size(); ++i)
      REQUIRE(r.log[i].step == static_cast<long>(8 * (i + 1)));
  }
  SECTION("frozen networks are untouched") {
    REQUIRE(q_s.params() == q_snapshot);
    REQUIRE(f.net.params() == f_snapshot);
  }
  SECTION("best checkpoint is the earliest maximum of the eval rewards") {
    double best = -1e30;
    long best_step = 0;
    for (const auto& row : r.log)
      if (row.avg_reward > best) {
        best = row.avg_reward;
        best_step = row.step;
      }
    REQUIRE(r.best_score == Catch::Approx(best));
    REQUIRE(r.best_step == best_step);
  }
  SECTION("GAN baseline skips the weighted components") {
    CorrespondenceConfig gan_cfg = cfg;
    gan_cfg.weights = lambda_preset("GAN");
    const auto rg =
        train_correspondence(m_s, m_t, q_s, f, gan_cfg, TransformKind::Identity, env_cfg, 75);
    for (const auto& row : rg.log) {
      REQUIRE(row.loss_cyc == 0.0);
      REQUIRE(row.loss_q == 0.0);
      REQUIRE(row.loss_m == 0.0);
    }
  }
}
