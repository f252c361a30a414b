#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "corrxfer/checkpoint.hpp"
#include "corrxfer/config.hpp"
#include "corrxfer/correspondence.hpp"
#include "corrxfer/dynamics.hpp"
#include "corrxfer/transfer.hpp"

// Implementations behind the CLI subcommands. Each command reads its inputs
// from the configured output directory, refuses to clobber existing outputs
// unless forced, and reports missing inputs via MissingArtifactError.

namespace corrxfer {

namespace fs = std::filesystem;

struct ArtifactPaths {
  fs::path dir;
  explicit ArtifactPaths(const std::string& out_dir) : dir(out_dir) {}

  std::string q_source() const { return (dir / "q_source.ckpt").string(); }
  std::string memory_source() const { return (dir / "memory_source.mem").string(); }
  std::string model_source() const { return (dir / "model_source.ckpt").string(); }
  std::string train_log() const { return (dir / "train_source_log.csv").string(); }
  std::string memory_target() const { return (dir / "memory_target.mem").string(); }
  std::string eval_csv() const { return (dir / "correspondence_eval.csv").string(); }
  std::string best_ckpt() const { return (dir / "g_target_best.ckpt").string(); }
  std::string progress_dir() const { return (dir / "progress").string(); }
  std::string comparison_csv() const { return (dir / "transfer_comparison.csv").string(); }
};

namespace detail {

inline void refuse_existing(const std::vector<std::string>& outputs, bool force) {
  if (force) return;
  for (const auto& p : outputs)
    if (fs::exists(p))
      throw std::invalid_argument("output already exists: " + p + " (re-run with --force)");
}

inline void require_artifact(const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifactError(path);
}

inline std::string format_lambda(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace detail

/// Encodes one sweep point into a file stem; parse_sweep_stem inverts it.
inline std::string sweep_stem(const LossWeights& w, const std::string& generator) {
  return "cyc" + detail::format_lambda(w.cyc) + "_q" + detail::format_lambda(w.q) + "_m" +
         detail::format_lambda(w.m) + "_" + generator;
}

inline bool parse_sweep_stem(const std::string& stem, LossWeights& w, std::string& generator) {
  if (stem.rfind("cyc", 0) != 0) return false;
  const auto qpos = stem.find("_q");
  const auto mpos = stem.find("_m", qpos + 1);
  const auto gpos = stem.find('_', mpos + 2);
  if (qpos == std::string::npos || mpos == std::string::npos || gpos == std::string::npos)
    return false;
  try {
    w.cyc = std::stod(stem.substr(3, qpos - 3));
    w.q = std::stod(stem.substr(qpos + 2, mpos - qpos - 2));
    w.m = std::stod(stem.substr(mpos + 2, gpos - mpos - 2));
  } catch (...) {
    return false;
  }
  generator = stem.substr(gpos + 1);
  return !generator.empty();
}

// -- step 1: source task ------------------------------------------------------------

inline void write_episode_csv(const std::string& path, const std::vector<EpisodeLog>& rows) {
  std::ofstream os(path);
  os << "episode,steps,accumulated_reward,epsilon\n";
  for (const auto& r : rows)
    os << r.episode << ',' << r.steps << ',' << r.accumulated_reward << ',' << r.epsilon << '\n';
}

/// DQN on the source task; persists Q_S, M_S, the environment model F and the
/// per-episode training log.
inline void cmd_train_source(const RunConfig& cfg, bool force) {
  cfg.validate();
  ArtifactPaths paths(cfg.out_dir);
  detail::refuse_existing(
      {paths.q_source(), paths.memory_source(), paths.model_source(), paths.train_log()}, force);
  fs::create_directories(paths.dir);

  EnvConfig env_cfg = cfg.env;
  env_cfg.seed = cfg.seeds.env;
  MiniPong env(env_cfg);
  DqnTrainResult result = dqn_train(env, cfg.dqn, cfg.seeds.init);
  ModelTrainLog model_log;
  const EnvironmentModel model = train_model(result.memory, cfg.model, cfg.seeds.sample, &model_log);

  save_checkpoint(paths.q_source(), result.q, cfg.seeds.init, result.steps_run);
  save_memory(paths.memory_source(), result.memory);
  save_checkpoint(paths.model_source(), model.net, cfg.seeds.sample,
                  static_cast<long>(model_log.epoch_loss.size()));
  write_episode_csv(paths.train_log(), result.episodes);
}

// -- step 2: target memory ------------------------------------------------------------

/// Uniform-random rollouts on the target task until the requested number of
/// transitions is collected.
inline ExperienceMemory collect_random_memory(TransformKind kind, EnvConfig env_cfg,
                                              long transitions, std::uint64_t seed) {
  env_cfg.seed = seed;
  TransformedEnv env(kind, env_cfg);
  ExperienceMemory memory(static_cast<std::size_t>(transitions));
  Rng rng = make_rng(seed, 1);
  State s = env.reset();
  while (memory.size() < static_cast<std::size_t>(transitions)) {
    const Action a = action_from_id(uniform_int(rng, 0, kNumActions - 1));
    const StepResult r = env.step(a);
    memory.push({s, a, r.reward, r.state, r.terminal});
    s = r.terminal ? env.reset() : r.state;
  }
  return memory;
}

inline void cmd_collect_target(const RunConfig& cfg, bool force) {
  cfg.validate();
  ArtifactPaths paths(cfg.out_dir);
  detail::refuse_existing({paths.memory_target()}, force);
  fs::create_directories(paths.dir);
  const ExperienceMemory memory =
      collect_random_memory(cfg.transform, cfg.env, cfg.collect_transitions, cfg.seeds.collect);
  save_memory(paths.memory_target(), memory);
}

// -- steps 3-4: correspondence learning -------------------------------------------------

inline void write_progress_dump(const std::string& path, long step, const State& original,
                                const State& mapped) {
  std::ofstream os(path);
  os << original.frame_h() << ' ' << original.frame_w() << ' ' << step << '\n';
  os << std::fixed << std::setprecision(4);
  auto emit = [&](const State& s) {
    for (const Frame& f : s.frames) {
      for (int r = 0; r < f.h; ++r) {
        for (int c = 0; c < f.w; ++c) {
          if (c) os << ' ';
          os << f.at(r, c);
        }
        os << '\n';
      }
    }
  };
  emit(original);  // left half of the paper's side-by-side figures
  emit(mapped);    // right half: the same state through G_T
}

struct LearnCorrespondenceOutputs {
  std::string eval_csv;
  std::string best_ckpt;
  std::string progress_dir;
};

inline CorrespondenceResult run_learn_correspondence(const RunConfig& cfg,
                                                     const Approximator<float>& q_s,
                                                     const EnvironmentModel& f,
                                                     const ExperienceMemory& m_s,
                                                     const ExperienceMemory& m_t,
                                                     const LearnCorrespondenceOutputs& out) {
  fs::create_directories(out.progress_dir);
  std::ofstream csv(out.eval_csv);
  if (!csv) throw std::runtime_error("cannot write " + out.eval_csv);
  csv << "step,avg_reward,loss_gan,loss_cyc,loss_q,loss_m\n";
  CorrespondenceHooks hooks;
  hooks.on_eval_row = [&csv](const CorrespondenceEvalRow& r) {
    csv << r.step << ',' << r.avg_reward << ',' << r.loss_gan << ',' << r.loss_cyc << ',' << r.loss_q
        << ',' << r.loss_m << '\n';
    csv.flush();
  };
  hooks.on_progress_dump = [&out](long step, const State& original, const State& mapped) {
    write_progress_dump((fs::path(out.progress_dir) / ("progress_step" + std::to_string(step) + ".txt")).string(),
                        step, original, mapped);
  };
  EnvConfig env_cfg = cfg.env;
  CorrespondenceResult result = train_correspondence(m_s, m_t, q_s, f, cfg.corr, cfg.transform,
                                                     env_cfg, cfg.seeds.init, hooks);
  save_checkpoint(out.best_ckpt, result.best.g_t, cfg.seeds.init, result.best_step);
  return result;
}

inline void cmd_learn_correspondence(const RunConfig& cfg, bool force) {
  cfg.validate();
  ArtifactPaths paths(cfg.out_dir);
  detail::require_artifact(paths.q_source());
  detail::require_artifact(paths.model_source());
  detail::require_artifact(paths.memory_source());
  detail::require_artifact(paths.memory_target());
  detail::refuse_existing({paths.eval_csv(), paths.best_ckpt()}, force);

  const Approximator<float> q_s = load_checkpoint(paths.q_source());
  const EnvironmentModel f{load_checkpoint(paths.model_source())};
  const ExperienceMemory m_s = load_memory(paths.memory_source());
  const ExperienceMemory m_t = load_memory(paths.memory_target());
  run_learn_correspondence(cfg, q_s, f, m_s, m_t,
                           {paths.eval_csv(), paths.best_ckpt(), paths.progress_dir()});
}

// -- step 5: transfer comparison ----------------------------------------------------------

inline void cmd_transfer(const RunConfig& cfg, bool force) {
  cfg.validate();
  ArtifactPaths paths(cfg.out_dir);
  detail::require_artifact(paths.q_source());
  detail::refuse_existing({paths.comparison_csv()}, force);
  const Approximator<float> q_s = load_checkpoint(paths.q_source());

  std::ofstream csv(paths.comparison_csv());
  csv << "game,reward,moving_avg_20,agent_tag\n";
  auto emit = [&csv](const std::vector<GameLogRow>& rows) {
    for (const auto& r : rows)
      csv << r.game << ',' << r.reward << ',' << r.moving_avg_20 << ',' << r.agent_tag << '\n';
  };
  for (const auto& agent : cfg.transfer.agents) {
    if (agent.tag == "scratch") {
      emit(scratch_baseline(cfg.transform, cfg.env, cfg.transfer.dqn, cfg.transfer.games,
                            cfg.seeds.env));
    } else if (agent.tag == "naive_q_reuse") {
      emit(naive_transfer_baseline(cfg.transform, cfg.env, q_s, cfg.transfer.dqn,
                                   cfg.transfer.games, cfg.seeds.env));
    } else {  // transfer_resnet / transfer_rotation
      detail::require_artifact(agent.g_t_checkpoint);
      CorrespondenceFunction corr{load_checkpoint(agent.g_t_checkpoint)};
      emit(finetune_with_transfer(cfg.transform, cfg.env, q_s, corr, cfg.transfer.dqn,
                                  cfg.transfer.games, agent.tag, cfg.seeds.env));
    }
  }
}

// -- lambda sweep ---------------------------------------------------------------------------

inline int sweep_thread_cap() {
  if (const char* env = std::getenv("CORRXFER_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

struct SweepPointOutcome {
  LossWeights weights;
  bool ok = false;
  std::string error;
};

/// Runs correspondence learning over the 18-point lambda grid. A failing grid
/// point leaves an error record and the sweep continues. CORRXFER_THREADS
/// caps in-process parallelism (grid points are independent).
inline std::vector<SweepPointOutcome> cmd_sweep(const RunConfig& cfg, bool force) {
  cfg.validate();
  ArtifactPaths paths(cfg.out_dir);
  detail::require_artifact(paths.q_source());
  detail::require_artifact(paths.model_source());
  detail::require_artifact(paths.memory_source());
  detail::require_artifact(paths.memory_target());

  const std::vector<LossWeights> grid = lambda_grid_experiment1();
  std::vector<std::string> outputs;
  for (const auto& w : grid)
    outputs.push_back((paths.dir / ("eval_" + sweep_stem(w, cfg.corr.generator_preset) + ".csv")).string());
  detail::refuse_existing(outputs, force);

  const Approximator<float> q_s = load_checkpoint(paths.q_source());
  const EnvironmentModel f{load_checkpoint(paths.model_source())};
  const ExperienceMemory m_s = load_memory(paths.memory_source());
  const ExperienceMemory m_t = load_memory(paths.memory_target());

  std::vector<SweepPointOutcome> outcomes(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= grid.size()) return;
      RunConfig point = cfg;
      point.corr.weights = grid[i];
      const std::string stem = sweep_stem(grid[i], cfg.corr.generator_preset);
      outcomes[i].weights = grid[i];
      try {
        LearnCorrespondenceOutputs out;
        out.eval_csv = (paths.dir / ("eval_" + stem + ".csv")).string();
        out.best_ckpt = (paths.dir / ("gt_best_" + stem + ".ckpt")).string();
        out.progress_dir = (paths.dir / ("progress_" + stem)).string();
        run_learn_correspondence(point, q_s, f, m_s, m_t, out);
        outcomes[i].ok = true;
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
        std::ofstream err((paths.dir / ("error_" + stem + ".txt")).string());
        err << e.what() << '\n';
      }
    }
  };
  const int threads = std::min<int>(sweep_thread_cap(), static_cast<int>(grid.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

// -- config bootstrap -------------------------------------------------------------------------

inline void cmd_init_config(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw std::invalid_argument("output already exists: " + path + " (re-run with --force)");
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) throw std::invalid_argument("cannot write config: " + path);
  os << serialize_config(RunConfig{});
}

}  // namespace corrxfer
