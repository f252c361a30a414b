// corrxfer: knowledge transfer between RL tasks via learned state
// correspondence. Subcommands follow the five-step experiment protocol:
//   train-source          DQN on the source task -> Q_S, M_S, model F
//   collect-target        random rollouts on the target task -> M_T
//   learn-correspondence  adversarial correspondence learning -> G_T
//   transfer              play/fine-tune the target task, compare agents
//   sweep                 learn-correspondence over the lambda grid
//   init-config           write a default configuration file
//
// Exit codes: 0 success, 1 validation error, 2 missing artifact.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>

#include "corrxfer/commands.hpp"

using namespace corrxfer;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "configuration file (JSON)")->required();
  cmd->add_option("--seed", o.seed, "master seed overriding every configured seed stream")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--out", o.out_dir, "output directory overriding the configured one");
  cmd->add_flag("--force", o.force, "overwrite existing outputs");
}

RunConfig load_with_overrides(const CommonOpts& o) {
  RunConfig cfg = load_config_file(o.config_path);
  if (o.seed_set) cfg.seeds = Seeds::from_master(o.seed);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"state-correspondence transfer for RL tasks"};
  app.require_subcommand(1);

  CommonOpts train_o, collect_o, learn_o, transfer_o, sweep_o;
  std::string init_path = "corrxfer.json";
  bool init_force = false;

  CLI::App* init = app.add_subcommand("init-config", "write a default configuration file");
  init->add_option("--config", init_path, "where to write the configuration");
  init->add_flag("--force", init_force, "overwrite an existing file");

  add_common(app.add_subcommand("train-source", "train DQN on the source task"), train_o);
  add_common(app.add_subcommand("collect-target", "collect random-policy target memory"), collect_o);
  add_common(app.add_subcommand("learn-correspondence", "learn the correspondence function"),
             learn_o);
  add_common(app.add_subcommand("transfer", "run the transfer comparison agents"), transfer_o);
  add_common(app.add_subcommand("sweep", "sweep the lambda grid"), sweep_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (init->parsed()) {
      cmd_init_config(init_path, init_force);
      std::printf("wrote %s\n", init_path.c_str());
    } else if (app.get_subcommand("train-source")->parsed()) {
      cmd_train_source(load_with_overrides(train_o), train_o.force);
    } else if (app.get_subcommand("collect-target")->parsed()) {
      cmd_collect_target(load_with_overrides(collect_o), collect_o.force);
    } else if (app.get_subcommand("learn-correspondence")->parsed()) {
      cmd_learn_correspondence(load_with_overrides(learn_o), learn_o.force);
    } else if (app.get_subcommand("transfer")->parsed()) {
      cmd_transfer(load_with_overrides(transfer_o), transfer_o.force);
    } else if (app.get_subcommand("sweep")->parsed()) {
      const auto outcomes = cmd_sweep(load_with_overrides(sweep_o), sweep_o.force);
      for (const auto& oc : outcomes)
        std::printf("%s cyc=%g q=%g m=%g%s%s\n", oc.ok ? "done " : "ERROR",
                    oc.weights.cyc, oc.weights.q, oc.weights.m, oc.ok ? "" : ": ",
                    oc.ok ? "" : oc.error.c_str());
    }
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
