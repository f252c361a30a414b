#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "corrxfer/correspondence.hpp"
#include "corrxfer/dqn.hpp"
#include "corrxfer/dynamics.hpp"
#include "corrxfer/envsuite.hpp"

// Run configuration: one JSON document drives the whole experiment protocol.
// `init-config` emits the defaults; command-line flags override file values.

namespace corrxfer {

struct Seeds {
  std::uint64_t env = 1;
  std::uint64_t init = 2;
  std::uint64_t sample = 3;
  std::uint64_t eval = 4;
  std::uint64_t collect = 5;

  bool operator==(const Seeds&) const = default;

  /// --seed N rebases every stream on one master seed.
  static Seeds from_master(std::uint64_t n) {
    return {derive_seed(n, 10), derive_seed(n, 11), derive_seed(n, 12), derive_seed(n, 13),
            derive_seed(n, 14)};
  }
};

struct TransferAgent {
  std::string tag;                // scratch | transfer_resnet | transfer_rotation | naive_q_reuse
  std::string g_t_checkpoint;     // required for transfer_* tags

  bool operator==(const TransferAgent&) const = default;
};

struct TransferRunConfig {
  long games = 1000;
  std::vector<TransferAgent> agents = {{"scratch", ""}, {"transfer_rotation", ""},
                                       {"naive_q_reuse", ""}};
  DqnConfig dqn;

  bool operator==(const TransferRunConfig&) const = default;
};

struct RunConfig {
  std::string experiment = "exp1-identity";  // exp1-identity | exp2-rotate90 | custom
  TransformKind transform = TransformKind::Identity;
  std::string out_dir = "runs/exp1";
  Seeds seeds;
  EnvConfig env;
  DqnConfig dqn;
  ModelConfig model;
  CorrespondenceConfig corr;
  std::string lambda_preset_name;  // optional; overrides corr.weights when set
  TransferRunConfig transfer;
  long collect_transitions = 10000;

  void validate() const {
    if (experiment != "exp1-identity" && experiment != "exp2-rotate90" && experiment != "custom")
      throw std::invalid_argument("unknown experiment '" + experiment + "'");
    env.validate();
    dqn.validate();
    corr.validate();
    if (collect_transitions < 1) throw std::invalid_argument("collect_transitions must be positive");
    for (const auto& a : transfer.agents) {
      if (a.tag != "scratch" && a.tag != "transfer_resnet" && a.tag != "transfer_rotation" &&
          a.tag != "naive_q_reuse")
        throw std::invalid_argument("unknown agent tag '" + a.tag + "'");
      if ((a.tag == "transfer_resnet" || a.tag == "transfer_rotation") && a.g_t_checkpoint.empty())
        throw std::invalid_argument("agent '" + a.tag + "' needs a g_t_checkpoint path");
    }
  }

  bool operator==(const RunConfig&) const;
};

// -- JSON mapping -----------------------------------------------------------------

inline bool operator==(const DqnConfig& a, const DqnConfig& b) {
  return a.learning_rate == b.learning_rate && a.gamma == b.gamma && a.eps.start == b.eps.start &&
         a.eps.end == b.eps.end && a.eps.decay_steps == b.eps.decay_steps &&
         a.memory_size == b.memory_size && a.batch_size == b.batch_size &&
         a.target_sync == b.target_sync && a.total_steps == b.total_steps &&
         a.optimizer == b.optimizer && a.q_preset == b.q_preset;
}

inline bool operator==(const EnvConfig& a, const EnvConfig& b) {
  return a.seed == b.seed && a.points_to_win == b.points_to_win && a.frame_size == b.frame_size &&
         a.paddle_speed == b.paddle_speed && a.ball_speed == b.ball_speed &&
         a.opponent_skill == b.opponent_skill && a.max_episode_steps == b.max_episode_steps;
}

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.learning_rate == b.learning_rate && a.batch_size == b.batch_size &&
         a.epochs == b.epochs && a.preset == b.preset;
}

inline bool operator==(const CorrespondenceConfig& a, const CorrespondenceConfig& b) {
  return a.weights == b.weights && a.generator_preset == b.generator_preset &&
         a.discriminator_preset == b.discriminator_preset && a.learning_rate == b.learning_rate &&
         a.beta1 == b.beta1 && a.batch_size == b.batch_size && a.total_steps == b.total_steps &&
         a.eval_interval == b.eval_interval && a.eval_games == b.eval_games &&
         a.decay_lr == b.decay_lr;
}

inline bool RunConfig::operator==(const RunConfig& o) const {
  return experiment == o.experiment && transform == o.transform && out_dir == o.out_dir &&
         seeds == o.seeds && env == o.env && dqn == o.dqn && model == o.model && corr == o.corr &&
         lambda_preset_name == o.lambda_preset_name && transfer == o.transfer &&
         collect_transitions == o.collect_transitions;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.experiment;
  j["transform"] = transform_name(c.transform);
  j["out_dir"] = c.out_dir;
  j["seeds"] = {{"env", c.seeds.env},
                {"init", c.seeds.init},
                {"sample", c.seeds.sample},
                {"eval", c.seeds.eval},
                {"collect", c.seeds.collect}};
  j["env"] = {{"points_to_win", c.env.points_to_win},
              {"frame_size", c.env.frame_size},
              {"paddle_speed", c.env.paddle_speed},
              {"ball_speed", c.env.ball_speed},
              {"opponent_skill", c.env.opponent_skill},
              {"max_episode_steps", c.env.max_episode_steps}};
  j["dqn"] = {{"learning_rate", c.dqn.learning_rate},
              {"gamma", c.dqn.gamma},
              {"eps_start", c.dqn.eps.start},
              {"eps_end", c.dqn.eps.end},
              {"eps_decay_steps", c.dqn.eps.decay_steps},
              {"memory_size", c.dqn.memory_size},
              {"batch_size", c.dqn.batch_size},
              {"target_sync", c.dqn.target_sync},
              {"total_steps", c.dqn.total_steps},
              {"optimizer", c.dqn.optimizer},
              {"q_preset", c.dqn.q_preset}};
  j["model"] = {{"learning_rate", c.model.learning_rate},
                {"batch_size", c.model.batch_size},
                {"epochs", c.model.epochs},
                {"preset", c.model.preset}};
  j["correspondence"] = {{"lambda_cyc", c.corr.weights.cyc},
                         {"lambda_q", c.corr.weights.q},
                         {"lambda_m", c.corr.weights.m},
                         {"generator", c.corr.generator_preset},
                         {"discriminator", c.corr.discriminator_preset},
                         {"learning_rate", c.corr.learning_rate},
                         {"beta1", c.corr.beta1},
                         {"batch_size", c.corr.batch_size},
                         {"total_steps", c.corr.total_steps},
                         {"eval_interval", c.corr.eval_interval},
                         {"eval_games", c.corr.eval_games},
                         {"decay_lr", c.corr.decay_lr}};
  if (!c.lambda_preset_name.empty()) j["correspondence"]["lambda_preset"] = c.lambda_preset_name;
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : c.transfer.agents) {
    nlohmann::json ja = {{"tag", a.tag}};
    if (!a.g_t_checkpoint.empty()) ja["g_t_checkpoint"] = a.g_t_checkpoint;
    agents.push_back(ja);
  }
  j["transfer"] = {{"games", c.transfer.games},
                   {"agents", agents},
                   {"dqn",
                    {{"learning_rate", c.transfer.dqn.learning_rate},
                     {"gamma", c.transfer.dqn.gamma},
                     {"eps_start", c.transfer.dqn.eps.start},
                     {"eps_end", c.transfer.dqn.eps.end},
                     {"eps_decay_steps", c.transfer.dqn.eps.decay_steps},
                     {"memory_size", c.transfer.dqn.memory_size},
                     {"batch_size", c.transfer.dqn.batch_size},
                     {"target_sync", c.transfer.dqn.target_sync},
                     {"total_steps", c.transfer.dqn.total_steps},
                     {"optimizer", c.transfer.dqn.optimizer},
                     {"q_preset", c.transfer.dqn.q_preset}}}};
  j["collect_transitions"] = c.collect_transitions;
  return j;
}

namespace detail {

inline DqnConfig dqn_from_json(const nlohmann::json& j, DqnConfig base = {}) {
  DqnConfig d = base;
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.gamma = j.value("gamma", d.gamma);
  d.eps.start = j.value("eps_start", d.eps.start);
  d.eps.end = j.value("eps_end", d.eps.end);
  d.eps.decay_steps = j.value("eps_decay_steps", d.eps.decay_steps);
  d.memory_size = j.value("memory_size", d.memory_size);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.target_sync = j.value("target_sync", d.target_sync);
  d.total_steps = j.value("total_steps", d.total_steps);
  d.optimizer = j.value("optimizer", d.optimizer);
  d.q_preset = j.value("q_preset", d.q_preset);
  return d;
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.experiment = j.value("experiment", c.experiment);
  if (c.experiment == "exp1-identity") c.transform = TransformKind::Identity;
  if (c.experiment == "exp2-rotate90") c.transform = TransformKind::Rotate90;
  if (j.contains("transform")) c.transform = transform_from_name(j.at("transform"));
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.env = s.value("env", c.seeds.env);
    c.seeds.init = s.value("init", c.seeds.init);
    c.seeds.sample = s.value("sample", c.seeds.sample);
    c.seeds.eval = s.value("eval", c.seeds.eval);
    c.seeds.collect = s.value("collect", c.seeds.collect);
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    c.env.points_to_win = e.value("points_to_win", c.env.points_to_win);
    c.env.frame_size = e.value("frame_size", c.env.frame_size);
    c.env.paddle_speed = e.value("paddle_speed", c.env.paddle_speed);
    c.env.ball_speed = e.value("ball_speed", c.env.ball_speed);
    c.env.opponent_skill = e.value("opponent_skill", c.env.opponent_skill);
    c.env.max_episode_steps = e.value("max_episode_steps", c.env.max_episode_steps);
  }
  if (j.contains("dqn")) c.dqn = detail::dqn_from_json(j.at("dqn"));
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.learning_rate = m.value("learning_rate", c.model.learning_rate);
    c.model.batch_size = m.value("batch_size", c.model.batch_size);
    c.model.epochs = m.value("epochs", c.model.epochs);
    c.model.preset = m.value("preset", c.model.preset);
  }
  if (j.contains("correspondence")) {
    const auto& k = j.at("correspondence");
    c.corr.weights.cyc = k.value("lambda_cyc", c.corr.weights.cyc);
    c.corr.weights.q = k.value("lambda_q", c.corr.weights.q);
    c.corr.weights.m = k.value("lambda_m", c.corr.weights.m);
    c.corr.generator_preset = k.value("generator", c.corr.generator_preset);
    c.corr.discriminator_preset = k.value("discriminator", c.corr.discriminator_preset);
    c.corr.learning_rate = k.value("learning_rate", c.corr.learning_rate);
    c.corr.beta1 = k.value("beta1", c.corr.beta1);
    c.corr.batch_size = k.value("batch_size", c.corr.batch_size);
    c.corr.total_steps = k.value("total_steps", c.corr.total_steps);
    c.corr.eval_interval = k.value("eval_interval", c.corr.eval_interval);
    c.corr.eval_games = k.value("eval_games", c.corr.eval_games);
    c.corr.decay_lr = k.value("decay_lr", c.corr.decay_lr);
    if (k.contains("lambda_preset")) {
      c.lambda_preset_name = k.at("lambda_preset");
      c.corr.weights = lambda_preset(c.lambda_preset_name);
    }
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    c.transfer.games = t.value("games", c.transfer.games);
    if (t.contains("agents")) {
      c.transfer.agents.clear();
      for (const auto& a : t.at("agents"))
        c.transfer.agents.push_back({a.at("tag"), a.value("g_t_checkpoint", std::string())});
    }
    if (t.contains("dqn")) c.transfer.dqn = detail::dqn_from_json(t.at("dqn"));
  }
  c.collect_transitions = j.value("collect_transitions", c.collect_transitions);
  c.validate();
  return c;
}

inline std::string serialize_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
  return config_from_json(nlohmann::json::parse(text));
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

}  // namespace corrxfer
