#include "clipsim/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace clipsim {

namespace {

using nlohmann::json;

// Unknown keys are a hard error so config typos never pass silently.
void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* name : allowed) {
      if (key == name) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown config key '" + path + key + "'");
    }
  }
}

double require_number(const json& obj, const std::string& path,
                      const char* key) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw ConfigError("config key '" + path + key + "' must be a number");
  }
  return obj[key].get<double>();
}

double number_or(const json& obj, const char* key, double fallback) {
  return obj.contains(key) ? obj[key].get<double>() : fallback;
}

std::int64_t int_or(const json& obj, const std::string& path, const char* key,
                    std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) {
    throw ConfigError("config key '" + path + key + "' must be an integer");
  }
  return obj[key].get<std::int64_t>();
}

double clip_edge(const json& clip, const std::string& path, const char* key,
                 double off_value, double fallback) {
  if (!clip.contains(key)) return fallback;
  if (clip[key].is_string()) {
    if (clip[key].get<std::string>() != "off") {
      throw ConfigError("config key '" + path + key +
                        "' must be a number or \"off\"");
    }
    return off_value;
  }
  if (!clip[key].is_number()) {
    throw ConfigError("config key '" + path + key +
                      "' must be a number or \"off\"");
  }
  return clip[key].get<double>();
}

TreeSpec parse_tree(const json& node) {
  check_keys(node, "tree.",
             {"vocab_size", "horizon", "prompt_count", "prompt_weights"});
  TreeSpec tree;
  tree.vocab_size = static_cast<int>(int_or(node, "tree.", "vocab_size", 6));
  tree.horizon = static_cast<int>(int_or(node, "tree.", "horizon", 3));
  tree.prompt_count =
      static_cast<int>(int_or(node, "tree.", "prompt_count", 4));
  if (node.contains("prompt_weights")) {
    tree.prompt_weights = node["prompt_weights"].get<std::vector<double>>();
  }
  return tree;
}

RewardSource parse_reward(const json& node, const TreeSpec& tree) {
  check_keys(node, "reward.", {"kind", "p", "targets"});
  const std::string kind = node.value("kind", "bernoulli");
  if (kind == "bernoulli") {
    return RewardSource::bernoulli(number_or(node, "p", 0.5));
  }
  if (kind == "gaussian") {
    if (node.contains("p")) {
      throw ConfigError("reward.p is only valid for bernoulli rewards");
    }
    return RewardSource::gaussian();
  }
  if (kind == "verifiable") {
    std::vector<std::pair<int, std::vector<int>>> targets;
    auto check_sequence = [&](const std::vector<int>& tokens) {
      if (static_cast<int>(tokens.size()) != tree.horizon) {
        throw ConfigError("reward.targets sequences must have length horizon");
      }
      for (const int token : tokens) {
        if (token < 0 || token >= tree.vocab_size) {
          throw ConfigError("reward.targets token out of range");
        }
      }
    };
    if (!node.contains("targets") ||
        (node["targets"].is_string() &&
         node["targets"].get<std::string>() == "default")) {
      targets = default_verifiable_targets(tree);
    } else if (node["targets"].is_string() &&
               node["targets"].get<std::string>() == "single") {
      // One target leaf per prompt: tokens (i, i+1, ..., i+T-1) mod V.
      for (int prompt = 0; prompt < tree.prompt_count; ++prompt) {
        std::vector<int> tokens(tree.horizon);
        for (int t = 0; t < tree.horizon; ++t) {
          tokens[t] = (prompt + t) % tree.vocab_size;
        }
        targets.emplace_back(prompt, std::move(tokens));
      }
    } else if (node["targets"].is_array()) {
      const auto& array = node["targets"];
      if (static_cast<int>(array.size()) != tree.prompt_count) {
        throw ConfigError("reward.targets must list one entry per prompt");
      }
      for (int prompt = 0; prompt < tree.prompt_count; ++prompt) {
        const auto& entry = array[prompt];
        if (!entry.is_array() || entry.empty()) {
          throw ConfigError("reward.targets entries must be nonempty arrays");
        }
        if (entry[0].is_array()) {  // a set of sequences for this prompt
          for (const auto& seq : entry) {
            auto tokens = seq.get<std::vector<int>>();
            check_sequence(tokens);
            targets.emplace_back(prompt, std::move(tokens));
          }
        } else {  // a single sequence for this prompt
          auto tokens = entry.get<std::vector<int>>();
          check_sequence(tokens);
          targets.emplace_back(prompt, std::move(tokens));
        }
      }
    } else {
      throw ConfigError(
          "reward.targets must be an array, \"default\" or \"single\"");
    }
    return RewardSource::verifiable(std::move(targets));
  }
  throw ConfigError("reward.kind must be bernoulli, gaussian or verifiable");
}

}  // namespace

std::vector<std::pair<int, std::vector<int>>> default_verifiable_targets(
    const TreeSpec& tree) {
  const int admissible_openings = (2 * tree.vocab_size + 2) / 3;  // ceil(2V/3)
  std::vector<std::pair<int, std::vector<int>>> targets;
  for (int prompt = 0; prompt < tree.prompt_count; ++prompt) {
    std::vector<std::vector<int>> prefixes(1);
    for (int step = 0; step + 1 < tree.horizon; ++step) {
      const int choices = step == 0 ? admissible_openings : tree.vocab_size;
      std::vector<std::vector<int>> next;
      next.reserve(prefixes.size() * choices);
      for (const auto& prefix : prefixes) {
        for (int token = 0; token < choices; ++token) {
          std::vector<int> extended = prefix;
          extended.push_back(token);
          next.push_back(std::move(extended));
        }
      }
      prefixes = std::move(next);
    }
    for (auto& tokens : prefixes) {
      int sum = prompt;
      for (const int token : tokens) sum += token;
      tokens.push_back(sum % tree.vocab_size);
      targets.emplace_back(prompt, std::move(tokens));
    }
  }
  return targets;
}

void RunConfig::validate() const {
  try {
    tree.validate();
    clip.validate();
    advantage.validate();
    reward.validate();
    if (updater == UpdaterKind::kGrpoSgd) optimizer.validate();
  } catch (const std::invalid_argument& error) {
    throw ConfigError(error.what());
  }
  if (policy_init.kind == PolicyInitConfig::Kind::kNormal &&
      !(policy_init.std >= 0.0)) {
    throw ConfigError("policy_init.std must be >= 0");
  }
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (snapshot_period < 1) throw ConfigError("snapshot_period must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw ConfigError("eta must be positive and finite");
  }
  if (eval.k < 1) throw ConfigError("eval.k must be >= 1");
  if (eval.interval < 1) throw ConfigError("eval.interval must be >= 1");
  if (eval.prompt_repeats < 1) {
    throw ConfigError("eval.prompt_repeats must be >= 1");
  }
  if (log_batch < 2) throw ConfigError("log_batch must be >= 2");
  if (updater != UpdaterKind::kGrpoSgd) {
    if (drift.kind == DriftConfig::Kind::kGaussian) {
      if (!(drift.gaussian_std > 0.0)) {
        throw ConfigError("drift.std must be positive");
      }
    } else {
      if (drift.groups < 1 || drift.group_size < 2 || drift.steps < 1) {
        throw ConfigError("drift batch parameters out of range");
      }
      if (!(drift.learning_rate > 0.0)) {
        throw ConfigError("drift.learning_rate must be positive");
      }
      if (!(drift.eps > 0.0) || drift.eps > 1.0) {
        throw ConfigError("drift.eps must be in (0, 1]");
      }
    }
  }
}

namespace {

RunConfig parse_run_config_impl(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& error) {
    throw ConfigError(std::string("config is not valid JSON: ") + error.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  check_keys(root, "",
             {"tree", "policy_init", "reward", "clip", "updater",
              "advantage_model", "optimizer", "drift", "steps",
              "snapshot_period", "eta", "seed", "eval", "log_batch"});

  RunConfig config;
  if (root.contains("tree")) config.tree = parse_tree(root["tree"]);

  if (root.contains("policy_init")) {
    const json& node = root["policy_init"];
    check_keys(node, "policy_init.", {"kind", "std"});
    const std::string kind = node.value("kind", "normal");
    if (kind == "zeros") {
      config.policy_init.kind = PolicyInitConfig::Kind::kZeros;
    } else if (kind == "normal") {
      config.policy_init.kind = PolicyInitConfig::Kind::kNormal;
    } else {
      throw ConfigError("policy_init.kind must be zeros or normal");
    }
    config.policy_init.std = number_or(node, "std", 1.0);
  }

  if (root.contains("reward")) {
    config.reward = parse_reward(root["reward"], config.tree);
  }

  if (root.contains("clip")) {
    const json& node = root["clip"];
    check_keys(node, "clip.", {"eps_low", "eps_high"});
    config.clip.eps_low = clip_edge(node, "clip.", "eps_low", kClipLowOff, 0.2);
    config.clip.eps_high =
        clip_edge(node, "clip.", "eps_high", kClipHighOff, 0.2);
  }

  if (root.contains("updater")) {
    const std::string name = root["updater"].get<std::string>();
    if (name == "pg") {
      config.updater = UpdaterKind::kPg;
    } else if (name == "npg") {
      config.updater = UpdaterKind::kNpg;
    } else if (name == "grpo-sgd") {
      config.updater = UpdaterKind::kGrpoSgd;
    } else {
      throw ConfigError("updater must be pg, npg or grpo-sgd");
    }
  }

  if (root.contains("advantage_model")) {
    const json& node = root["advantage_model"];
    check_keys(node, "advantage_model.", {"mu", "nu"});
    config.advantage.mu = require_number(node, "advantage_model.", "mu");
    config.advantage.nu = require_number(node, "advantage_model.", "nu");
  }

  if (root.contains("optimizer")) {
    const json& node = root["optimizer"];
    check_keys(node, "optimizer.",
               {"group_size", "rollout_batch", "minibatch",
                "updates_per_rollout", "learning_rate", "beta1", "beta2",
                "epsilon"});
    OptimizerConfig& opt = config.optimizer;
    opt.group_size =
        static_cast<int>(int_or(node, "optimizer.", "group_size", 8));
    opt.rollout_batch =
        static_cast<int>(int_or(node, "optimizer.", "rollout_batch", 512));
    opt.minibatch =
        static_cast<int>(int_or(node, "optimizer.", "minibatch", 256));
    opt.updates_per_rollout = static_cast<int>(
        int_or(node, "optimizer.", "updates_per_rollout", 16));
    opt.learning_rate = number_or(node, "learning_rate", 5e-7);
    opt.beta1 = number_or(node, "beta1", 0.9);
    opt.beta2 = number_or(node, "beta2", 0.999);
    opt.adam_epsilon = number_or(node, "epsilon", 1e-8);
  }

  if (root.contains("drift")) {
    const json& node = root["drift"];
    check_keys(node, "drift.",
               {"kind", "groups", "group_size", "steps", "learning_rate",
                "eps", "std"});
    const std::string kind = node.value("kind", "grpo");
    if (kind == "grpo") {
      config.drift.kind = DriftConfig::Kind::kGrpo;
    } else if (kind == "reinforce") {
      config.drift.kind = DriftConfig::Kind::kReinforce;
    } else if (kind == "gaussian") {
      config.drift.kind = DriftConfig::Kind::kGaussian;
    } else {
      throw ConfigError("drift.kind must be grpo, reinforce or gaussian");
    }
    config.drift.groups =
        static_cast<int>(int_or(node, "drift.", "groups", config.drift.groups));
    config.drift.group_size = static_cast<int>(
        int_or(node, "drift.", "group_size", config.drift.group_size));
    config.drift.steps =
        static_cast<int>(int_or(node, "drift.", "steps", config.drift.steps));
    config.drift.learning_rate =
        number_or(node, "learning_rate", config.drift.learning_rate);
    config.drift.eps = number_or(node, "eps", config.drift.eps);
    config.drift.gaussian_std = number_or(node, "std", config.drift.gaussian_std);
  }

  config.steps = int_or(root, "", "steps", config.steps);
  config.snapshot_period = static_cast<int>(
      int_or(root, "", "snapshot_period", config.snapshot_period));
  config.eta = number_or(root, "eta", config.eta);
  if (root.contains("seed")) {
    config.seed = root["seed"].get<std::uint64_t>();
  }
  if (root.contains("eval")) {
    const json& node = root["eval"];
    check_keys(node, "eval.", {"k", "interval", "prompt_repeats"});
    config.eval.k = static_cast<int>(int_or(node, "eval.", "k", 8));
    config.eval.interval =
        static_cast<int>(int_or(node, "eval.", "interval", 50));
    config.eval.prompt_repeats =
        static_cast<int>(int_or(node, "eval.", "prompt_repeats", 16));
  }
  config.log_batch =
      static_cast<int>(int_or(root, "", "log_batch", config.log_batch));

  config.validate();
  return config;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  try {
    return parse_run_config_impl(json_text);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& error) {
    throw ConfigError(error.what());
  } catch (const nlohmann::json::exception& error) {
    throw ConfigError(std::string("malformed config value: ") + error.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string resolved_config_json(const RunConfig& config) {
  json root;
  root["tree"] = {{"vocab_size", config.tree.vocab_size},
                  {"horizon", config.tree.horizon},
                  {"prompt_count", config.tree.prompt_count}};
  if (!config.tree.prompt_weights.empty()) {
    root["tree"]["prompt_weights"] = config.tree.prompt_weights;
  }
  root["policy_init"] = {
      {"kind", config.policy_init.kind == PolicyInitConfig::Kind::kZeros
                   ? "zeros"
                   : "normal"},
      {"std", config.policy_init.std}};
  switch (config.reward.kind) {
    case RewardKind::kBernoulli:
      root["reward"] = {{"kind", "bernoulli"}, {"p", config.reward.bernoulli_p}};
      break;
    case RewardKind::kGaussian:
      root["reward"] = {{"kind", "gaussian"}};
      break;
    case RewardKind::kVerifiable: {
      json targets = json::array();
      for (int prompt = 0; prompt < config.tree.prompt_count; ++prompt) {
        json sequences = json::array();
        for (const auto& [target_prompt, tokens] : config.reward.targets) {
          if (target_prompt == prompt) sequences.push_back(tokens);
        }
        targets.push_back(sequences);
      }
      root["reward"] = {{"kind", "verifiable"}, {"targets", targets}};
      break;
    }
  }
  root["clip"] = json::object();
  if (config.clip.eps_low == kClipLowOff) {
    root["clip"]["eps_low"] = "off";
  } else {
    root["clip"]["eps_low"] = config.clip.eps_low;
  }
  if (std::isinf(config.clip.eps_high)) {
    root["clip"]["eps_high"] = "off";
  } else {
    root["clip"]["eps_high"] = config.clip.eps_high;
  }
  switch (config.updater) {
    case UpdaterKind::kPg: root["updater"] = "pg"; break;
    case UpdaterKind::kNpg: root["updater"] = "npg"; break;
    case UpdaterKind::kGrpoSgd: root["updater"] = "grpo-sgd"; break;
  }
  root["advantage_model"] = {{"mu", config.advantage.mu},
                             {"nu", config.advantage.nu}};
  root["optimizer"] = {{"group_size", config.optimizer.group_size},
                       {"rollout_batch", config.optimizer.rollout_batch},
                       {"minibatch", config.optimizer.minibatch},
                       {"updates_per_rollout", config.optimizer.updates_per_rollout},
                       {"learning_rate", config.optimizer.learning_rate},
                       {"beta1", config.optimizer.beta1},
                       {"beta2", config.optimizer.beta2},
                       {"epsilon", config.optimizer.adam_epsilon}};
  if (config.drift.kind == DriftConfig::Kind::kGaussian) {
    root["drift"] = {{"kind", "gaussian"}, {"std", config.drift.gaussian_std}};
  } else {
    root["drift"] = {{"kind", config.drift.kind == DriftConfig::Kind::kGrpo
                                  ? "grpo"
                                  : "reinforce"},
                     {"groups", config.drift.groups},
                     {"group_size", config.drift.group_size},
                     {"steps", config.drift.steps},
                     {"learning_rate", config.drift.learning_rate},
                     {"eps", config.drift.eps}};
  }
  root["steps"] = config.steps;
  root["snapshot_period"] = config.snapshot_period;
  root["eta"] = config.eta;
  root["seed"] = config.seed;
  root["eval"] = {{"k", config.eval.k},
                  {"interval", config.eval.interval},
                  {"prompt_repeats", config.eval.prompt_repeats}};
  root["log_batch"] = config.log_batch;
  return root.dump(2) + "\n";
}

}  // namespace clipsim
