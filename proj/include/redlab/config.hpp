#pragma once

// Simulator experiment files (YAML). See README for the schema.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <yaml-cpp/yaml.h>

#include "redlab/ablate.hpp"
#include "redlab/ingest.hpp"

namespace redlab::config {

struct EncoderConfig {
  std::string name;
  std::optional<std::string> clone_of;
  std::vector<int> visible;
  int tokens = 4;
  int dim = 8;
  bool frozen = true;
};

struct SimConfig {
  std::string model_name = "simulated";
  std::uint64_t seed = 1;
  int channels = 16;
  double noise = 0.0;
  std::vector<sim::TaskSpec> tasks;
  std::vector<EncoderConfig> encoders;
  sim::FusionSpec fusion;
  sim::HeadSpec head;
  sim::TrainConfig train;
  ablate::AblationOptions evaluation;
  double epsilon = 0.0;
};

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError(fmt::format("{}: expected a mapping", where));
  for (const auto& kv : node) {
    auto key = kv.first.as<std::string>();
    if (!allowed.contains(key)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
  }
}

template <class T>
T get(const YAML::Node& node, const char* key, const std::string& where, T fallback) {
  auto v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(fmt::format("{}.{}: cannot read value '{}'", where, key, v.Scalar()));
  }
}

/// Channel lists accept integers and inclusive ranges written "a-b".
inline std::vector<int> channel_list(const YAML::Node& node, const std::string& where) {
  if (!node || !node.IsSequence()) throw ConfigError(fmt::format("{}: expected a channel list", where));
  std::vector<int> out;
  for (const auto& item : node) {
    auto text = item.Scalar();
    auto dash = text.find('-', 1);
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(text));
      } else {
        int lo = std::stoi(text.substr(0, dash)), hi = std::stoi(text.substr(dash + 1));
        if (hi < lo) throw ConfigError(fmt::format("{}: empty range '{}'", where, text));
        for (int c = lo; c <= hi; ++c) out.push_back(c);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("{}: bad channel '{}'", where, text));
    }
  }
  std::set<int> unique(out.begin(), out.end());
  if (unique.size() != out.size()) throw ConfigError(fmt::format("{}: repeated channel", where));
  return out;
}

}  // namespace detail

inline SimConfig parse_sim_config(const std::string& text, const std::string& source = "<config>") {
  using detail::get;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.what()));
  }
  if (!root || root.IsNull()) throw ConfigError(fmt::format("{}: empty config", source));
  detail::check_keys(root, source,
                     {"model_name", "seed", "world", "encoders", "fusion", "head", "train", "evaluation", "analysis"});

  SimConfig c;
  c.model_name = get<std::string>(root, "model_name", source, c.model_name);
  c.seed = get<std::uint64_t>(root, "seed", source, c.seed);

  auto world = root["world"];
  if (!world) throw ConfigError(fmt::format("{}: missing 'world' section", source));
  detail::check_keys(world, "world", {"channels", "noise", "tasks"});
  c.channels = get<int>(world, "channels", "world", c.channels);
  c.noise = get<double>(world, "noise", "world", c.noise);
  if (!world["tasks"] || !world["tasks"].IsSequence() || world["tasks"].size() == 0)
    throw ConfigError("world.tasks: expected a non-empty list");
  for (std::size_t k = 0; k < world["tasks"].size(); ++k) {
    auto t = world["tasks"][k];
    auto where = fmt::format("world.tasks[{}]", k);
    detail::check_keys(t, where, {"name", "category", "channels", "classes"});
    sim::TaskSpec spec;
    spec.name = get<std::string>(t, "name", where, "");
    if (spec.name.empty()) throw ConfigError(where + ": missing name");
    auto cat = parse_category(get<std::string>(t, "category", where, ""));
    if (!cat) throw ConfigError(where + ": unknown or missing category");
    spec.category = *cat;
    spec.channels = detail::channel_list(t["channels"], where + ".channels");
    spec.classes = get<int>(t, "classes", where, spec.classes);
    c.tasks.push_back(std::move(spec));
  }

  auto encoders = root["encoders"];
  if (!encoders || !encoders.IsSequence() || encoders.size() == 0)
    throw ConfigError(fmt::format("{}: 'encoders' must be a non-empty list", source));
  for (std::size_t k = 0; k < encoders.size(); ++k) {
    auto e = encoders[k];
    auto where = fmt::format("encoders[{}]", k);
    detail::check_keys(e, where, {"name", "clone_of", "visible", "tokens", "dim", "frozen"});
    EncoderConfig ec;
    ec.name = get<std::string>(e, "name", where, "");
    if (ec.name.empty()) throw ConfigError(where + ": missing name");
    if (e["clone_of"]) {
      ec.clone_of = get<std::string>(e, "clone_of", where, "");
      for (const char* key : {"visible", "tokens", "dim"})
        if (e[key]) throw ConfigError(fmt::format("{}: '{}' is inherited from the clone source", where, key));
    } else {
      ec.visible = detail::channel_list(e["visible"], where + ".visible");
      ec.tokens = get<int>(e, "tokens", where, ec.tokens);
      ec.dim = get<int>(e, "dim", where, ec.dim);
    }
    ec.frozen = get<bool>(e, "frozen", where, ec.frozen);
    c.encoders.push_back(std::move(ec));
  }

  if (auto f = root["fusion"]) {
    detail::check_keys(f, "fusion", {"strategy", "mlp_hidden", "mlp_dim", "queries", "key_dim", "value_dim"});
    auto name = get<std::string>(f, "strategy", "fusion", std::string(sim::to_string(c.fusion.strategy)));
    auto s = sim::parse_fusion(name);
    if (!s) throw ConfigError(fmt::format("fusion.strategy: unknown strategy '{}'", name));
    c.fusion.strategy = *s;
    c.fusion.mlp_hidden = get<int>(f, "mlp_hidden", "fusion", c.fusion.mlp_hidden);
    c.fusion.mlp_dim = get<int>(f, "mlp_dim", "fusion", c.fusion.mlp_dim);
    c.fusion.queries = get<int>(f, "queries", "fusion", c.fusion.queries);
    c.fusion.key_dim = get<int>(f, "key_dim", "fusion", c.fusion.key_dim);
    c.fusion.value_dim = get<int>(f, "value_dim", "fusion", c.fusion.value_dim);
  }

  if (auto h = root["head"]) {
    detail::check_keys(h, "head", {"hidden"});
    if (h["hidden"]) {
      if (!h["hidden"].IsSequence()) throw ConfigError("head.hidden: expected a list of widths");
      c.head.hidden.clear();
      for (const auto& w : h["hidden"]) c.head.hidden.push_back(w.as<int>());
    }
  }

  if (auto t = root["train"]) {
    detail::check_keys(t, "train", {"learning_rate", "momentum", "batch_size", "steps", "encoder_dropout",
                                    "train_head", "train_fusion", "train_encoders"});
    auto& tc = c.train;
    tc.learning_rate = get<double>(t, "learning_rate", "train", tc.learning_rate);
    tc.momentum = get<double>(t, "momentum", "train", tc.momentum);
    tc.batch_size = get<int>(t, "batch_size", "train", tc.batch_size);
    tc.steps = get<int>(t, "steps", "train", tc.steps);
    tc.encoder_dropout = get<double>(t, "encoder_dropout", "train", tc.encoder_dropout);
    tc.train_head = get<bool>(t, "train_head", "train", tc.train_head);
    tc.train_fusion = get<bool>(t, "train_fusion", "train", tc.train_fusion);
    tc.train_encoders = get<bool>(t, "train_encoders", "train", tc.train_encoders);
  }

  if (auto ev = root["evaluation"]) {
    detail::check_keys(ev, "evaluation", {"samples", "threads"});
    c.evaluation.n_samples = get<int>(ev, "samples", "evaluation", c.evaluation.n_samples);
    c.evaluation.threads = get<int>(ev, "threads", "evaluation", c.evaluation.threads);
  }
  if (auto an = root["analysis"]) {
    detail::check_keys(an, "analysis", {"epsilon"});
    c.epsilon = get<double>(an, "epsilon", "analysis", c.epsilon);
  }
  c.evaluation.model_name = c.model_name;
  c.train.validate();
  if (c.evaluation.n_samples < 1) throw ConfigError("evaluation.samples must be >= 1");
  return c;
}

inline SimConfig load_sim_config(const std::string& path) {
  try {
    return parse_sim_config(ingest::read_file(path), path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------

/// A world, an untrained model and the run settings, all derived from one seed.
struct Experiment {
  sim::SimWorld world;
  sim::Model model;
  sim::TrainConfig train;
  ablate::AblationOptions evaluation;
  double epsilon = 0.0;
};

inline Experiment instantiate(const SimConfig& c, std::optional<std::uint64_t> seed_override = std::nullopt) {
  const std::uint64_t seed = seed_override.value_or(c.seed);
  Experiment x;
  x.world = sim::SimWorld::create(c.channels, c.noise, c.tasks, seed);

  sim::Rng rng(sim::mix_seed(seed, sim::stream::encoders));
  std::vector<sim::EncoderSpec> encoders;
  for (const auto& ec : c.encoders) {
    for (const auto& prev : encoders)
      if (prev.name == ec.name) throw ConfigError(fmt::format("duplicate encoder name '{}'", ec.name));
    if (ec.clone_of) {
      auto it = std::find_if(encoders.begin(), encoders.end(), [&](const auto& e) { return e.name == *ec.clone_of; });
      if (it == encoders.end())
        throw ConfigError(fmt::format("encoder '{}' clones unknown or later encoder '{}'", ec.name, *ec.clone_of));
      sim::EncoderSpec copy = *it;
      copy.name = ec.name;
      copy.frozen = ec.frozen;
      encoders.push_back(std::move(copy));
    } else {
      encoders.push_back(
          sim::EncoderSpec::random(ec.name, ec.visible, ec.tokens, ec.dim, c.channels, rng, ec.frozen));
    }
  }
  x.model = sim::make_model(x.world, std::move(encoders), c.fusion, c.head, seed);
  x.train = c.train;
  x.train.seed = seed;
  x.evaluation = c.evaluation;
  x.evaluation.seed = seed;
  x.epsilon = c.epsilon;
  return x;
}

struct ExperimentResult {
  sim::TrainResult trained;
  CategoryScheme scheme;
  ScoreTable table;
  ablate::FullReport report;
};

/// Train, ablate every subset and analyze.
inline ExperimentResult run_experiment(const Experiment& x) {
  auto trained = sim::train(x.model, x.world, x.train);
  auto scheme = ablate::world_scheme(x.world);
  auto table = ablate::run_ablation(trained.model, x.world, x.evaluation);
  auto report = ablate::full_report(table, scheme, x.epsilon);
  return {std::move(trained), std::move(scheme), std::move(table), std::move(report)};
}

}  // namespace redlab::config
