#include "mvw/runconfig.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace mvw {

using nlohmann::json;

namespace {

void rejectUnknownKeys(const json& j, const std::set<std::string>& allowed,
                       const std::string& section) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parseScenario(const json& j, ScenarioConfig& s) {
  rejectUnknownKeys(j,
                    {"num_views", "num_frames", "image_size", "num_classes", "events_min",
                     "events_max", "event_len_min", "event_len_max", "noise", "fps"},
                    "scenario");
  maybe(j, "num_views", s.num_views);
  maybe(j, "num_frames", s.num_frames);
  maybe(j, "image_size", s.image_size);
  maybe(j, "num_classes", s.num_classes);
  maybe(j, "events_min", s.events_min);
  maybe(j, "events_max", s.events_max);
  maybe(j, "event_len_min", s.event_len_min);
  maybe(j, "event_len_max", s.event_len_max);
  maybe(j, "noise", s.noise);
  maybe(j, "fps", s.fps);
}

void parseModel(const json& j, ModelConfig& m) {
  rejectUnknownKeys(j,
                    {"d", "heads", "conv_filters", "ffn_hidden", "bag_hidden", "bag_classes",
                     "ptb_op", "use_sl", "use_pd", "latent_mode", "layer_norm"},
                    "model");
  maybe(j, "d", m.d);
  maybe(j, "heads", m.heads);
  maybe(j, "conv_filters", m.conv_filters);
  maybe(j, "ffn_hidden", m.ffn_hidden);
  maybe(j, "bag_hidden", m.bag_hidden);
  maybe(j, "bag_classes", m.bag_classes);
  if (j.contains("ptb_op")) m.ptb_op = ptbOpFromString(j.at("ptb_op").get<std::string>());
  maybe(j, "use_sl", m.use_sl);
  maybe(j, "use_pd", m.use_pd);
  if (j.contains("latent_mode"))
    m.latent_mode = latentModeFromString(j.at("latent_mode").get<std::string>());
  maybe(j, "layer_norm", m.layer_norm);
}

void parseTrain(const json& j, TrainConfig& t) {
  rejectUnknownKeys(
      j, {"lr", "beta1", "beta2", "epochs", "batch_size", "lambda_latent"}, "train");
  maybe(j, "lr", t.lr);
  maybe(j, "beta1", t.beta1);
  maybe(j, "beta2", t.beta2);
  maybe(j, "epochs", t.epochs);
  maybe(j, "batch_size", t.batch_size);
  maybe(j, "lambda_latent", t.lambda_latent);
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::fromFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  rejectUnknownKeys(
      j, {"seed", "scenario", "grid", "model", "downstream", "train", "paths"}, "(top level)");

  RunConfig cfg = defaults();
  maybe(j, "seed", cfg.seed);
  if (j.contains("scenario")) parseScenario(j.at("scenario"), cfg.scenario);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    rejectUnknownKeys(g, {"rows", "cols"}, "grid");
    maybe(g, "rows", cfg.grid_rows);
    maybe(g, "cols", cfg.grid_cols);
  }
  if (j.contains("model")) parseModel(j.at("model"), cfg.model);
  if (j.contains("downstream")) {
    const json& d = j.at("downstream");
    rejectUnknownKeys(d, {"head_hidden1", "head_hidden2", "use_latents", "init_from_base"},
                      "downstream");
    maybe(d, "head_hidden1", cfg.head_hidden1);
    maybe(d, "head_hidden2", cfg.head_hidden2);
    maybe(d, "use_latents", cfg.use_latents);
    maybe(d, "init_from_base", cfg.init_from_base);
  }
  if (j.contains("train")) parseTrain(j.at("train"), cfg.train);
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    rejectUnknownKeys(p, {"data", "out"}, "paths");
    maybe(p, "data", cfg.data_dir);
    maybe(p, "out", cfg.out_dir);
  }
  if (cfg.grid_rows < 1 || cfg.grid_cols < 1)
    throw ConfigError("grid: rows and cols must be >= 1");
  return cfg;
}

DownstreamConfig RunConfig::downstreamConfig(int c_task) const {
  DownstreamConfig d;
  d.base = model;
  d.head_hidden1 = head_hidden1;
  d.head_hidden2 = head_hidden2;
  d.c_task = c_task;
  d.use_latents = use_latents;
  d.init_from_base = init_from_base;
  return d;
}

}  // namespace mvw
