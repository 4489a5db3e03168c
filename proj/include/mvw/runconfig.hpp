#pragma once

#include <filesystem>
#include <string>

#include "mvw/detect.hpp"
#include "mvw/model_config.hpp"
#include "mvw/synth.hpp"
#include "mvw/train.hpp"

namespace mvw {

/// Single structured configuration shared by every CLI command. Every field
/// has a documented default; unknown keys are rejected. Flags override the
/// file; the MVWEAK_SEED environment variable overrides the file's seed.
struct RunConfig {
  std::uint64_t seed = 0;
  ScenarioConfig scenario;
  int grid_rows = 4;
  int grid_cols = 4;
  ModelConfig model;
  // downstream extras; the skeleton dims come from the model section
  int head_hidden1 = 512;
  int head_hidden2 = 256;
  bool use_latents = true;
  bool init_from_base = false;
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;

  /// Defaults only.
  static RunConfig defaults();

  /// Parses a JSON config file; missing sections/keys keep defaults.
  static RunConfig fromFile(const std::filesystem::path& path);

  DownstreamConfig downstreamConfig(int c_task) const;
};

}  // namespace mvw
