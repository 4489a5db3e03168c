#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mvw/dataset.hpp"
#include "mvw/detect.hpp"

namespace mvw {

/// Appearance and motion template for one action class: a colored block
/// moving inside its own horizontal lane of the shared room square.
struct ClassTemplate {
  std::array<double, 3> color{1.0, 0.0, 0.0};
  double block_half = 0.09;  // half side length in room units
  double speed = 0.25;       // room units per frame step
};

/// Affine camera placement: the unit room square is rotated and scaled into
/// pixel coordinates, one transform per view.
struct ViewParams {
  double scale = 0.8;      // fraction of image_size covered by the room
  double rotation = 0.0;   // radians
  double center_x = 0.5;   // room center as a fraction of image size
  double center_y = 0.5;
};

struct ScenarioConfig {
  int num_views = 2;
  int num_frames = 16;
  int image_size = 24;
  int num_classes = 3;
  std::vector<ClassTemplate> templates;  // filled with defaults when empty
  std::vector<ViewParams> views;         // filled with defaults when empty
  int events_min = 1;
  int events_max = 3;
  int event_len_min = 0;  // 0 means T/3
  int event_len_max = 0;  // 0 means 2T/3
  double noise = 0.03;    // additive Gaussian pixel noise sigma
  double fps = 2.5;

  /// Fills template/view defaults and checks invariants; throws ConfigError.
  ScenarioConfig resolved() const;
};

struct GtBox {
  int cls = 0;
  Box box;
};

struct SceneGroundTruth {
  Mati frame_labels;  // T x C
  Veci bag;           // C
  std::vector<std::vector<std::vector<GtBox>>> actor_boxes;  // [view][frame]

  /// Flattens actor boxes into oracle detections (conf = 1).
  std::vector<std::vector<std::vector<Box>>> detectorBoxes() const;
};

/// Renders a deterministic synthetic sequence: each active class is a colored
/// block whose per-view position is that view's affine image of a shared room
/// coordinate. Actions occupy contiguous frame intervals.
std::pair<MultiViewSequence, SceneGroundTruth> generateScene(const ScenarioConfig& cfg,
                                                             std::uint64_t seed);

/// Writes n sequences in the corpus layout (view_*.mvt, meta.json,
/// detections.jsonl per sequence; index.json at the root) and returns the
/// index. Per-sequence seeds are derived from (seed, sequence number).
DatasetIndex buildCorpus(const ScenarioConfig& cfg, int n_sequences, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

}  // namespace mvw
