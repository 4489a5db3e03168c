#pragma once

#include <string>
#include <vector>

#include "mvw/error.hpp"

namespace mvw {

enum class PtbOp { max, sum, mean };
enum class LatentMode { per_view, single };

inline std::string toString(PtbOp op) {
  switch (op) {
    case PtbOp::max: return "max";
    case PtbOp::sum: return "sum";
    default: return "mean";
  }
}

inline PtbOp ptbOpFromString(const std::string& s) {
  if (s == "max") return PtbOp::max;
  if (s == "sum") return PtbOp::sum;
  if (s == "mean") return PtbOp::mean;
  throw ConfigError("unknown ptb_op '" + s + "' (expected max, sum or mean)");
}

inline std::string toString(LatentMode m) { return m == LatentMode::per_view ? "per_view" : "single"; }

inline LatentMode latentModeFromString(const std::string& s) {
  if (s == "per_view") return LatentMode::per_view;
  if (s == "single") return LatentMode::single;
  throw ConfigError("unknown latent_mode '" + s + "' (expected per_view or single)");
}

struct ModelConfig {
  // data geometry
  int num_views = 4;
  int num_frames = 62;
  int image_size = 64;
  int sl_width = 16;   // N
  int bag_classes = 12;

  // architecture
  int d = 256;
  int heads = 4;
  std::vector<int> conv_filters{32, 64, 64};
  int ffn_hidden = 400;
  int bag_hidden = 512;

  // switches
  PtbOp ptb_op = PtbOp::max;
  bool use_sl = true;
  bool use_pd = true;
  LatentMode latent_mode = LatentMode::per_view;
  bool layer_norm = false;

  int encodedSide() const { return image_size / 8; }
  int flattenedWidth() const { return encodedSide() * encodedSide() * conv_filters[2]; }

  void validate() const {
    if (num_views < 1) throw ConfigError("model: num_views must be >= 1");
    if (num_frames < 1) throw ConfigError("model: num_frames must be >= 1");
    if (d <= 0) throw ConfigError("model: d must be positive");
    if (heads <= 0 || d % heads != 0)
      throw ConfigError("model: heads must divide d (d=" + std::to_string(d) +
                        ", heads=" + std::to_string(heads) + ")");
    if (conv_filters.size() != 3) throw ConfigError("model: conv_filters must list 3 layers");
    for (int f : conv_filters)
      if (f <= 0) throw ConfigError("model: conv filter counts must be positive");
    if (ffn_hidden <= 0 || bag_hidden <= 0) throw ConfigError("model: layer widths must be positive");
    if (sl_width <= 0) throw ConfigError("model: sl_width must be positive");
    if (bag_classes <= 0) throw ConfigError("model: bag_classes must be positive");
    if (image_size <= 0 || image_size % 8 != 0)
      throw ConfigError("model: image_size must be positive and divisible by 8, got " +
                        std::to_string(image_size));
  }
};

struct DownstreamConfig {
  ModelConfig base;
  int head_hidden1 = 512;
  int head_hidden2 = 256;
  int c_task = 1;  // 1 for detection, C for recognition
  bool use_latents = true;
  bool init_from_base = false;

  void validate() const {
    base.validate();
    if (head_hidden1 <= 0 || head_hidden2 <= 0)
      throw ConfigError("downstream: head widths must be positive");
    if (c_task < 1) throw ConfigError("downstream: c_task must be >= 1");
  }
};

}  // namespace mvw
