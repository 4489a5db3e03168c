#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvw/base_model.hpp"
#include "mvw/dataset.hpp"

namespace mvw {

/// One sequence loaded into training-ready form.
struct LoadedSequence {
  std::string id;
  SeqInput<double> input;
  Mati frame_labels;  // T x C, or 0 x 0 when absent
  Veci bag;           // C
};

/// In-memory corpus: pixels, PD/SL features, labels and bags, split into
/// train and test by the index.
struct Corpus {
  int num_views = 0;
  int num_frames = 0;
  int image_size = 0;
  int sl_width = 0;  // 0 until featurized
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<LoadedSequence> train;
  std::vector<LoadedSequence> test;

  /// Loads every indexed sequence. require_features demands pd.mvt/sl.mvt
  /// (written by featurize); the split must be present in the index.
  static Corpus load(const std::filesystem::path& root, bool require_features);
};

/// Writes pd.mvt (S x T) and sl.mvt (S x T x N) for every sequence using
/// detections from `detections_file` inside each sequence directory, plus
/// featurize.json at the corpus root. Returns the SL width N.
int featurizeCorpus(const std::filesystem::path& root, const std::string& detections_file,
                    int grid_rows, int grid_cols);

}  // namespace mvw
