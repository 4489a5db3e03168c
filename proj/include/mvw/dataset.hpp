#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvw/tensor.hpp"

namespace mvw {

/// Synchronized S-view, T-frame pixel block. Each view tensor is
/// T x H x W x 3 with values in [0, 1].
struct MultiViewSequence {
  std::vector<TensorData> views;
  std::string sequence_id;
  double fps = 0.0;
  std::vector<std::string> class_names;

  int numViews() const { return static_cast<int>(views.size()); }
  int numFrames() const { return views.empty() ? 0 : static_cast<int>(views[0].dims[0]); }
  int height() const { return views.empty() ? 0 : static_cast<int>(views[0].dims[1]); }
  int width() const { return views.empty() ? 0 : static_cast<int>(views[0].dims[2]); }

  /// Enforces the shape and pixel-range invariants; throws DataError.
  void validate() const;
};

/// Per-frame multi-hot labels, T x C in {0,1}.
struct FrameLabelMatrix {
  Mati labels;

  int numFrames() const { return static_cast<int>(labels.rows()); }
  int numClasses() const { return static_cast<int>(labels.cols()); }
  void validate() const;
};

/// Sequence-level weak label: one bit per class.
struct ActionBag {
  Veci bag;

  int numClasses() const { return static_cast<int>(bag.size()); }
  void validate() const;
};

/// bag[c] = 1 iff any frame has class c active.
ActionBag deriveActionBag(const FrameLabelMatrix& labels);

enum class Split { train, test };

struct DatasetIndexEntry {
  std::string sequence_id;
  std::string path;  // relative to the corpus root
  bool has_frame_labels = false;
};

struct DatasetIndex {
  std::vector<DatasetIndexEntry> entries;
  std::map<std::string, Split> splits;

  void validateUniqueIds() const;
};

/// Deterministic whole-sequence split. Default train_fraction = 0.5.
/// Requires at least 2 sequences; both sides end up non-empty.
DatasetIndex splitDataset(const DatasetIndex& index, double train_fraction, std::uint64_t seed);

void saveIndex(const std::filesystem::path& corpus_root, const DatasetIndex& index);
DatasetIndex loadIndex(const std::filesystem::path& corpus_root, bool check_paths = true);

/// Per-sequence sidecar metadata (meta.json contents).
struct SequenceMeta {
  std::string sequence_id;
  double fps = 0.0;
  std::vector<std::string> class_names;
  std::optional<FrameLabelMatrix> frame_labels;
  ActionBag action_bag;
  int num_views = 0;
  int num_frames = 0;
};

void saveSequence(const std::filesystem::path& dir, const MultiViewSequence& seq,
                  const FrameLabelMatrix* frame_labels, const ActionBag& bag);
MultiViewSequence loadSequenceViews(const std::filesystem::path& dir, int num_views);
SequenceMeta loadSequenceMeta(const std::filesystem::path& dir);

}  // namespace mvw
