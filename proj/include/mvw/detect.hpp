#pragma once

#include <filesystem>
#include <vector>

#include "mvw/dataset.hpp"
#include "mvw/tensor.hpp"

namespace mvw {

/// Axis-aligned pixel rectangle, x1 < x2 and y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double conf = 1.0;

  double area() const { return (x2 - x1) * (y2 - y1); }
};

/// Per (view, frame) person boxes.
struct DetectionSet {
  int num_views = 0;
  int num_frames = 0;
  std::vector<std::vector<std::vector<Box>>> boxes;  // [view][frame]

  static DetectionSet empty(int num_views, int num_frames);

  /// Parses the detections.jsonl format; one line per (view, frame):
  ///   {"view": s, "frame": t, "boxes": [[x1,y1,x2,y2,conf], ...]}
  /// Missing (view, frame) pairs mean no detections in that frame.
  static DetectionSet fromJsonl(const std::filesystem::path& path, int num_views, int num_frames);

  void toJsonl(const std::filesystem::path& path) const;

  /// Clamps boxes to [0,w] x [0,h]; a box that degenerates is rejected.
  void clampToImage(double width, double height);
  void validate() const;
};

/// Non-overlapping rows x cols tiling of a width x height image.
/// Cell n = r * cols + c, row-major.
struct GridSpec {
  int rows = 4;
  int cols = 4;
  double image_w = 0;
  double image_h = 0;

  int cellCount() const { return rows * cols; }
  Box cell(int n) const;
  void validate() const;
};

/// |box ∩ cell| / |box ∪ cell|. Throws on a zero-area box.
double gridIou(const Box& box, const Box& cell);

/// Source of per-frame person boxes. Real detectors look at the pixels;
/// the oracle and file-backed ones look them up.
class DetectorInterface {
 public:
  virtual ~DetectorInterface() = default;
  virtual std::vector<Box> detect(const MultiViewSequence& seq, int view, int frame) = 0;
};

class NullDetector final : public DetectorInterface {
 public:
  std::vector<Box> detect(const MultiViewSequence&, int, int) override { return {}; }
};

/// Replays a fixed box table (ground truth or pre-parsed detections).
class LookupDetector final : public DetectorInterface {
 public:
  explicit LookupDetector(std::vector<std::vector<std::vector<Box>>> boxes)
      : boxes_(std::move(boxes)) {}
  std::vector<Box> detect(const MultiViewSequence&, int view, int frame) override {
    return boxes_.at(view).at(frame);
  }

 private:
  std::vector<std::vector<std::vector<Box>>> boxes_;
};

/// Runs the detector on every (view, frame), clamps to image bounds and
/// validates. Detector failures are rethrown with (view, frame) context.
DetectionSet detectPersons(const MultiViewSequence& seq, DetectorInterface& detector);

/// pd[s][t] = 1 iff the (s,t) box list is non-empty. Result is S x T.
Mati computePdVector(const DetectionSet& dets);

/// Per view: T x N matrix, each row one-hot at the argmax-IOU cell of the
/// selected box (highest confidence, ties by larger area then lower index),
/// or all-zero when the frame has no detection.
std::vector<Matd> computeSlVector(const DetectionSet& dets, const std::vector<GridSpec>& grids);

}  // namespace mvw
