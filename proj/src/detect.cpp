#include "mvw/detect.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mvw {

using nlohmann::json;

DetectionSet DetectionSet::empty(int num_views, int num_frames) {
  DetectionSet d;
  d.num_views = num_views;
  d.num_frames = num_frames;
  d.boxes.assign(num_views, std::vector<std::vector<Box>>(num_frames));
  return d;
}

DetectionSet DetectionSet::fromJsonl(const std::filesystem::path& path, int num_views,
                                     int num_frames) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  DetectionSet out = empty(num_views, num_frames);
  std::set<std::pair<int, int>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("view") || !j.contains("frame") || !j.contains("boxes"))
      throw FormatError(where + ": expected keys view, frame, boxes");
    const int s = j["view"].get<int>();
    const int t = j["frame"].get<int>();
    if (s < 0 || s >= num_views) throw FormatError(where + ": view " + std::to_string(s) + " out of range");
    if (t < 0 || t >= num_frames) throw FormatError(where + ": frame " + std::to_string(t) + " out of range");
    if (!seen.insert({s, t}).second)
      throw FormatError(where + ": duplicate (view, frame) record");
    if (!j["boxes"].is_array()) throw FormatError(where + ": boxes must be an array");
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 5)
        throw FormatError(where + ": each box must be [x1,y1,x2,y2,conf]");
      Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
              b[4].get<double>()};
      out.boxes[s][t].push_back(box);
    }
  }
  out.validate();
  return out;
}

void DetectionSet::toJsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (int s = 0; s < num_views; ++s)
    for (int t = 0; t < num_frames; ++t) {
      if (boxes[s][t].empty()) continue;
      json line;
      line["view"] = s;
      line["frame"] = t;
      json arr = json::array();
      for (const Box& b : boxes[s][t]) arr.push_back({b.x1, b.y1, b.x2, b.y2, b.conf});
      line["boxes"] = arr;
      out << line.dump() << "\n";
    }
}

void DetectionSet::clampToImage(double width, double height) {
  for (int s = 0; s < num_views; ++s)
    for (int t = 0; t < num_frames; ++t)
      for (Box& b : boxes[s][t]) {
        b.x1 = std::clamp(b.x1, 0.0, width);
        b.x2 = std::clamp(b.x2, 0.0, width);
        b.y1 = std::clamp(b.y1, 0.0, height);
        b.y2 = std::clamp(b.y2, 0.0, height);
      }
}

void DetectionSet::validate() const {
  for (int s = 0; s < num_views; ++s)
    for (int t = 0; t < num_frames; ++t)
      for (const Box& b : boxes[s][t]) {
        std::ostringstream os;
        os << "detection at view " << s << " frame " << t;
        if (!(b.x1 < b.x2 && b.y1 < b.y2)) throw DataError(os.str() + ": degenerate box");
        if (!(b.conf >= 0.0 && b.conf <= 1.0))
          throw DataError(os.str() + ": confidence outside [0,1]");
      }
}

Box GridSpec::cell(int n) const {
  const int r = n / cols;
  const int c = n % cols;
  Box b;
  b.x1 = image_w * c / cols;
  b.x2 = image_w * (c + 1) / cols;
  b.y1 = image_h * r / rows;
  b.y2 = image_h * (r + 1) / rows;
  return b;
}

void GridSpec::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("grid must have at least 1 row and 1 column");
  if (!(image_w > 0 && image_h > 0)) throw ConfigError("grid image size must be positive");
}

double gridIou(const Box& box, const Box& cell) {
  if (!(box.area() > 0.0)) throw DataError("gridIou: zero-area box");
  if (!(cell.area() > 0.0)) throw DataError("gridIou: zero-area cell");
  const double iw = std::min(box.x2, cell.x2) - std::max(box.x1, cell.x1);
  const double ih = std::min(box.y2, cell.y2) - std::max(box.y1, cell.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (box.area() + cell.area() - inter);
}

DetectionSet detectPersons(const MultiViewSequence& seq, DetectorInterface& detector) {
  DetectionSet out = DetectionSet::empty(seq.numViews(), seq.numFrames());
  for (int s = 0; s < out.num_views; ++s)
    for (int t = 0; t < out.num_frames; ++t) {
      try {
        out.boxes[s][t] = detector.detect(seq, s, t);
      } catch (const std::exception& e) {
        throw DataError("detector failed at view " + std::to_string(s) + " frame " +
                        std::to_string(t) + ": " + e.what());
      }
    }
  out.clampToImage(seq.width(), seq.height());
  out.validate();
  return out;
}

Mati computePdVector(const DetectionSet& dets) {
  Mati pd = Mati::Zero(dets.num_views, dets.num_frames);
  for (int s = 0; s < dets.num_views; ++s)
    for (int t = 0; t < dets.num_frames; ++t)
      pd(s, t) = dets.boxes[s][t].empty() ? 0 : 1;
  return pd;
}

namespace {

// Highest confidence wins; ties go to larger area, then lower index.
const Box* selectBox(const std::vector<Box>& boxes) {
  const Box* best = nullptr;
  for (const Box& b : boxes) {
    if (!best || b.conf > best->conf || (b.conf == best->conf && b.area() > best->area()))
      best = &b;
  }
  return best;
}

}  // namespace

std::vector<Matd> computeSlVector(const DetectionSet& dets, const std::vector<GridSpec>& grids) {
  if (static_cast<int>(grids.size()) != dets.num_views)
    throw ConfigError("computeSlVector: need one GridSpec per view");
  const int n_cells = grids.empty() ? 0 : grids[0].cellCount();
  for (const GridSpec& g : grids) {
    g.validate();
    if (g.cellCount() != n_cells) throw ConfigError("computeSlVector: grids disagree on N");
  }

  std::vector<Matd> sl;
  sl.reserve(dets.num_views);
  for (int s = 0; s < dets.num_views; ++s) {
    Matd m = Matd::Zero(dets.num_frames, n_cells);
    for (int t = 0; t < dets.num_frames; ++t) {
      const Box* box = selectBox(dets.boxes[s][t]);
      if (!box) continue;  // no detection: all-zero row
      int best_cell = 0;
      double best_iou = -1.0;
      for (int n = 0; n < n_cells; ++n) {
        const double iou = gridIou(*box, grids[s].cell(n));
        if (iou > best_iou) {
          best_iou = iou;
          best_cell = n;
        }
      }
      m(t, best_cell) = 1.0;
    }
    sl.push_back(std::move(m));
  }
  return sl;
}

}  // namespace mvw
