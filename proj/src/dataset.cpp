#include "mvw/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mvw/mvt.hpp"
#include "mvw/rng.hpp"

namespace mvw {

using nlohmann::json;

void MultiViewSequence::validate() const {
  if (views.empty()) throw DataError("sequence '" + sequence_id + "': no views");
  for (std::size_t s = 0; s < views.size(); ++s) {
    const TensorData& v = views[s];
    if (v.rank() != 4 || v.dims[3] != 3)
      throw DataError("sequence '" + sequence_id + "': view " + std::to_string(s) +
                      " is not T x H x W x 3");
    if (v.dims[0] != views[0].dims[0] || v.dims[1] != views[0].dims[1] ||
        v.dims[2] != views[0].dims[2])
      throw DataError("sequence '" + sequence_id + "': view " + std::to_string(s) +
                      " shape differs from view 0");
    if (v.dims[0] < 1) throw DataError("sequence '" + sequence_id + "': T < 1");
    for (float x : v.data)
      if (!(x >= 0.0f && x <= 1.0f))
        throw DataError("sequence '" + sequence_id + "': pixel value " + std::to_string(x) +
                        " outside [0,1] in view " + std::to_string(s));
  }
}

void FrameLabelMatrix::validate() const {
  for (Eigen::Index t = 0; t < labels.rows(); ++t)
    for (Eigen::Index c = 0; c < labels.cols(); ++c)
      if (labels(t, c) != 0 && labels(t, c) != 1) {
        std::ostringstream os;
        os << "frame_labels[" << t << "][" << c << "] = " << labels(t, c)
           << " is not binary";
        throw DataError(os.str());
      }
}

void ActionBag::validate() const {
  for (Eigen::Index c = 0; c < bag.size(); ++c)
    if (bag(c) != 0 && bag(c) != 1)
      throw DataError("action_bag[" + std::to_string(c) + "] = " + std::to_string(bag(c)) +
                      " is not binary");
}

ActionBag deriveActionBag(const FrameLabelMatrix& labels) {
  labels.validate();
  ActionBag out;
  out.bag = Veci::Zero(labels.numClasses());
  for (Eigen::Index c = 0; c < labels.labels.cols(); ++c)
    for (Eigen::Index t = 0; t < labels.labels.rows(); ++t)
      if (labels.labels(t, c) == 1) {
        out.bag(c) = 1;
        break;
      }
  return out;
}

void DatasetIndex::validateUniqueIds() const {
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (!seen.insert(e.sequence_id).second)
      throw DataError("duplicate sequence_id in index: " + e.sequence_id);
}

DatasetIndex splitDataset(const DatasetIndex& index, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0,1), got " + std::to_string(train_fraction));
  const std::size_t n = index.entries.size();
  if (n < 2) throw DataError("split requires at least 2 sequences, got " + std::to_string(n));
  index.validateUniqueIds();

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& e : index.entries) ids.push_back(e.sequence_id);
  Rng rng(seed);
  rng.shuffle(ids);

  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  DatasetIndex out = index;
  out.splits.clear();
  for (std::size_t i = 0; i < n; ++i)
    out.splits[ids[i]] = i < n_train ? Split::train : Split::test;
  return out;
}

void saveIndex(const std::filesystem::path& corpus_root, const DatasetIndex& index) {
  index.validateUniqueIds();
  json j;
  j["entries"] = json::array();
  for (const auto& e : index.entries)
    j["entries"].push_back({{"sequence_id", e.sequence_id},
                            {"path", e.path},
                            {"has_frame_labels", e.has_frame_labels}});
  json splits = json::object();
  for (const auto& [id, sp] : index.splits) splits[id] = sp == Split::train ? "train" : "test";
  j["splits"] = splits;
  std::ofstream out(corpus_root / "index.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (corpus_root / "index.json").string());
  out << j.dump(2) << "\n";
}

DatasetIndex loadIndex(const std::filesystem::path& corpus_root, bool check_paths) {
  const auto path = corpus_root / "index.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetIndex index;
  for (const auto& e : j.at("entries")) {
    DatasetIndexEntry entry;
    entry.sequence_id = e.at("sequence_id").get<std::string>();
    entry.path = e.at("path").get<std::string>();
    entry.has_frame_labels = e.at("has_frame_labels").get<bool>();
    index.entries.push_back(std::move(entry));
  }
  if (j.contains("splits"))
    for (const auto& [id, sp] : j.at("splits").items()) {
      const auto v = sp.get<std::string>();
      if (v != "train" && v != "test") throw FormatError(path.string() + ": bad split '" + v + "'");
      index.splits[id] = v == "train" ? Split::train : Split::test;
    }
  index.validateUniqueIds();
  if (check_paths)
    for (const auto& e : index.entries)
      if (!std::filesystem::is_directory(corpus_root / e.path))
        throw DataError("index entry '" + e.sequence_id + "' does not resolve to a directory: " +
                        (corpus_root / e.path).string());
  return index;
}

namespace {

json labelsToJson(const Mati& m) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(t, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mati labelsFromJson(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw FormatError(what + ": expected a non-empty array");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Mati m(rows, cols);
  for (std::size_t t = 0; t < rows; ++t) {
    if (j[t].size() != cols) throw FormatError(what + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) m(t, c) = j[t][c].get<int>();
  }
  return m;
}

}  // namespace

void saveSequence(const std::filesystem::path& dir, const MultiViewSequence& seq,
                  const FrameLabelMatrix* frame_labels, const ActionBag& bag) {
  seq.validate();
  bag.validate();
  std::filesystem::create_directories(dir);
  for (int s = 0; s < seq.numViews(); ++s)
    writeTensor(dir / ("view_" + std::to_string(s) + ".mvt"), seq.views[s]);

  json meta;
  meta["sequence_id"] = seq.sequence_id;
  meta["fps"] = seq.fps;
  meta["class_names"] = seq.class_names;
  meta["num_views"] = seq.numViews();
  meta["num_frames"] = seq.numFrames();
  meta["action_bag"] = std::vector<int>(bag.bag.data(), bag.bag.data() + bag.bag.size());
  if (frame_labels) {
    frame_labels->validate();
    const ActionBag derived = deriveActionBag(*frame_labels);
    if (derived.bag != bag.bag)
      throw DataError("sequence '" + seq.sequence_id + "': action_bag does not match frame labels");
    meta["frame_labels"] = labelsToJson(frame_labels->labels);
  }
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
}

MultiViewSequence loadSequenceViews(const std::filesystem::path& dir, int num_views) {
  MultiViewSequence seq;
  for (int s = 0; s < num_views; ++s)
    seq.views.push_back(readTensor(dir / ("view_" + std::to_string(s) + ".mvt")));
  return seq;
}

SequenceMeta loadSequenceMeta(const std::filesystem::path& dir) {
  const auto path = dir / "meta.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  SequenceMeta meta;
  try {
    meta.sequence_id = j.at("sequence_id").get<std::string>();
    meta.fps = j.at("fps").get<double>();
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    meta.num_views = j.at("num_views").get<int>();
    meta.num_frames = j.at("num_frames").get<int>();
    const auto bag_vec = j.at("action_bag").get<std::vector<int>>();
    meta.action_bag.bag = Eigen::Map<const Veci>(bag_vec.data(), bag_vec.size());
    meta.action_bag.validate();
    if (j.contains("frame_labels")) {
      FrameLabelMatrix labels;
      labels.labels = labelsFromJson(j.at("frame_labels"), path.string() + ": frame_labels");
      labels.validate();
      const ActionBag derived = deriveActionBag(labels);
      if (derived.bag != meta.action_bag.bag)
        throw DataError(path.string() + ": action_bag inconsistent with frame_labels");
      meta.frame_labels = std::move(labels);
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return meta;
}

}  // namespace mvw
