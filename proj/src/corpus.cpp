#include "mvw/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "mvw/detect.hpp"
#include "mvw/mvt.hpp"

namespace mvw {

using nlohmann::json;

namespace {

Matd pixelsToMatrix(const TensorData& view) {
  // T x H x W x 3 row-major maps directly onto a (T*H*W) x 3 matrix.
  const std::size_t rows = view.numel() / 3;
  Matd m(rows, 3);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = view.data[r * 3 + c];
  return m;
}

}  // namespace

Corpus Corpus::load(const std::filesystem::path& root, bool require_features) {
  const DatasetIndex index = loadIndex(root);
  if (index.splits.empty())
    throw DataError("corpus at " + root.string() + " has no split assignments");

  Corpus corpus;
  for (const auto& entry : index.entries) {
    const auto dir = root / entry.path;
    const SequenceMeta meta = loadSequenceMeta(dir);
    MultiViewSequence seq = loadSequenceViews(dir, meta.num_views);
    seq.sequence_id = meta.sequence_id;
    seq.fps = meta.fps;
    seq.class_names = meta.class_names;
    seq.validate();

    if (corpus.num_views == 0) {
      corpus.num_views = seq.numViews();
      corpus.num_frames = seq.numFrames();
      corpus.image_size = seq.width();
      corpus.num_classes = static_cast<int>(meta.class_names.size());
      corpus.class_names = meta.class_names;
    } else if (seq.numViews() != corpus.num_views || seq.numFrames() != corpus.num_frames ||
               seq.width() != corpus.image_size || seq.height() != corpus.image_size) {
      throw DataError("sequence '" + entry.sequence_id + "' geometry differs from the corpus");
    }

    LoadedSequence loaded;
    loaded.id = meta.sequence_id;
    for (const TensorData& v : seq.views) loaded.input.pixels.push_back(pixelsToMatrix(v));
    loaded.bag = meta.action_bag.bag;
    if (meta.frame_labels) loaded.frame_labels = meta.frame_labels->labels;

    if (require_features) {
      const TensorData pd = readTensor(dir / "pd.mvt");
      if (pd.rank() != 2 || static_cast<int>(pd.dims[0]) != corpus.num_views ||
          static_cast<int>(pd.dims[1]) != corpus.num_frames)
        throw DataError("pd.mvt shape mismatch for sequence '" + entry.sequence_id + "'");
      loaded.input.pd = matrixFromTensor(pd);

      const TensorData sl = readTensor(dir / "sl.mvt");
      if (sl.rank() != 3 || static_cast<int>(sl.dims[0]) != corpus.num_views ||
          static_cast<int>(sl.dims[1]) != corpus.num_frames)
        throw DataError("sl.mvt shape mismatch for sequence '" + entry.sequence_id + "'");
      const int n = static_cast<int>(sl.dims[2]);
      if (corpus.sl_width == 0) corpus.sl_width = n;
      if (n != corpus.sl_width)
        throw DataError("sl.mvt width differs across sequences at '" + entry.sequence_id + "'");
      for (int s = 0; s < corpus.num_views; ++s) {
        Matd m(corpus.num_frames, n);
        for (int t = 0; t < corpus.num_frames; ++t)
          for (int cell = 0; cell < n; ++cell)
            m(t, cell) = sl.at({static_cast<std::size_t>(s), static_cast<std::size_t>(t),
                                static_cast<std::size_t>(cell)});
        loaded.input.sl.push_back(std::move(m));
      }
    }

    auto split_it = index.splits.find(entry.sequence_id);
    if (split_it == index.splits.end())
      throw DataError("sequence '" + entry.sequence_id + "' has no split assignment");
    (split_it->second == Split::train ? corpus.train : corpus.test).push_back(std::move(loaded));
  }
  return corpus;
}

int featurizeCorpus(const std::filesystem::path& root, const std::string& detections_file,
                    int grid_rows, int grid_cols) {
  const DatasetIndex index = loadIndex(root);
  int sl_width = grid_rows * grid_cols;
  for (const auto& entry : index.entries) {
    const auto dir = root / entry.path;
    const SequenceMeta meta = loadSequenceMeta(dir);
    MultiViewSequence seq = loadSequenceViews(dir, meta.num_views);
    seq.sequence_id = meta.sequence_id;
    seq.class_names = meta.class_names;
    seq.validate();

    const auto det_path = dir / detections_file;
    if (!std::filesystem::exists(det_path))
      throw DataError("missing detections file: " + det_path.string());
    DetectionSet dets = DetectionSet::fromJsonl(det_path, seq.numViews(), seq.numFrames());
    dets.clampToImage(seq.width(), seq.height());
    dets.validate();

    std::vector<GridSpec> grids(seq.numViews(),
                                GridSpec{grid_rows, grid_cols, static_cast<double>(seq.width()),
                                         static_cast<double>(seq.height())});
    const Mati pd = computePdVector(dets);
    const std::vector<Matd> sl = computeSlVector(dets, grids);

    TensorData pd_t({static_cast<std::uint32_t>(pd.rows()), static_cast<std::uint32_t>(pd.cols())});
    for (Eigen::Index s = 0; s < pd.rows(); ++s)
      for (Eigen::Index t = 0; t < pd.cols(); ++t)
        pd_t.at({static_cast<std::size_t>(s), static_cast<std::size_t>(t)}) =
            static_cast<float>(pd(s, t));
    writeTensor(dir / "pd.mvt", pd_t);

    TensorData sl_t({static_cast<std::uint32_t>(seq.numViews()),
                     static_cast<std::uint32_t>(seq.numFrames()),
                     static_cast<std::uint32_t>(sl_width)});
    for (int s = 0; s < seq.numViews(); ++s)
      for (int t = 0; t < seq.numFrames(); ++t)
        for (int n = 0; n < sl_width; ++n)
          sl_t.at({static_cast<std::size_t>(s), static_cast<std::size_t>(t),
                   static_cast<std::size_t>(n)}) = static_cast<float>(sl[s](t, n));
    writeTensor(dir / "sl.mvt", sl_t);
  }

  json info;
  info["grid_rows"] = grid_rows;
  info["grid_cols"] = grid_cols;
  info["sl_width"] = sl_width;
  std::ofstream out(root / "featurize.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (root / "featurize.json").string());
  out << info.dump(2) << "\n";
  return sl_width;
}

}  // namespace mvw
