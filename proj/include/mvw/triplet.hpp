#pragma once

#include <limits>
#include <vector>

#include "mvw/graph.hpp"

namespace mvw {

enum class DistanceKind { euclidean, squared_euclidean };

struct TripletParams {
  double margin = 1.0;
  DistanceKind distance = DistanceKind::euclidean;
};

/// K x K matrix of pairwise distances; symmetric with zero diagonal by
/// construction. Squared distances are clamped at zero before the square
/// root.
template <class S>
Mat<S> pairwiseDistances(const Mat<S>& points, DistanceKind kind) {
  const Eigen::Index k = points.rows();
  Mat<S> d = Mat<S>::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const S sq = std::max(S(0), (points.row(i) - points.row(j)).squaredNorm());
      const S v = kind == DistanceKind::squared_euclidean ? sq : std::sqrt(sq);
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

/// Per-anchor mining record for the batch-hard loss.
struct AnchorPick {
  bool valid = false;     // has at least one positive and one negative
  int hardest_pos = -1;   // argmax distance among same-label others
  int hardest_neg = -1;   // argmin distance among different-label points
  double hinge = 0.0;     // d(a,p) - d(a,n) + margin, before the clamp
};

template <class S>
struct BatchHardDetail {
  S loss = S(0);
  int valid_anchors = 0;
  std::vector<AnchorPick> picks;
};

/// Batch-hard triplet loss over a precomputed distance matrix. For each
/// anchor with at least one positive and one negative:
///   term = max(0, max_p d(a,p) - min_n d(a,n) + margin)
/// and the loss is the mean over valid anchors (0 when none exist).
template <class S>
BatchHardDetail<S> batchHardTripletDetail(const Mat<S>& dists, const std::vector<int>& labels,
                                          S margin) {
  const int k = static_cast<int>(dists.rows());
  if (static_cast<int>(labels.size()) != k)
    throw DataError("batchHardTriplet: labels/distances size mismatch");
  BatchHardDetail<S> out;
  out.picks.resize(k);
  S total = S(0);
  for (int a = 0; a < k; ++a) {
    S max_pos = -std::numeric_limits<S>::infinity();
    S min_neg = std::numeric_limits<S>::infinity();
    int pos = -1, neg = -1;
    for (int j = 0; j < k; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (dists(a, j) > max_pos) {
          max_pos = dists(a, j);
          pos = j;
        }
      } else if (dists(a, j) < min_neg) {
        min_neg = dists(a, j);
        neg = j;
      }
    }
    if (pos < 0 || neg < 0) continue;
    AnchorPick& p = out.picks[a];
    p.valid = true;
    p.hardest_pos = pos;
    p.hardest_neg = neg;
    p.hinge = static_cast<double>(max_pos - min_neg + margin);
    total += std::max(S(0), max_pos - min_neg + margin);
    ++out.valid_anchors;
  }
  out.loss = out.valid_anchors > 0 ? total / static_cast<S>(out.valid_anchors) : S(0);
  return out;
}

template <class S>
S batchHardTriplet(const Mat<S>& dists, const std::vector<int>& labels, S margin) {
  return batchHardTripletDetail(dists, labels, margin).loss;
}

/// Graph op: batch-hard triplet loss of a K x d points node.
template <class S>
typename Graph<S>::Index batchHardTripletOp(Graph<S>& g, typename Graph<S>::Index points,
                                            const std::vector<int>& labels,
                                            const TripletParams& params) {
  const Mat<S>& pts = g.val(points);
  const Mat<S> dists = pairwiseDistances(pts, params.distance);
  const BatchHardDetail<S> detail =
      batchHardTripletDetail(dists, labels, static_cast<S>(params.margin));

  if (g.trackingKinks()) {
    // Margins that a finite-difference probe must stay clear of: hinge
    // boundaries and near-equal distances (mining argmax/argmin flips).
    for (const AnchorPick& p : detail.picks)
      if (p.valid) g.noteHinge(static_cast<S>(std::abs(p.hinge)));
    std::vector<S> all;
    for (Eigen::Index i = 0; i < dists.rows(); ++i)
      for (Eigen::Index j = i + 1; j < dists.cols(); ++j) all.push_back(dists(i, j));
    for (std::size_t i = 0; i < all.size(); ++i) {
      g.noteDistGap(all[i]);  // distance to the zero-distance singularity
      for (std::size_t j = i + 1; j < all.size(); ++j)
        g.noteDistGap(std::abs(all[i] - all[j]));
    }
  }

  Mat<S> v(1, 1);
  v(0, 0) = detail.loss;
  const DistanceKind kind = params.distance;
  return g.custom(std::move(v), [points, labels, detail, kind](Graph<S>& g2,
                                                               typename Graph<S>::Index self) {
    if (detail.valid_anchors == 0) return;
    const Mat<S>& pts = g2.val(points);
    const S go = g2.grad(self)(0, 0);
    const S w = go / static_cast<S>(detail.valid_anchors);
    Mat<S> da = Mat<S>::Zero(pts.rows(), pts.cols());
    auto add_pair_grad = [&](int a, int j, S sign) {
      // d/da of d(a, j); subgradient 0 at coincident points.
      RowVec<S> diff = pts.row(a) - pts.row(j);
      if (kind == DistanceKind::euclidean) {
        const S dist = diff.norm();
        if (dist > S(1e-12)) diff /= dist;
        else diff.setZero();
      } else {
        diff *= S(2);
      }
      da.row(a) += sign * w * diff;
      da.row(j) -= sign * w * diff;
    };
    for (int a = 0; a < static_cast<int>(detail.picks.size()); ++a) {
      const AnchorPick& p = detail.picks[a];
      if (!p.valid || p.hinge <= 0.0) continue;
      add_pair_grad(a, p.hardest_pos, S(1));
      add_pair_grad(a, p.hardest_neg, S(-1));
    }
    g2.addGrad(points, da);
  });
}

/// The weak-label latent loss over a batch of per-view embeddings:
/// the mean over classes c and frame indices t of the batch-hard triplet
/// loss on the K frame-t embeddings labeled by the K bags' class-c bits.
/// Slices whose labels are constant across the batch contribute 0.
template <class S>
S weakLabelLatentLoss(const std::vector<Mat<S>>& batch, const Mati& bags,
                      const TripletParams& params) {
  const int k = static_cast<int>(batch.size());
  if (k < 2) throw DataError("weakLabelLatentLoss: batch size K must be >= 2");
  if (bags.rows() != k) throw DataError("weakLabelLatentLoss: bags rows must equal K");
  const int c_classes = static_cast<int>(bags.cols());
  if (c_classes == 0) throw DataError("weakLabelLatentLoss: C must be >= 1");
  const int t_frames = static_cast<int>(batch[0].rows());
  const Eigen::Index d = batch[0].cols();
  for (const Mat<S>& b : batch)
    if (b.rows() != t_frames || b.cols() != d)
      throw DataError("weakLabelLatentLoss: inconsistent embedding shapes");

  S total = S(0);
  Mat<S> slice(k, d);
  std::vector<int> labels(k);
  for (int t = 0; t < t_frames; ++t) {
    for (int i = 0; i < k; ++i) slice.row(i) = batch[i].row(t);
    const Mat<S> dists = pairwiseDistances(slice, params.distance);
    for (int c = 0; c < c_classes; ++c) {
      for (int i = 0; i < k; ++i) labels[i] = bags(i, c);
      total += batchHardTriplet(dists, labels, static_cast<S>(params.margin));
    }
  }
  return total / static_cast<S>(c_classes * t_frames);
}

/// Graph version over K per-sequence embedding nodes (each T x d).
template <class S>
typename Graph<S>::Index weakLabelLatentLossOp(Graph<S>& g,
                                               const std::vector<typename Graph<S>::Index>& rho,
                                               const Mati& bags, const TripletParams& params) {
  const int k = static_cast<int>(rho.size());
  if (k < 2) throw DataError("weakLabelLatentLoss: batch size K must be >= 2");
  if (bags.rows() != k) throw DataError("weakLabelLatentLoss: bags rows must equal K");
  const int c_classes = static_cast<int>(bags.cols());
  if (c_classes == 0) throw DataError("weakLabelLatentLoss: C must be >= 1");
  const int t_frames = static_cast<int>(g.val(rho[0]).rows());

  std::vector<typename Graph<S>::Index> terms;
  std::vector<int> labels(k);
  for (int t = 0; t < t_frames; ++t) {
    std::vector<typename Graph<S>::Index> rows;
    rows.reserve(k);
    for (int i = 0; i < k; ++i) rows.push_back(g.blockRows(rho[i], t, 1));
    const typename Graph<S>::Index slice = g.concatRows(rows);
    for (int c = 0; c < c_classes; ++c) {
      bool all_equal = true;
      for (int i = 0; i < k; ++i) {
        labels[i] = bags(i, c);
        if (labels[i] != bags(0, c)) all_equal = false;
      }
      if (all_equal) continue;  // degenerate slice contributes 0
      terms.push_back(batchHardTripletOp(g, slice, labels, params));
    }
  }
  if (terms.empty()) return g.constant(Mat<S>::Zero(1, 1));
  typename Graph<S>::Index sum = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) sum = g.add(sum, terms[i]);
  return g.scale(sum, S(1) / static_cast<S>(c_classes * t_frames));
}

}  // namespace mvw
