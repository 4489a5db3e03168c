#include "mvw/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvw/gradcheck.hpp"
#include "mvw/metrics.hpp"
#include "mvw/rng.hpp"

namespace mvw {

namespace {

double pointDistance(const Matd& slice, int i, int j, DistanceKind kind) {
  double sq = 0.0;
  for (Eigen::Index c = 0; c < slice.cols(); ++c) {
    const double diff = slice(i, c) - slice(j, c);
    sq += diff * diff;
  }
  return kind == DistanceKind::squared_euclidean ? sq : std::sqrt(sq);
}

}  // namespace

double bruteForceWeakLatentLoss(const std::vector<Matd>& batch, const Mati& bags,
                                const TripletParams& params) {
  const int k = static_cast<int>(batch.size());
  const int c_classes = static_cast<int>(bags.cols());
  const int t_frames = static_cast<int>(batch[0].rows());
  const int d = static_cast<int>(batch[0].cols());

  double total_over_slices = 0.0;
  for (int c = 0; c < c_classes; ++c) {
    for (int t = 0; t < t_frames; ++t) {
      Matd slice(k, d);
      for (int i = 0; i < k; ++i) slice.row(i) = batch[i].row(t);

      double slice_sum = 0.0;
      int valid = 0;
      for (int a = 0; a < k; ++a) {
        // enumerate every (positive, negative) pair for this anchor and keep
        // the hardest candidate
        bool any = false;
        double hardest = -1e300;
        for (int p = 0; p < k; ++p) {
          if (p == a || bags(p, c) != bags(a, c)) continue;
          for (int n = 0; n < k; ++n) {
            if (n == a || bags(n, c) == bags(a, c)) continue;
            const double cand = pointDistance(slice, a, p, params.distance) -
                                pointDistance(slice, a, n, params.distance) + params.margin;
            hardest = std::max(hardest, cand);
            any = true;
          }
        }
        if (!any) continue;
        slice_sum += std::max(0.0, hardest);
        ++valid;
      }
      total_over_slices += valid > 0 ? slice_sum / valid : 0.0;
    }
  }
  return total_over_slices / (static_cast<double>(c_classes) * t_frames);
}

double bruteForceAveragePrecision(const Vecd& scores, const Veci& labels) {
  const int n = static_cast<int>(scores.size());
  int positives = 0;
  for (int i = 0; i < n; ++i)
    if (labels(i) == 1) ++positives;
  if (positives == 0) return -1.0;

  // distinct thresholds, descending
  std::set<double, std::greater<double>> thresholds;
  for (int i = 0; i < n; ++i) thresholds.insert(scores(i));

  // recall/precision at each threshold by full rescans (quadratic)
  std::vector<double> recalls, precisions;
  for (double th : thresholds) {
    int tp = 0, predicted = 0;
    for (int i = 0; i < n; ++i) {
      if (scores(i) >= th) {
        ++predicted;
        if (labels(i) == 1) ++tp;
      }
    }
    recalls.push_back(static_cast<double>(tp) / positives);
    precisions.push_back(static_cast<double>(tp) / predicted);
  }

  // all-points interpolation: at each achieved recall level, the precision is
  // the max precision over every operating point with recall >= that level
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < recalls.size(); ++j)
      if (recalls[j] >= recalls[i]) best = std::max(best, precisions[j]);
    ap += (recalls[i] - prev_recall) * best;
    prev_recall = recalls[i];
  }
  return ap;
}

OracleCheckResult runOracleChecks(int loss_instances, int ap_instances, std::uint64_t seed) {
  OracleCheckResult res;
  Rng rng(seed);

  for (int i = 0; i < loss_instances; ++i) {
    const int k = rng.rangeInt(2, 8);
    const int t = rng.rangeInt(1, 4);
    const int c = rng.rangeInt(1, 3);
    const int d = rng.rangeInt(1, 8);
    TripletParams params;
    params.margin = rng.uniform(0.2, 2.0);
    params.distance = rng.below(2) ? DistanceKind::euclidean : DistanceKind::squared_euclidean;

    std::vector<Matd> batch;
    for (int kk = 0; kk < k; ++kk) {
      Matd m(t, d);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index cc = 0; cc < m.cols(); ++cc) m(r, cc) = rng.gaussian();
      batch.push_back(std::move(m));
    }
    Mati bags(k, c);
    for (int kk = 0; kk < k; ++kk)
      for (int cc = 0; cc < c; ++cc) bags(kk, cc) = rng.below(2) ? 1 : 0;

    const double got = weakLabelLatentLoss(batch, bags, params);
    const double want = bruteForceWeakLatentLoss(batch, bags, params);
    const double gap = std::abs(got - want);
    res.worst_loss_gap = std::max(res.worst_loss_gap, gap);
    if (gap > 1e-6) {
      res.ok = false;
      res.failures.push_back("loss oracle instance " + std::to_string(i) + ": |" +
                             std::to_string(got) + " - " + std::to_string(want) + "| > 1e-6");
    }
  }

  for (int i = 0; i < ap_instances; ++i) {
    const int n = rng.rangeInt(5, 40);
    Vecd scores(n);
    Veci labels(n);
    for (int j = 0; j < n; ++j) {
      // quantized scores force tie handling through both routes
      scores(j) = rng.below(2) ? rng.uniform() : std::round(rng.uniform() * 8.0) / 8.0;
      labels(j) = rng.below(2) ? 1 : 0;
    }
    const auto got = averagePrecision(scores, labels);
    const double want = bruteForceAveragePrecision(scores, labels);
    if (!got != (want < 0.0)) {
      res.ok = false;
      res.failures.push_back("AP oracle instance " + std::to_string(i) +
                             ": definedness mismatch");
      continue;
    }
    if (got) {
      const double gap = std::abs(*got - want);
      res.worst_ap_gap = std::max(res.worst_ap_gap, gap);
      if (gap > 1e-9) {
        res.ok = false;
        res.failures.push_back("AP oracle instance " + std::to_string(i) + ": |" +
                               std::to_string(*got) + " - " + std::to_string(want) + "| > 1e-9");
      }
    }
  }

  TripletParams params;
  res.latent_grad_err = latentLossGradCheck(5, 3, 2, 4, params, 1e-4, Rng::mix(seed, 21));
  if (res.latent_grad_err > 1e-3) {
    res.ok = false;
    res.failures.push_back("latent loss gradient check: max relative error " +
                           std::to_string(res.latent_grad_err));
  }

  ModelConfig cfg;
  cfg.num_views = 2;
  cfg.num_frames = 2;
  cfg.image_size = 8;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.sl_width = 4;
  cfg.bag_classes = 2;
  cfg.conv_filters = {2, 2, 2};
  cfg.ffn_hidden = 10;
  cfg.bag_hidden = 12;
  res.probe_grad_err = baseProbeGradCheck(cfg, 1e-4, Rng::mix(seed, 22));
  if (res.probe_grad_err > 1e-3) {
    res.ok = false;
    res.failures.push_back("bag probe gradient check: max relative error " +
                           std::to_string(res.probe_grad_err));
  }
  return res;
}

}  // namespace mvw
