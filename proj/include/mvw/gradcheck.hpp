#pragma once

#include <functional>

#include "mvw/base_model.hpp"
#include "mvw/losses.hpp"
#include "mvw/triplet.hpp"

namespace mvw {

/// Central finite differences of a scalar field at `point`.
inline Vecd centralDifferences(const std::function<double(const Vecd&)>& f, Vecd point,
                               double step) {
  Vecd out(point.size());
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double saved = point(i);
    point(i) = saved + step;
    const double up = f(point);
    point(i) = saved - step;
    const double down = f(point);
    point(i) = saved;
    out(i) = (up - down) / (2.0 * step);
  }
  return out;
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor).
inline double maxRelativeError(const Vecd& analytic, const Vecd& fd, double floor = 1e-7) {
  if (analytic.size() != fd.size()) throw NumericError("maxRelativeError: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic(i)), std::abs(fd(i)), floor});
    worst = std::max(worst, std::abs(analytic(i) - fd(i)) / denom);
  }
  return worst;
}

/// Compares an analytic gradient against central differences; returns the
/// max relative error over all coordinates.
inline double gradCheck(const std::function<double(const Vecd&)>& f, const Vecd& point,
                        const Vecd& analytic, double step) {
  return maxRelativeError(analytic, centralDifferences(f, point, step));
}

struct LatentLossPoint {
  std::vector<Matd> batch;  // K matrices of T x d
  Mati bags;                // K x C
};

/// Draws an embedded batch whose (c, t) slices are safely away from every
/// non-smooth boundary: all pairwise distances at least `tie_eps` apart
/// (and away from zero) and no hinge within `tie_eps` of zero. Throws after
/// `max_attempts` resamples.
inline LatentLossPoint sampleTieFreeLatentPoint(int k, int t, int c, int d,
                                                const TripletParams& params, Rng& rng,
                                                double tie_eps = 1e-3, int max_attempts = 100) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    LatentLossPoint pt;
    pt.bags = Mati(k, c);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < c; ++j) pt.bags(i, j) = rng.below(2) ? 1 : 0;
    // need at least one non-constant class column for a meaningful check
    bool informative = false;
    for (int j = 0; j < c && !informative; ++j)
      for (int i = 1; i < k; ++i)
        if (pt.bags(i, j) != pt.bags(0, j)) {
          informative = true;
          break;
        }
    if (!informative) continue;
    for (int i = 0; i < k; ++i) {
      Matd m(t, d);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index cc = 0; cc < m.cols(); ++cc) m(r, cc) = rng.gaussian();
      pt.batch.push_back(std::move(m));
    }

    Graph<double> g(/*track_kinks=*/true);
    std::vector<Graph<double>::Index> rho;
    for (const Matd& m : pt.batch) rho.push_back(g.constant(m));
    weakLabelLatentLossOp(g, rho, pt.bags, params);
    const KinkStats<double>& ks = g.kinks();
    if (ks.hinge > tie_eps && ks.dist_gap > tie_eps) return pt;
  }
  throw NumericError("sampleTieFreeLatentPoint: no tie-free point after " +
                     std::to_string(max_attempts) + " attempts");
}

/// Gradient fidelity of the weak-label latent loss at a tie-free point.
inline double latentLossGradCheck(int k, int t, int c, int d, const TripletParams& params,
                                  double step, std::uint64_t seed) {
  Rng rng(seed);
  const LatentLossPoint pt = sampleTieFreeLatentPoint(k, t, c, d, params, rng);

  const Eigen::Index n = static_cast<Eigen::Index>(k) * t * d;
  Vecd point(n);
  Eigen::Index off = 0;
  for (const Matd& m : pt.batch)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index cc = 0; cc < m.cols(); ++cc) point(off++) = m(r, cc);

  auto unpack = [&](const Vecd& v) {
    std::vector<Matd> batch(k, Matd(t, d));
    Eigen::Index o = 0;
    for (Matd& m : batch)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index cc = 0; cc < m.cols(); ++cc) m(r, cc) = v(o++);
    return batch;
  };
  auto f = [&](const Vecd& v) { return weakLabelLatentLoss(unpack(v), pt.bags, params); };

  // analytic gradient via the graph
  Graph<double> g;
  std::vector<Parameter<double>> leaves(k);
  std::vector<Graph<double>::Index> rho;
  for (int i = 0; i < k; ++i) {
    leaves[i].name = "b" + std::to_string(i);
    leaves[i].value = pt.batch[i];
    leaves[i].zeroGrad();
    rho.push_back(g.leaf(leaves[i]));
  }
  g.backward(weakLabelLatentLossOp(g, rho, pt.bags, params));
  Vecd analytic(n);
  off = 0;
  for (const auto& leaf : leaves)
    for (Eigen::Index r = 0; r < leaf.grad.rows(); ++r)
      for (Eigen::Index cc = 0; cc < leaf.grad.cols(); ++cc) analytic(off++) = leaf.grad(r, cc);

  return maxRelativeError(analytic, centralDifferences(f, point, step));
}

/// Draws a base model + input whose tracked forward pass has every kink
/// margin above `margin_eps`; throws after max_attempts.
struct BaseProbePoint {
  SeqInput<double> input;
  std::uint64_t model_seed = 0;
};

inline SeqInput<double> randomSeqInput(const ModelConfig& cfg, Rng& rng) {
  SeqInput<double> in;
  const Eigen::Index rows = static_cast<Eigen::Index>(cfg.num_frames) * cfg.image_size * cfg.image_size;
  for (int s = 0; s < cfg.num_views; ++s) {
    Matd px(rows, 3);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (int c = 0; c < 3; ++c) px(r, c) = rng.uniform();
    in.pixels.push_back(std::move(px));
  }
  in.pd = Matd(cfg.num_views, cfg.num_frames);
  for (int s = 0; s < cfg.num_views; ++s)
    for (int t = 0; t < cfg.num_frames; ++t) in.pd(s, t) = rng.below(2) ? 1.0 : 0.0;
  for (int s = 0; s < cfg.num_views; ++s) {
    Matd sl = Matd::Zero(cfg.num_frames, cfg.sl_width);
    for (int t = 0; t < cfg.num_frames; ++t)
      if (rng.below(2)) sl(t, static_cast<Eigen::Index>(rng.below(cfg.sl_width))) = 1.0;
    in.sl.push_back(std::move(sl));
  }
  return in;
}

/// Gradient fidelity of a sum-of-bag-scores probe through the full base
/// model, checked over every parameter coordinate.
inline double baseProbeGradCheck(const ModelConfig& cfg, double step, std::uint64_t seed,
                                 double margin_eps = 5e-4, int max_attempts = 100) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const std::uint64_t try_seed = Rng::mix(seed, static_cast<std::uint64_t>(attempt));
    Rng rng(try_seed);
    BaseModel<double> model(cfg, try_seed);
    const SeqInput<double> input = randomSeqInput(cfg, rng);

    {
      Graph<double> probe(/*track_kinks=*/true);
      model.forward(probe, input);
      if (probe.kinks().minMargin() <= margin_eps) continue;
    }

    auto f = [&](const Vecd& theta) {
      model.params().assignValues(theta);
      Graph<double> g;
      const auto nodes = model.forward(g, input);
      return g.val(g.sumAll(nodes.bag_pred))(0, 0);
    };
    const Vecd point = model.params().flattenValues();

    model.params().zeroGrads();
    Graph<double> g;
    const auto nodes = model.forward(g, input);
    g.backward(g.sumAll(nodes.bag_pred));
    const Vecd analytic = model.params().flattenGrads();

    const Vecd fd = centralDifferences(f, point, step);
    model.params().assignValues(point);
    return maxRelativeError(analytic, fd);
  }
  throw NumericError("baseProbeGradCheck: no tie-free draw after " +
                     std::to_string(max_attempts) + " attempts");
}

}  // namespace mvw
