#pragma once

#include "mvw/graph.hpp"

namespace mvw {

constexpr double kBceClampEps = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to
/// [eps, 1 - eps]. Value route, shared by the graph op's forward.
template <class S>
S bceLoss(const Mat<S>& pred, const Mat<S>& target, S eps = static_cast<S>(kBceClampEps)) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DataError("bceLoss: shape mismatch");
  S total = S(0);
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const S p = std::clamp(pred(r, c), eps, S(1) - eps);
      const S y = target(r, c);
      total += -(y * std::log(p) + (S(1) - y) * std::log(S(1) - p));
    }
  return total / static_cast<S>(pred.size());
}

/// Graph op: mean BCE of a prediction node against a constant target.
template <class S>
typename Graph<S>::Index bceLossOp(Graph<S>& g, typename Graph<S>::Index pred,
                                   const Mat<S>& target, S eps = static_cast<S>(kBceClampEps)) {
  Mat<S> v(1, 1);
  v(0, 0) = bceLoss(g.val(pred), target, eps);
  return g.custom(std::move(v), [pred, target, eps](Graph<S>& g2, typename Graph<S>::Index self) {
    const Mat<S>& p = g2.val(pred);
    const S go = g2.grad(self)(0, 0);
    const S inv_n = S(1) / static_cast<S>(p.size());
    Mat<S> dp(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const S raw = p(r, c);
        if (raw < eps || raw > S(1) - eps) {
          dp(r, c) = S(0);  // clamped region is flat
          continue;
        }
        const S y = target(r, c);
        dp(r, c) = go * inv_n * (raw - y) / (raw * (S(1) - raw));
      }
    g2.addGrad(pred, dp);
  });
}

}  // namespace mvw
