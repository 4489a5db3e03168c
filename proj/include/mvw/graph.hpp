#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mvw/error.hpp"
#include "mvw/tensor.hpp"

namespace mvw {

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  void zeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

/// Smallest distance to a non-smooth boundary observed during a tracked
/// forward pass. Finite-difference checks are only meaningful when these
/// margins comfortably exceed the probe step.
template <class S>
struct KinkStats {
  S relu = std::numeric_limits<S>::infinity();
  S pool_gap = std::numeric_limits<S>::infinity();
  S view_reduce_gap = std::numeric_limits<S>::infinity();
  S hinge = std::numeric_limits<S>::infinity();
  S dist_gap = std::numeric_limits<S>::infinity();

  S minMargin() const {
    return std::min({relu, pool_gap, view_reduce_gap, hinge, dist_gap});
  }
};

/// Reverse-mode tape over dense matrices. Nodes are created by the op
/// methods; backward() walks the tape in reverse and accumulates gradients
/// into Parameter::grad for every leaf reached from the root.
template <class S>
class Graph {
 public:
  using Index = std::int32_t;

  explicit Graph(bool track_kinks = false) : track_kinks_(track_kinks) {}

  const Mat<S>& val(Index i) const { return nodes_[i].val; }
  const Mat<S>& grad(Index i) const { return nodes_[i].grad; }
  const KinkStats<S>& kinks() const { return kinks_; }
  bool trackingKinks() const { return track_kinks_; }

  Index constant(Mat<S> v) { return push(std::move(v), nullptr); }

  Index leaf(Parameter<S>& p) {
    Index id = push(p.value, nullptr);
    nodes_[id].param = &p;
    return id;
  }

  /// Extension point for fused ops (losses). `back(graph, self)` must read
  /// grad(self) and accumulate into the op's inputs via addGrad().
  Index custom(Mat<S> v, std::function<void(Graph&, Index)> back) {
    return push(std::move(v), std::move(back));
  }

  void addGrad(Index i, const Mat<S>& g) {
    Node& n = nodes_[i];
    if (!n.has_grad) {
      n.grad.setZero(n.val.rows(), n.val.cols());
      n.has_grad = true;
    }
    n.grad += g;
  }

  void noteHinge(S margin) { kinks_.hinge = std::min(kinks_.hinge, margin); }
  void noteDistGap(S gap) { kinks_.dist_gap = std::min(kinks_.dist_gap, gap); }

  // ---- arithmetic ----

  Index matmul(Index a, Index b) {
    requireCompat(val(a).cols() == val(b).rows(), "matmul");
    return push(val(a) * val(b), [a, b](Graph& g, Index self) {
      const Mat<S>& go = g.grad(self);
      g.addGrad(a, go * g.val(b).transpose());
      g.addGrad(b, g.val(a).transpose() * go);
    });
  }

  Index add(Index a, Index b) {
    requireCompat(sameShape(a, b), "add");
    return push(val(a) + val(b), [a, b](Graph& g, Index self) {
      g.addGrad(a, g.grad(self));
      g.addGrad(b, g.grad(self));
    });
  }

  Index sub(Index a, Index b) {
    requireCompat(sameShape(a, b), "sub");
    return push(val(a) - val(b), [a, b](Graph& g, Index self) {
      g.addGrad(a, g.grad(self));
      g.addGrad(b, Mat<S>(-g.grad(self)));
    });
  }

  Index cwiseMul(Index a, Index b) {
    requireCompat(sameShape(a, b), "cwiseMul");
    return push(val(a).cwiseProduct(val(b)), [a, b](Graph& g, Index self) {
      g.addGrad(a, g.grad(self).cwiseProduct(g.val(b)));
      g.addGrad(b, g.grad(self).cwiseProduct(g.val(a)));
    });
  }

  Index scale(Index a, S k) {
    return push(Mat<S>(val(a) * k), [a, k](Graph& g, Index self) {
      g.addGrad(a, Mat<S>(g.grad(self) * k));
    });
  }

  /// a + row broadcast over all rows of a; row must be 1 x cols(a).
  Index addRowBroadcast(Index a, Index row) {
    requireCompat(val(row).rows() == 1 && val(row).cols() == val(a).cols(), "addRowBroadcast");
    Mat<S> v = val(a);
    v.rowwise() += val(row).row(0);
    return push(std::move(v), [a, row](Graph& g, Index self) {
      g.addGrad(a, g.grad(self));
      g.addGrad(row, Mat<S>(g.grad(self).colwise().sum()));
    });
  }

  // ---- activations ----

  Index relu(Index a) {
    if (track_kinks_ && val(a).size() > 0)
      kinks_.relu = std::min(kinks_.relu, val(a).array().abs().minCoeff());
    return push(val(a).cwiseMax(S(0)), [a](Graph& g, Index self) {
      Mat<S> mask = (g.val(a).array() > S(0)).template cast<S>();
      g.addGrad(a, g.grad(self).cwiseProduct(mask));
    });
  }

  Index sigmoid(Index a) {
    Mat<S> v = val(a).unaryExpr([](S x) {
      if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
      const S e = std::exp(x);
      return e / (S(1) + e);
    });
    return push(std::move(v), [a](Graph& g, Index self) {
      const Mat<S>& y = g.val(self);
      g.addGrad(a, g.grad(self).cwiseProduct(
                       y.cwiseProduct(Mat<S>(Mat<S>::Ones(y.rows(), y.cols()) - y))));
    });
  }

  Index softmaxRows(Index a) {
    Mat<S> v = val(a);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const S m = v.row(r).maxCoeff();
      v.row(r) = (v.row(r).array() - m).exp();
      v.row(r) /= v.row(r).sum();
    }
    return push(std::move(v), [a](Graph& g, Index self) {
      const Mat<S>& p = g.val(self);
      const Mat<S>& go = g.grad(self);
      Mat<S> da(p.rows(), p.cols());
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const S dot = go.row(r).dot(p.row(r));
        da.row(r) = p.row(r).cwiseProduct(Mat<S>(go.row(r).array() - dot).matrix());
      }
      g.addGrad(a, da);
    });
  }

  // ---- shape ----

  Index transpose(Index a) {
    return push(val(a).transpose(), [a](Graph& g, Index self) {
      g.addGrad(a, g.grad(self).transpose());
    });
  }

  Index blockRows(Index a, Eigen::Index r0, Eigen::Index n) {
    requireCompat(r0 >= 0 && r0 + n <= val(a).rows(), "blockRows");
    return push(val(a).middleRows(r0, n), [a, r0, n](Graph& g, Index self) {
      Mat<S> da = Mat<S>::Zero(g.val(a).rows(), g.val(a).cols());
      da.middleRows(r0, n) = g.grad(self);
      g.addGrad(a, da);
    });
  }

  Index blockCols(Index a, Eigen::Index c0, Eigen::Index n) {
    requireCompat(c0 >= 0 && c0 + n <= val(a).cols(), "blockCols");
    return push(val(a).middleCols(c0, n), [a, c0, n](Graph& g, Index self) {
      Mat<S> da = Mat<S>::Zero(g.val(a).rows(), g.val(a).cols());
      da.middleCols(c0, n) = g.grad(self);
      g.addGrad(a, da);
    });
  }

  Index concatRows(const std::vector<Index>& parts) {
    requireCompat(!parts.empty(), "concatRows");
    Eigen::Index rows = 0;
    const Eigen::Index cols = val(parts[0]).cols();
    for (Index p : parts) {
      requireCompat(val(p).cols() == cols, "concatRows");
      rows += val(p).rows();
    }
    Mat<S> v(rows, cols);
    Eigen::Index r = 0;
    for (Index p : parts) {
      v.middleRows(r, val(p).rows()) = val(p);
      r += val(p).rows();
    }
    return push(std::move(v), [parts](Graph& g, Index self) {
      Eigen::Index r = 0;
      for (Index p : parts) {
        g.addGrad(p, g.grad(self).middleRows(r, g.val(p).rows()));
        r += g.val(p).rows();
      }
    });
  }

  Index concatCols(const std::vector<Index>& parts) {
    requireCompat(!parts.empty(), "concatCols");
    Eigen::Index cols = 0;
    const Eigen::Index rows = val(parts[0]).rows();
    for (Index p : parts) {
      requireCompat(val(p).rows() == rows, "concatCols");
      cols += val(p).cols();
    }
    Mat<S> v(rows, cols);
    Eigen::Index c = 0;
    for (Index p : parts) {
      v.middleCols(c, val(p).cols()) = val(p);
      c += val(p).cols();
    }
    return push(std::move(v), [parts](Graph& g, Index self) {
      Eigen::Index c = 0;
      for (Index p : parts) {
        g.addGrad(p, g.grad(self).middleCols(c, g.val(p).cols()));
        c += g.val(p).cols();
      }
    });
  }

  // ---- normalization ----

  /// Row-wise v / sqrt(v.v + eps); eps keeps the zero row differentiable.
  Index l2NormalizeRows(Index a, S eps) {
    const Mat<S>& x = val(a);
    Mat<S> v(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      v.row(r) = x.row(r) / std::sqrt(x.row(r).squaredNorm() + eps);
    return push(std::move(v), [a, eps](Graph& g, Index self) {
      const Mat<S>& x = g.val(a);
      const Mat<S>& go = g.grad(self);
      Mat<S> da(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S q = x.row(r).squaredNorm() + eps;
        const S n = std::sqrt(q);
        const S dot = x.row(r).dot(go.row(r));
        da.row(r) = go.row(r) / n - x.row(r) * (dot / (q * n));
      }
      g.addGrad(a, da);
    });
  }

  /// Row-wise layer normalization with learnable gain/bias (1 x d each).
  Index layerNormRows(Index a, Index gamma, Index beta, S eps) {
    const Mat<S>& x = val(a);
    requireCompat(val(gamma).rows() == 1 && val(gamma).cols() == x.cols(), "layerNormRows");
    requireCompat(val(beta).rows() == 1 && val(beta).cols() == x.cols(), "layerNormRows");
    const S d = static_cast<S>(x.cols());
    Mat<S> v(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S mu = x.row(r).mean();
      const S var = (x.row(r).array() - mu).square().sum() / d;
      const RowVec<S> xhat = ((x.row(r).array() - mu) / std::sqrt(var + eps)).matrix();
      v.row(r) = xhat.cwiseProduct(val(gamma).row(0)) + val(beta).row(0);
    }
    return push(std::move(v), [a, gamma, beta, eps](Graph& g, Index self) {
      const Mat<S>& x = g.val(a);
      const Mat<S>& go = g.grad(self);
      const S d = static_cast<S>(x.cols());
      Mat<S> da(x.rows(), x.cols());
      RowVec<S> dgamma = RowVec<S>::Zero(x.cols());
      RowVec<S> dbeta = RowVec<S>::Zero(x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mu = x.row(r).mean();
        const S var = (x.row(r).array() - mu).square().sum() / d;
        const S inv = S(1) / std::sqrt(var + eps);
        const RowVec<S> xhat = ((x.row(r).array() - mu) * inv).matrix();
        dgamma += go.row(r).cwiseProduct(xhat);
        dbeta += go.row(r);
        const RowVec<S> gh = go.row(r).cwiseProduct(g.val(gamma).row(0));
        const S sum_gh = gh.sum();
        const S dot_gh = gh.dot(xhat);
        da.row(r) = (inv / d) * (d * gh.array() - sum_gh - xhat.array() * dot_gh).matrix();
      }
      g.addGrad(a, da);
      g.addGrad(gamma, dgamma);
      g.addGrad(beta, dbeta);
    });
  }

  // ---- reductions ----

  /// Element-wise max over a stack of same-shape inputs (view fusion).
  /// Ties route the gradient to the lowest input index.
  Index viewMax(const std::vector<Index>& parts) {
    requireCompat(!parts.empty(), "viewMax");
    Mat<S> v = val(parts[0]);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> arg =
        Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(v.rows(), v.cols());
    for (std::size_t k = 1; k < parts.size(); ++k) {
      requireCompat(sameShape(parts[0], parts[k]), "viewMax");
      const Mat<S>& x = val(parts[k]);
      for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c)
          if (x(r, c) > v(r, c)) {
            v(r, c) = x(r, c);
            arg(r, c) = static_cast<int>(k);
          }
    }
    if (track_kinks_ && parts.size() > 1) {
      for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
          S top = -std::numeric_limits<S>::infinity();
          S second = top;
          for (std::size_t k = 0; k < parts.size(); ++k) {
            const S x = val(parts[k])(r, c);
            if (x > top) {
              second = top;
              top = x;
            } else if (x > second) {
              second = x;
            }
          }
          kinks_.view_reduce_gap = std::min(kinks_.view_reduce_gap, top - second);
        }
    }
    return push(std::move(v), [parts, arg](Graph& g, Index self) {
      const Mat<S>& go = g.grad(self);
      for (std::size_t k = 0; k < parts.size(); ++k) {
        Mat<S> da = Mat<S>::Zero(go.rows(), go.cols());
        for (Eigen::Index r = 0; r < go.rows(); ++r)
          for (Eigen::Index c = 0; c < go.cols(); ++c)
            if (arg(r, c) == static_cast<int>(k)) da(r, c) = go(r, c);
        g.addGrad(parts[k], da);
      }
    });
  }

  Index viewSum(const std::vector<Index>& parts) {
    requireCompat(!parts.empty(), "viewSum");
    Mat<S> v = val(parts[0]);
    for (std::size_t k = 1; k < parts.size(); ++k) {
      requireCompat(sameShape(parts[0], parts[k]), "viewSum");
      v += val(parts[k]);
    }
    return push(std::move(v), [parts](Graph& g, Index self) {
      for (Index p : parts) g.addGrad(p, g.grad(self));
    });
  }

  Index viewMean(const std::vector<Index>& parts) {
    Index s = viewSum(parts);
    return scale(s, S(1) / static_cast<S>(parts.size()));
  }

  /// Column means as a 1 x C row, accumulated in ascending row order so the
  /// result is bit-reproducible against a plain loop.
  Index meanRowsOrdered(Index a) {
    const Mat<S>& x = val(a);
    Mat<S> v = Mat<S>::Zero(1, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      S acc = S(0);
      for (Eigen::Index r = 0; r < x.rows(); ++r) acc += x(r, c);
      v(0, c) = acc / static_cast<S>(x.rows());
    }
    return push(std::move(v), [a](Graph& g, Index self) {
      const Mat<S>& x = g.val(a);
      const S inv = S(1) / static_cast<S>(x.rows());
      g.addGrad(a, Mat<S>((g.grad(self) * inv).replicate(x.rows(), 1)));
    });
  }

  Index sumAll(Index a) {
    Mat<S> v(1, 1);
    v(0, 0) = val(a).sum();
    return push(std::move(v), [a](Graph& g, Index self) {
      const S go = g.grad(self)(0, 0);
      g.addGrad(a, Mat<S>(Mat<S>::Constant(g.val(a).rows(), g.val(a).cols(), go)));
    });
  }

  // ---- image ops ----
  // Frame stacks are (F*H*W) x C matrices, row index (f*H + y)*W + x.

  /// 3x3 convolution with zero padding 1 ("same"), via im2col.
  /// w is (9*Cin) x Cout, b is 1 x Cout.
  Index conv2dSame3x3(Index x, Index w, Index b, int frames, int h, int wdt) {
    const Eigen::Index cin = val(x).cols();
    requireCompat(val(x).rows() == static_cast<Eigen::Index>(frames) * h * wdt, "conv2d input");
    requireCompat(val(w).rows() == 9 * cin && val(b).rows() == 1 &&
                      val(b).cols() == val(w).cols(),
                  "conv2d weights");
    Mat<S> m = im2col3x3(val(x), frames, h, wdt);
    Mat<S> v = m * val(w);
    v.rowwise() += val(b).row(0);
    return push(std::move(v), [x, w, b, frames, h, wdt](Graph& g, Index self) {
      const Mat<S>& go = g.grad(self);
      const Mat<S> m = im2col3x3(g.val(x), frames, h, wdt);
      g.addGrad(w, Mat<S>(m.transpose() * go));
      g.addGrad(b, Mat<S>(go.colwise().sum()));
      g.addGrad(x, col2im3x3(Mat<S>(go * g.val(w).transpose()), frames, h, wdt,
                             static_cast<int>(g.val(x).cols())));
    });
  }

  /// 2x2 max pooling, stride 2; h and w must be even.
  Index maxPool2x2(Index x, int frames, int h, int wdt) {
    requireCompat(h % 2 == 0 && wdt % 2 == 0, "maxPool2x2 needs even h, w");
    requireCompat(val(x).rows() == static_cast<Eigen::Index>(frames) * h * wdt, "maxPool2x2 input");
    const Eigen::Index ch = val(x).cols();
    const int oh = h / 2, ow = wdt / 2;
    Mat<S> v(static_cast<Eigen::Index>(frames) * oh * ow, ch);
    Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> src(v.rows(), ch);
    for (int f = 0; f < frames; ++f)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index out_row = (static_cast<Eigen::Index>(f) * oh + oy) * ow + ox;
          const Eigen::Index r00 = (static_cast<Eigen::Index>(f) * h + 2 * oy) * wdt + 2 * ox;
          const Eigen::Index cand[4] = {r00, r00 + 1, r00 + wdt, r00 + wdt + 1};
          for (Eigen::Index c = 0; c < ch; ++c) {
            Eigen::Index best = cand[0];
            S top = val(x)(cand[0], c), second = -std::numeric_limits<S>::infinity();
            for (int k = 1; k < 4; ++k) {
              const S xv = val(x)(cand[k], c);
              if (xv > top) {
                second = top;
                top = xv;
                best = cand[k];
              } else if (xv > second) {
                second = xv;
              }
            }
            // an exact tie at zero means clamped relu inputs: locally constant,
            // already guarded by the relu margin
            if (track_kinks_ && !(top == S(0) && second == S(0)))
              kinks_.pool_gap = std::min(kinks_.pool_gap, top - second);
            v(out_row, c) = top;
            src(out_row, c) = best;
          }
        }
    return push(std::move(v), [x, src](Graph& g, Index self) {
      const Mat<S>& go = g.grad(self);
      Mat<S> da = Mat<S>::Zero(g.val(x).rows(), g.val(x).cols());
      for (Eigen::Index r = 0; r < go.rows(); ++r)
        for (Eigen::Index c = 0; c < go.cols(); ++c) da(src(r, c), c) += go(r, c);
      g.addGrad(x, da);
    });
  }

  /// (F*H*W) x C -> F x (H*W*C); per frame, pixels row-major then channel.
  Index flattenFrames(Index x, int frames, int h, int wdt) {
    const Eigen::Index ch = val(x).cols();
    requireCompat(val(x).rows() == static_cast<Eigen::Index>(frames) * h * wdt, "flattenFrames");
    Mat<S> v(frames, static_cast<Eigen::Index>(h) * wdt * ch);
    for (int f = 0; f < frames; ++f)
      for (int p = 0; p < h * wdt; ++p)
        for (Eigen::Index c = 0; c < ch; ++c)
          v(f, static_cast<Eigen::Index>(p) * ch + c) =
              val(x)(static_cast<Eigen::Index>(f) * h * wdt + p, c);
    return push(std::move(v), [x, frames, h, wdt](Graph& g, Index self) {
      const Mat<S>& go = g.grad(self);
      const Eigen::Index ch = g.val(x).cols();
      Mat<S> da(g.val(x).rows(), ch);
      for (int f = 0; f < frames; ++f)
        for (int p = 0; p < h * wdt; ++p)
          for (Eigen::Index c = 0; c < ch; ++c)
            da(static_cast<Eigen::Index>(f) * h * wdt + p, c) =
                go(f, static_cast<Eigen::Index>(p) * ch + c);
      g.addGrad(x, da);
    });
  }

  // ---- backward ----

  void backward(Index root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
      throw NumericError("backward root must be a 1x1 scalar");
    addGrad(root, Mat<S>::Ones(1, 1));
    for (Index i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.param) n.param->grad += n.grad;
      if (n.back) n.back(*this, i);
    }
  }

  // im2col column layout: kernel position (ky*3 + kx) major, channel minor.
  static Mat<S> im2col3x3(const Mat<S>& x, int frames, int h, int w) {
    const Eigen::Index cin = x.cols();
    Mat<S> m = Mat<S>::Zero(x.rows(), 9 * cin);
    for (int f = 0; f < frames; ++f)
      for (int y = 0; y < h; ++y)
        for (int xc = 0; xc < w; ++xc) {
          const Eigen::Index row = (static_cast<Eigen::Index>(f) * h + y) * w + xc;
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = xc + kx - 1;
              if (sx < 0 || sx >= w) continue;
              const Eigen::Index src = (static_cast<Eigen::Index>(f) * h + sy) * w + sx;
              m.block(row, static_cast<Eigen::Index>(ky * 3 + kx) * cin, 1, cin) = x.row(src);
            }
          }
        }
    return m;
  }

  static Mat<S> col2im3x3(const Mat<S>& m, int frames, int h, int w, int cin) {
    Mat<S> x = Mat<S>::Zero(static_cast<Eigen::Index>(frames) * h * w, cin);
    for (int f = 0; f < frames; ++f)
      for (int y = 0; y < h; ++y)
        for (int xc = 0; xc < w; ++xc) {
          const Eigen::Index row = (static_cast<Eigen::Index>(f) * h + y) * w + xc;
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = xc + kx - 1;
              if (sx < 0 || sx >= w) continue;
              const Eigen::Index src = (static_cast<Eigen::Index>(f) * h + sy) * w + sx;
              x.row(src) += m.block(row, static_cast<Eigen::Index>(ky * 3 + kx) * cin, 1, cin);
            }
          }
        }
    return x;
  }

 private:
  struct Node {
    Mat<S> val;
    Mat<S> grad;
    std::function<void(Graph&, Index)> back;
    Parameter<S>* param = nullptr;
    bool has_grad = false;
  };

  bool sameShape(Index a, Index b) const {
    return val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols();
  }

  static void requireCompat(bool ok, const char* where) {
    if (!ok) throw DataError(std::string("shape error in ") + where);
  }

  Index push(Mat<S> v, std::function<void(Graph&, Index)> back) {
    Node n;
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Index>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool track_kinks_;
  KinkStats<S> kinks_;
};

}  // namespace mvw
