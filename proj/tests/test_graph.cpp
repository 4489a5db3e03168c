#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvw/gradcheck.hpp"
#include "mvw/graph.hpp"
#include "mvw/losses.hpp"
#include "mvw/rng.hpp"

using namespace mvw;

namespace {

Matd randomMat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.gaussian();
  return m;
}

// Probes sum(op(x) .* W) for a fixed random W so every output entry matters,
// and compares the tape gradient against central differences on x.
template <class BuildOp>
double opGradCheck(const Matd& x0, BuildOp&& build, std::uint64_t seed) {
  Rng rng(seed);
  Matd weight;

  Parameter<double> p;
  p.name = "x";
  p.value = x0;
  p.zeroGrad();

  auto run = [&](Graph<double>& g) {
    const auto out = build(g, g.leaf(p));
    if (weight.size() == 0) weight = randomMat(g.val(out).rows(), g.val(out).cols(), rng);
    return g.sumAll(g.cwiseMul(out, g.constant(weight)));
  };

  {
    Graph<double> g;
    g.backward(run(g));
  }
  Vecd analytic(p.grad.size());
  Eigen::Index off = 0;
  for (Eigen::Index r = 0; r < p.grad.rows(); ++r)
    for (Eigen::Index c = 0; c < p.grad.cols(); ++c) analytic(off++) = p.grad(r, c);

  auto f = [&](const Vecd& v) {
    Eigen::Index o = 0;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = v(o++);
    Graph<double> g;
    return g.val(run(g))(0, 0);
  };
  Vecd point(p.value.size());
  off = 0;
  for (Eigen::Index r = 0; r < x0.rows(); ++r)
    for (Eigen::Index c = 0; c < x0.cols(); ++c) point(off++) = x0(r, c);
  const double err = maxRelativeError(analytic, centralDifferences(f, point, 1e-5));
  p.value = x0;
  return err;
}

}  // namespace

TEST_CASE("matmul value and gradient") {
  Rng rng(1);
  const Matd a = randomMat(3, 4, rng);
  const Matd b = randomMat(4, 5, rng);
  Graph<double> g;
  const auto m = g.matmul(g.constant(a), g.constant(b));
  CHECK((g.val(m) - a * b).norm() == doctest::Approx(0.0));

  CHECK(opGradCheck(a, [&](Graph<double>& g2, Graph<double>::Index x) {
          return g2.matmul(x, g2.constant(b));
        }, 2) < 1e-6);
  CHECK(opGradCheck(b, [&](Graph<double>& g2, Graph<double>::Index x) {
          return g2.matmul(g2.constant(a), x);
        }, 3) < 1e-6);
}

TEST_CASE("elementwise ops gradients") {
  Rng rng(4);
  const Matd a = randomMat(3, 3, rng);
  const Matd b = randomMat(3, 3, rng);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) { return g.add(x, g.constant(b)); }, 5) < 1e-6);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) { return g.sub(g.constant(b), x); }, 6) < 1e-6);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) { return g.cwiseMul(x, g.constant(b)); }, 7) <
        1e-6);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) { return g.scale(x, -2.5); }, 8) < 1e-6);
}

TEST_CASE("addRowBroadcast gradient flows to both operands") {
  Rng rng(9);
  const Matd a = randomMat(4, 3, rng);
  const Matd row = randomMat(1, 3, rng);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) {
          return g.addRowBroadcast(x, g.constant(row));
        }, 10) < 1e-6);
  CHECK(opGradCheck(row, [&](Graph<double>& g, auto x) {
          return g.addRowBroadcast(g.constant(a), x);
        }, 11) < 1e-6);
}

TEST_CASE("activations: relu, sigmoid, softmax") {
  Rng rng(12);
  // keep relu inputs away from the kink
  Matd a = randomMat(4, 4, rng);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::abs(a(i)) < 0.05) a(i) += 0.1;
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.relu(x); }, 13) < 1e-6);
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.sigmoid(x); }, 14) < 1e-6);
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.softmaxRows(x); }, 15) < 1e-5);

  Graph<double> g;
  const auto sm = g.softmaxRows(g.constant(a));
  for (Eigen::Index r = 0; r < 4; ++r)
    CHECK(g.val(sm).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shape ops: transpose, blocks, concats") {
  Rng rng(16);
  const Matd a = randomMat(4, 6, rng);
  const Matd b = randomMat(4, 2, rng);
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.transpose(x); }, 17) < 1e-6);
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.blockRows(x, 1, 2); }, 18) < 1e-6);
  CHECK(opGradCheck(a, [](Graph<double>& g, auto x) { return g.blockCols(x, 2, 3); }, 19) < 1e-6);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) {
          return g.concatCols({x, g.constant(b)});
        }, 20) < 1e-6);
  CHECK(opGradCheck(a, [&](Graph<double>& g, auto x) {
          return g.concatRows({g.constant(a), x});
        }, 21) < 1e-6);
}

TEST_CASE("l2NormalizeRows: unit rows and exact gradient") {
  Rng rng(22);
  const Matd a = randomMat(5, 4, rng);
  Graph<double> g;
  const auto n = g.l2NormalizeRows(g.constant(a), 1e-12);
  for (Eigen::Index r = 0; r < 5; ++r)
    CHECK(g.val(n).row(r).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(opGradCheck(a, [](Graph<double>& g2, auto x) {
          return g2.l2NormalizeRows(x, 1e-12);
        }, 23) < 1e-6);
}

TEST_CASE("l2NormalizeRows: zero row stays finite") {
  Graph<double> g;
  const auto n = g.l2NormalizeRows(g.constant(Matd::Zero(2, 3)), 1e-12);
  CHECK(g.val(n).allFinite());
}

TEST_CASE("layerNormRows matches a hand computation and its gradient") {
  Rng rng(24);
  const Matd a = randomMat(3, 5, rng);
  const Matd gamma = randomMat(1, 5, rng);
  const Matd beta = randomMat(1, 5, rng);
  Graph<double> g;
  const auto ln = g.layerNormRows(g.constant(a), g.constant(gamma), g.constant(beta), 1e-5);
  for (Eigen::Index r = 0; r < 3; ++r) {
    const double mu = a.row(r).mean();
    const double var = (a.row(r).array() - mu).square().sum() / 5.0;
    for (Eigen::Index c = 0; c < 5; ++c) {
      const double want = gamma(0, c) * (a(r, c) - mu) / std::sqrt(var + 1e-5) + beta(0, c);
      CHECK(g.val(ln)(r, c) == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK(opGradCheck(a, [&](Graph<double>& g2, auto x) {
          return g2.layerNormRows(x, g2.constant(gamma), g2.constant(beta), 1e-5);
        }, 25) < 1e-5);
  CHECK(opGradCheck(gamma, [&](Graph<double>& g2, auto x) {
          return g2.layerNormRows(g2.constant(a), x, g2.constant(beta), 1e-5);
        }, 26) < 1e-5);
}

TEST_CASE("view reductions: values and gradients") {
  Rng rng(27);
  const Matd a = randomMat(3, 4, rng);
  const Matd b = randomMat(3, 4, rng);
  const Matd c = randomMat(3, 4, rng);
  Graph<double> g;
  const auto vm = g.viewMax({g.constant(a), g.constant(b), g.constant(c)});
  const auto vs = g.viewSum({g.constant(a), g.constant(b), g.constant(c)});
  const auto va = g.viewMean({g.constant(a), g.constant(b), g.constant(c)});
  CHECK((g.val(vm) - a.cwiseMax(b).cwiseMax(c)).norm() == doctest::Approx(0.0));
  CHECK((g.val(vs) - (a + b + c)).norm() == doctest::Approx(0.0));
  CHECK((g.val(va) - (a + b + c) / 3.0).norm() < 1e-12);

  CHECK(opGradCheck(a, [&](Graph<double>& g2, auto x) {
          return g2.viewMax({x, g2.constant(b), g2.constant(c)});
        }, 28) < 1e-6);
  CHECK(opGradCheck(b, [&](Graph<double>& g2, auto x) {
          return g2.viewSum({g2.constant(a), x, g2.constant(c)});
        }, 29) < 1e-6);
  CHECK(opGradCheck(c, [&](Graph<double>& g2, auto x) {
          return g2.viewMean({g2.constant(a), g2.constant(b), x});
        }, 30) < 1e-6);
}

TEST_CASE("meanRowsOrdered equals an ascending loop bitwise") {
  Rng rng(31);
  const Matd a = randomMat(7, 3, rng);
  Graph<double> g;
  const auto m = g.meanRowsOrdered(g.constant(a));
  for (Eigen::Index c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < 7; ++r) acc += a(r, c);
    CHECK(g.val(m)(0, c) == acc / 7.0);  // exact: same accumulation order
  }
  CHECK(opGradCheck(a, [](Graph<double>& g2, auto x) { return g2.meanRowsOrdered(x); }, 32) < 1e-6);
}

TEST_CASE("conv2dSame3x3 matches a direct nested-loop convolution") {
  Rng rng(33);
  const int F = 2, H = 5, W = 4, Cin = 3, Cout = 2;
  const Matd x = randomMat(F * H * W, Cin, rng);
  const Matd w = randomMat(9 * Cin, Cout, rng);
  const Matd b = randomMat(1, Cout, rng);

  Graph<double> g;
  const auto out = g.conv2dSame3x3(g.constant(x), g.constant(w), g.constant(b), F, H, W);

  for (int f = 0; f < F; ++f)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int co = 0; co < Cout; ++co) {
          double want = b(0, co);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              for (int ci = 0; ci < Cin; ++ci)
                want += x((f * H + sy) * W + sx, ci) * w((ky * 3 + kx) * Cin + ci, co);
            }
          CHECK(g.val(out)((f * H + y) * W + xx, co) == doctest::Approx(want).epsilon(1e-12));
        }

  CHECK(opGradCheck(x, [&](Graph<double>& g2, auto xi) {
          return g2.conv2dSame3x3(xi, g2.constant(w), g2.constant(b), F, H, W);
        }, 34) < 1e-5);
  CHECK(opGradCheck(w, [&](Graph<double>& g2, auto wi) {
          return g2.conv2dSame3x3(g2.constant(x), wi, g2.constant(b), F, H, W);
        }, 35) < 1e-5);
  CHECK(opGradCheck(b, [&](Graph<double>& g2, auto bi) {
          return g2.conv2dSame3x3(g2.constant(x), g2.constant(w), bi, F, H, W);
        }, 36) < 1e-6);
}

TEST_CASE("maxPool2x2 matches a loop reference and routes gradient to argmax") {
  Rng rng(37);
  const int F = 2, H = 4, W = 6, C = 3;
  const Matd x = randomMat(F * H * W, C, rng);
  Graph<double> g;
  const auto out = g.maxPool2x2(g.constant(x), F, H, W);
  REQUIRE(g.val(out).rows() == F * (H / 2) * (W / 2));
  for (int f = 0; f < F; ++f)
    for (int oy = 0; oy < H / 2; ++oy)
      for (int ox = 0; ox < W / 2; ++ox)
        for (int c = 0; c < C; ++c) {
          double want = -1e300;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              want = std::max(want, x((f * H + 2 * oy + dy) * W + 2 * ox + dx, c));
          CHECK(g.val(out)((f * (H / 2) + oy) * (W / 2) + ox, c) == want);
        }
  CHECK(opGradCheck(x, [&](Graph<double>& g2, auto xi) {
          return g2.maxPool2x2(xi, F, H, W);
        }, 38) < 1e-5);
}

TEST_CASE("flattenFrames is a bijection with the documented layout") {
  Rng rng(39);
  const int F = 3, H = 2, W = 2, C = 2;
  const Matd x = randomMat(F * H * W, C, rng);
  Graph<double> g;
  const auto out = g.flattenFrames(g.constant(x), F, H, W);
  REQUIRE(g.val(out).rows() == F);
  REQUIRE(g.val(out).cols() == H * W * C);
  for (int f = 0; f < F; ++f)
    for (int p = 0; p < H * W; ++p)
      for (int c = 0; c < C; ++c) CHECK(g.val(out)(f, p * C + c) == x(f * H * W + p, c));
  CHECK(opGradCheck(x, [&](Graph<double>& g2, auto xi) {
          return g2.flattenFrames(xi, F, H, W);
        }, 40) < 1e-6);
}

TEST_CASE("bce loss: value against a hand computation, gradient by fd") {
  Rng rng(41);
  Matd pred(2, 3);
  for (Eigen::Index i = 0; i < pred.size(); ++i) pred(i) = 0.1 + 0.8 * rng.uniform();
  Matd target(2, 3);
  for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = rng.below(2) ? 1.0 : 0.0;

  double want = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    want += -(target(i) * std::log(pred(i)) + (1 - target(i)) * std::log(1 - pred(i)));
  want /= pred.size();
  CHECK(bceLoss(pred, target) == doctest::Approx(want).epsilon(1e-12));

  CHECK(opGradCheck(pred, [&](Graph<double>& g, auto x) {
          return bceLossOp(g, x, target);
        }, 42) < 1e-6);
}

TEST_CASE("bce loss clamps extreme probabilities") {
  Matd pred(1, 2);
  pred << 0.0, 1.0;
  Matd target(1, 2);
  target << 1.0, 0.0;
  const double loss = bceLoss(pred, target);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
}

TEST_CASE("backward accumulates into parameters through shared leaves") {
  // reusing one parameter twice must sum both contributions
  Parameter<double> p;
  p.name = "w";
  p.value = Matd::Ones(1, 1) * 3.0;
  p.zeroGrad();
  Graph<double> g;
  const auto x = g.leaf(p);
  const auto y = g.leaf(p);
  const auto out = g.add(g.scale(x, 2.0), g.cwiseMul(y, y));  // 2w + w^2, d/dw = 2 + 2w = 8
  g.backward(out);
  CHECK(p.grad(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("kink tracking reports relu and pool margins") {
  Matd x(1 * 2 * 2, 1);
  x << 0.5, -0.2, 0.9, 0.7;
  Graph<double> g(/*track_kinks=*/true);
  auto r = g.relu(g.constant(x));
  g.maxPool2x2(r, 1, 2, 2);
  CHECK(g.kinks().relu == doctest::Approx(0.2));
  CHECK(g.kinks().pool_gap == doctest::Approx(0.2));  // relu output 0.9 vs 0.7
}
