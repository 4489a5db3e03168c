#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvw/downstream.hpp"
#include "mvw/gradcheck.hpp"
#include "mvw/rng.hpp"

using namespace mvw;

namespace {

DownstreamConfig scaledConfig(int c_task) {
  DownstreamConfig cfg;
  cfg.base.num_views = 2;
  cfg.base.num_frames = 8;
  cfg.base.image_size = 16;
  cfg.base.d = 16;
  cfg.base.heads = 4;
  cfg.base.sl_width = 4;
  cfg.base.bag_classes = 3;
  cfg.base.conv_filters = {4, 8, 8};
  cfg.base.ffn_hidden = 24;
  cfg.base.bag_hidden = 32;
  cfg.head_hidden1 = 32;
  cfg.head_hidden2 = 16;
  cfg.c_task = c_task;
  return cfg;
}

Matd randomMat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.gaussian();
  return m;
}

std::vector<Matd> randomRho(int views, int t, int d, Rng& rng) {
  std::vector<Matd> rho;
  for (int s = 0; s < views; ++s) {
    Matd m = randomMat(t, d, rng);
    for (int r = 0; r < t; ++r) m.row(r) /= m.row(r).norm();
    rho.push_back(std::move(m));
  }
  return rho;
}

}  // namespace

TEST_CASE("lem: identical views reduce to that view before projection") {
  const DownstreamConfig cfg = scaledConfig(1);
  DownstreamModel<double> model(cfg, 1);
  model.params().at("lem.w").value = Matd::Identity(16, 16);
  model.params().at("lem.b").value.setZero();
  Rng rng(2);
  const Matd r = randomMat(8, 16, rng);
  Graph<double> g;
  const auto out = model.lem(g, {r, r});
  CHECK((g.val(out) - r).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lem: mean across the view axis, then projection") {
  const DownstreamConfig cfg = scaledConfig(1);
  DownstreamModel<double> model(cfg, 3);
  Rng rng(4);
  const auto rho = randomRho(2, 8, 16, rng);
  Graph<double> g;
  const auto out = model.lem(g, rho);
  const Matd mean = 0.5 * (rho[0] + rho[1]);
  const Matd want = (mean * model.params().at("lem.w").value).rowwise() +
                    model.params().at("lem.b").value.row(0);
  CHECK((g.val(out) - want).cwiseAbs().maxCoeff() < 1e-12);

  // basis rows: mean of (1,0,...) and (0,1,...) is (0.5, 0.5, 0, ...)
  Matd a = Matd::Zero(8, 16), b = Matd::Zero(8, 16);
  a(0, 0) = 1.0;
  b(0, 1) = 1.0;
  model.params().at("lem.w").value = Matd::Identity(16, 16);
  model.params().at("lem.b").value.setZero();
  Graph<double> g2;
  const auto basis = model.lem(g2, {a, b});
  CHECK(g2.val(basis)(0, 0) == 0.5);
  CHECK(g2.val(basis)(0, 1) == 0.5);
  CHECK(g2.val(basis)(0, 2) == 0.0);
}

TEST_CASE("lem: invariant under permutation of the view axis") {
  const DownstreamConfig cfg = scaledConfig(1);
  DownstreamModel<double> model(cfg, 5);
  Rng rng(6);
  auto rho = randomRho(3, 8, 16, rng);
  // a 3-view rho against a 2-view model is fine for lem (mean over any count)
  Graph<double> g;
  const auto out = model.lem(g, rho);
  std::vector<Matd> perm = {rho[2], rho[0], rho[1]};
  Graph<double> g2;
  const auto out2 = model.lem(g2, perm);
  CHECK((g.val(out) - g2.val(out2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("downstream forward: shapes and sigmoid range for both tasks") {
  Rng rng(7);
  for (int c_task : {1, 3}) {
    const DownstreamConfig cfg = scaledConfig(c_task);
    DownstreamModel<double> model(cfg, 8);
    const SeqInput<double> in = randomSeqInput(cfg.base, rng);
    const auto rho = randomRho(2, 8, 16, rng);
    const Matd scores = model.forwardValues(in, &rho);
    CHECK(scores.rows() == 8);
    CHECK(scores.cols() == c_task);
    CHECK(scores.minCoeff() > 0.0);
    CHECK(scores.maxCoeff() < 1.0);
  }
}

TEST_CASE("downstream forward: head width halves without latents") {
  DownstreamConfig cfg = scaledConfig(1);
  cfg.use_latents = false;
  DownstreamModel<double> model(cfg, 9);
  CHECK(model.params().at("head.fc1.w").value.rows() == 16);

  DownstreamConfig with = scaledConfig(1);
  DownstreamModel<double> model2(with, 9);
  CHECK(model2.params().at("head.fc1.w").value.rows() == 32);
}

TEST_CASE("downstream forward: without latents the output ignores rho entirely") {
  DownstreamConfig cfg = scaledConfig(1);
  cfg.use_latents = false;
  DownstreamModel<double> model(cfg, 10);
  Rng rng(11);
  const SeqInput<double> in = randomSeqInput(cfg.base, rng);
  const auto rho_a = randomRho(2, 8, 16, rng);
  const auto rho_b = randomRho(2, 8, 16, rng);
  const Matd a = model.forwardValues(in, &rho_a);
  const Matd b = model.forwardValues(in, &rho_b);
  const Matd c = model.forwardValues(in, nullptr);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("downstream forward: missing latents while required is an error") {
  const DownstreamConfig cfg = scaledConfig(1);
  DownstreamModel<double> model(cfg, 12);
  Rng rng(13);
  const SeqInput<double> in = randomSeqInput(cfg.base, rng);
  CHECK_THROWS_AS(model.forwardValues(in, nullptr), DataError);
}

TEST_CASE("downstream forward: latents do change the output when enabled") {
  const DownstreamConfig cfg = scaledConfig(1);
  DownstreamModel<double> model(cfg, 14);
  Rng rng(15);
  const SeqInput<double> in = randomSeqInput(cfg.base, rng);
  const auto rho_a = randomRho(2, 8, 16, rng);
  const auto rho_b = randomRho(2, 8, 16, rng);
  const Matd a = model.forwardValues(in, &rho_a);
  const Matd b = model.forwardValues(in, &rho_b);
  CHECK(a != b);
}

TEST_CASE("downstream gradient fidelity: sum-of-scores probe on a scaled config") {
  DownstreamConfig cfg;
  cfg.base.num_views = 2;
  cfg.base.num_frames = 2;
  cfg.base.image_size = 8;
  cfg.base.d = 8;
  cfg.base.heads = 2;
  cfg.base.sl_width = 4;
  cfg.base.bag_classes = 2;
  cfg.base.conv_filters = {2, 2, 2};
  cfg.base.ffn_hidden = 10;
  cfg.base.bag_hidden = 12;
  cfg.head_hidden1 = 10;
  cfg.head_hidden2 = 6;
  cfg.c_task = 2;

  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::uint64_t seed = Rng::mix(555, attempt);
    Rng rng(seed);
    DownstreamModel<double> model(cfg, seed);
    const SeqInput<double> in = randomSeqInput(cfg.base, rng);
    const auto rho = randomRho(2, 2, 8, rng);

    {
      Graph<double> probe(/*track_kinks=*/true);
      model.forward(probe, in, &rho);
      if (probe.kinks().minMargin() <= 5e-4) continue;
    }

    auto f = [&](const Vecd& theta) {
      model.params().assignValues(theta);
      Graph<double> g;
      return g.val(g.sumAll(model.forward(g, in, &rho)))(0, 0);
    };
    const Vecd point = model.params().flattenValues();
    model.params().zeroGrads();
    Graph<double> g;
    g.backward(g.sumAll(model.forward(g, in, &rho)));
    const Vecd analytic = model.params().flattenGrads();
    const Vecd fd = centralDifferences(f, point, 1e-4);
    CHECK(maxRelativeError(analytic, fd) <= 1e-3);
    return;
  }
  FAIL("no tie-free downstream draw found");
}

TEST_CASE("weight transfer copies the shared skeleton") {
  const DownstreamConfig cfg = scaledConfig(1);
  BaseModel<double> base(cfg.base, 99);
  DownstreamModel<double> ds(cfg, 100);
  CHECK(ds.params().at("enc.conv1.w").value != base.params().at("enc.conv1.w").value);
  const int copied = ds.params().copyMatchingFrom(base.params());
  CHECK(copied > 0);
  CHECK(ds.params().at("enc.conv1.w").value == base.params().at("enc.conv1.w").value);
  CHECK(ds.params().at("tr.1.wq").value == base.params().at("tr.1.wq").value);
  CHECK(ds.params().at("emb.frame").value == base.params().at("emb.frame").value);
}
