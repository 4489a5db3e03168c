#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mvw/ablate.hpp"
#include "mvw/adam.hpp"
#include "mvw/losses.hpp"
#include "mvw/oracles.hpp"
#include "mvw/rng.hpp"
#include "mvw/synth.hpp"
#include "mvw/train.hpp"

using namespace mvw;
namespace fs = std::filesystem;

namespace {

// one shared micro corpus for the training tests
const fs::path kCorpusDir = fs::temp_directory_path() / "mvweak_test_train_corpus";

ScenarioConfig microScenario() {
  ScenarioConfig cfg;
  cfg.num_views = 2;
  cfg.num_frames = 8;
  cfg.image_size = 16;
  cfg.num_classes = 2;
  cfg.events_min = 1;
  cfg.events_max = 2;
  cfg.noise = 0.02;
  return cfg;
}

ModelConfig microModel() {
  ModelConfig cfg;
  cfg.num_views = 2;
  cfg.num_frames = 8;
  cfg.image_size = 16;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.sl_width = 4;
  cfg.bag_classes = 2;
  cfg.conv_filters = {3, 4, 4};
  cfg.ffn_hidden = 12;
  cfg.bag_hidden = 12;
  return cfg;
}

const Corpus& microCorpus() {
  static const Corpus corpus = [] {
    fs::remove_all(kCorpusDir);
    buildCorpus(microScenario(), 8, 2024, kCorpusDir);
    DatasetIndex index = loadIndex(kCorpusDir);
    index = splitDataset(index, 0.5, 1);
    saveIndex(kCorpusDir, index);
    featurizeCorpus(kCorpusDir, "detections.jsonl", 2, 2);
    return Corpus::load(kCorpusDir, true);
  }();
  return corpus;
}

TrainConfig microTrain(int epochs, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("adam: lr -> 0 leaves parameters unchanged") {
  ParamStore<double> store;
  Parameter<double>& p = store.create("w", 2, 2);
  p.value << 1.0, 2.0, 3.0, 4.0;
  const Matd before = p.value;
  p.grad.setConstant(0.5);
  Adam<double> adam(0.0, 0.5, 0.99);
  adam.step(store);
  CHECK(p.value == before);
}

TEST_CASE("adam: one step moves against the gradient with bias correction") {
  ParamStore<double> store;
  Parameter<double>& p = store.create("w", 1, 1);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 2.0;
  Adam<double> adam(0.1, 0.5, 0.99);
  adam.step(store);
  // first step: mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~ lr
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("downstream targets: detection is the per-frame OR across classes") {
  Mati labels(3, 2);
  labels << 1, 0, 0, 0, 1, 1;
  const Matd det = downstreamTargets(labels, Task::detection);
  CHECK(det.rows() == 3);
  CHECK(det.cols() == 1);
  CHECK(det(0, 0) == 1.0);
  CHECK(det(1, 0) == 0.0);
  CHECK(det(2, 0) == 1.0);
  const Matd rec = downstreamTargets(labels, Task::recognition);
  CHECK(rec == labels.cast<double>());
}

TEST_CASE("base total loss: composition and lambda scaling") {
  const ModelConfig cfg = microModel();
  BaseModel<double> model(cfg, 5);
  const Corpus& corpus = microCorpus();
  std::vector<BaseOutputs<double>> outputs;
  Mati bags(3, 2);
  for (int i = 0; i < 3; ++i) {
    outputs.push_back(model.forwardValues(corpus.train[i % corpus.train.size()].input));
    bags.row(i) = corpus.train[i % corpus.train.size()].bag.transpose();
  }
  TripletParams triplet;

  const BaseLossParts l0 = baseTotalLoss(outputs, bags, triplet, 0.0);
  const BaseLossParts l1 = baseTotalLoss(outputs, bags, triplet, 1.0);
  const BaseLossParts lh = baseTotalLoss(outputs, bags, triplet, 0.5);

  // lambda = 0 leaves BCE alone
  CHECK(l0.total == doctest::Approx(l0.bce).epsilon(1e-15));
  for (double v : l0.latent_per_view) CHECK(v == 0.0);

  // hand recomposition: total = bce + sum of per-view terms
  double sum1 = l1.bce;
  for (double v : l1.latent_per_view) sum1 += v;
  CHECK(l1.total == doctest::Approx(sum1).epsilon(1e-12));

  // exact lambda scaling on the parts: L(l) - L(0) = l * (L(1) - L(0))
  CHECK(lh.total - l0.total ==
        doctest::Approx(0.5 * (l1.total - l0.total)).epsilon(1e-12));

  // independent recomposition of the BCE term
  Matd pred(3, 2);
  for (int i = 0; i < 3; ++i) pred.row(i) = outputs[i].bag_pred.row(0);
  CHECK(l1.bce == doctest::Approx(bceLoss(pred, Matd(bags.cast<double>()))).epsilon(1e-14));

  // independent recomposition of each latent term
  for (std::size_t s = 0; s < outputs[0].rho.size(); ++s) {
    std::vector<Matd> batch;
    for (const auto& out : outputs) batch.push_back(out.rho[s]);
    CHECK(l1.latent_per_view[s] ==
          doctest::Approx(weakLabelLatentLoss(batch, bags, triplet)).epsilon(1e-12));
  }
}

TEST_CASE("train base: loss decreases, history is deterministic") {
  const Corpus& corpus = microCorpus();
  const ModelConfig cfg = microModel();

  const BaseTrainResult a = trainBase(corpus, cfg, microTrain(8, 77));
  REQUIRE(a.history.epochs.size() == 8);
  CHECK(a.history.epochs.back().total < a.history.epochs.front().total);

  const BaseTrainResult b = trainBase(corpus, cfg, microTrain(8, 77));
  for (std::size_t e = 0; e < 8; ++e) {
    CHECK(a.history.epochs[e].total == b.history.epochs[e].total);
    CHECK(a.history.epochs[e].bce == b.history.epochs[e].bce);
    CHECK(a.history.epochs[e].latent_per_view == b.history.epochs[e].latent_per_view);
  }

  // model parameters are bit-identical too
  CHECK(a.model->params().flattenValues() == b.model->params().flattenValues());
}

TEST_CASE("train base: camera table rows stay distinct after updates") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult r = trainBase(corpus, microModel(), microTrain(2, 13));
  const Matd cam = r.model->params().at("emb.cam").value;
  CHECK((cam.row(0) - cam.row(1)).norm() > 0.0);
}

TEST_CASE("train base: lambda 0 records all-zero latent history") {
  const Corpus& corpus = microCorpus();
  TrainConfig tc = microTrain(2, 3);
  tc.lambda_latent = 0.0;
  const BaseTrainResult r = trainBase(corpus, microModel(), tc);
  for (const EpochRecord& e : r.history.epochs)
    for (double v : e.latent_per_view) CHECK(v == 0.0);
}

TEST_CASE("history jsonl format") {
  TrainHistory h;
  h.epochs.push_back({0, 1.5, 1.0, {0.25, 0.25}});
  h.epochs.push_back({1, 1.0, 0.75, {0.125, 0.125}});
  const fs::path path = fs::temp_directory_path() / "mvweak_history_test.jsonl";
  h.writeJsonl(path);
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"epoch\"") != std::string::npos);
    CHECK(line.find("\"total\"") != std::string::npos);
    CHECK(line.find("\"bce\"") != std::string::npos);
    CHECK(line.find("\"latent_per_view\"") != std::string::npos);
    ++n;
  }
  CHECK(n == 2);
}

TEST_CASE("checkpoint: bit-exact reload and re-save") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult r = trainBase(corpus, microModel(), microTrain(2, 11));
  const fs::path dir = fs::temp_directory_path() / "mvweak_test_ckpt";
  fs::remove_all(dir);
  saveBaseCheckpoint(dir / "a", *r.model);

  const auto reloaded = loadBaseCheckpoint(dir / "a");
  saveBaseCheckpoint(dir / "b", *reloaded);

  // byte-compare every parameter file
  for (std::size_t i = 0; i < r.model->params().size(); ++i) {
    const std::string name = r.model->params()[i].name;
    std::string file = name;
    for (char& c : file)
      if (c == '.' || c == '/') c = '_';
    std::ifstream fa(dir / "a" / (file + ".mvt"), std::ios::binary);
    std::ifstream fb(dir / "b" / (file + ".mvt"), std::ios::binary);
    REQUIRE(fa);
    REQUIRE(fb);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
  }
}

TEST_CASE("checkpoint: kind mismatch is rejected") {
  const fs::path dir = fs::temp_directory_path() / "mvweak_test_ckpt2";
  fs::remove_all(dir);
  const Corpus& corpus = microCorpus();
  const BaseTrainResult r = trainBase(corpus, microModel(), microTrain(1, 1));
  saveBaseCheckpoint(dir, *r.model);
  CHECK_THROWS_AS(loadDownstreamCheckpoint(dir), ConfigError);
}

TEST_CASE("extract embeddings: unit norms, determinism, store round trip") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult r = trainBase(corpus, microModel(), microTrain(2, 21));
  const fs::path dir = fs::temp_directory_path() / "mvweak_test_embed";
  fs::remove_all(dir);
  extractEmbeddings(*r.model, corpus, dir);
  CHECK(fs::exists(dir / "embeddings.json"));

  const EmbeddingStore store = EmbeddingStore::load(dir);
  CHECK(store.latent_views == 2);
  CHECK(store.d == 8);
  CHECK(store.by_sequence.size() == 8);
  for (const auto& [id, views] : store.by_sequence)
    for (const Matd& rho : views)
      for (int t = 0; t < rho.rows(); ++t)
        CHECK(std::abs(rho.row(t).norm() - 1.0) < 1e-5);

  // re-extraction writes identical bytes
  const fs::path dir2 = fs::temp_directory_path() / "mvweak_test_embed2";
  fs::remove_all(dir2);
  extractEmbeddings(*r.model, corpus, dir2);
  const std::string id = corpus.train[0].id;
  std::ifstream fa(dir / (id + ".mvt"), std::ios::binary);
  std::ifstream fb(dir2 / (id + ".mvt"), std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  CHECK(!ba.empty());

  CHECK_THROWS_AS(store.at("nonexistent"), DataError);
}

TEST_CASE("train downstream: loss decreases for both tasks; latents required when enabled") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult base = trainBase(corpus, microModel(), microTrain(3, 31));
  const fs::path dir = fs::temp_directory_path() / "mvweak_test_embed3";
  fs::remove_all(dir);
  extractEmbeddings(*base.model, corpus, dir);
  const EmbeddingStore store = EmbeddingStore::load(dir);

  DownstreamConfig cfg;
  cfg.base = microModel();
  cfg.head_hidden1 = 12;
  cfg.head_hidden2 = 8;

  for (Task task : {Task::detection, Task::recognition}) {
    cfg.c_task = task == Task::detection ? 1 : 2;
    const DownstreamTrainResult r = trainDownstream(corpus, &store, cfg, microTrain(8, 41), task);
    CHECK(r.history.epochs.back().total < r.history.epochs.front().total);
    const MetricsReport report = evaluateDownstream(*r.model, corpus, &store, task);
    CHECK(report.accuracy >= 0.0);
    CHECK(report.accuracy <= 1.0);
  }

  cfg.c_task = 1;
  CHECK_THROWS_AS(trainDownstream(corpus, nullptr, cfg, microTrain(1, 1), Task::detection),
                  DataError);
}

TEST_CASE("train downstream: weight transfer flag starts from base weights") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult base = trainBase(corpus, microModel(), microTrain(2, 51));
  DownstreamConfig cfg;
  cfg.base = microModel();
  cfg.head_hidden1 = 12;
  cfg.head_hidden2 = 8;
  cfg.c_task = 1;
  cfg.use_latents = false;
  cfg.init_from_base = true;
  CHECK_THROWS_AS(trainDownstream(corpus, nullptr, cfg, microTrain(1, 61), Task::detection),
                  ConfigError);
  const DownstreamTrainResult r =
      trainDownstream(corpus, nullptr, cfg, microTrain(1, 61), Task::detection, base.model.get());
  CHECK(r.history.epochs.size() == 1);
}

TEST_CASE("evaluate frames: exact and inverted predictions") {
  Matd scores(4, 2);
  Mati labels(4, 2);
  Rng rng(71);
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels(i) = rng.below(2) ? 1 : 0;
  // make sure both classes have at least one positive
  labels(0, 0) = 1;
  labels(1, 1) = 1;
  for (Eigen::Index i = 0; i < labels.size(); ++i) scores(i) = labels(i);
  MetricsReport perfect = evaluateFrames(scores, labels, "test");
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.map == doctest::Approx(1.0));
  CHECK(perfect.macro_f1 == doctest::Approx(1.0));

  MetricsReport inverted = evaluateFrames(Matd(1.0 - scores.array()), labels, "test");
  CHECK(inverted.accuracy == 0.0);
}

TEST_CASE("evaluate frames: absent class is excluded from mAP and flagged") {
  Matd scores(4, 2);
  scores.setConstant(0.3);
  scores(0, 0) = 0.9;
  Mati labels = Mati::Zero(4, 2);
  labels(0, 0) = 1;  // class 1 has no positives
  const MetricsReport r = evaluateFrames(scores, labels, "test");
  REQUIRE(r.undefined_ap_classes.size() == 1);
  CHECK(r.undefined_ap_classes[0] == 1);
  REQUIRE(r.per_class.size() == 2);
  CHECK(r.per_class[0].ap.has_value());
  CHECK_FALSE(r.per_class[1].ap.has_value());
  CHECK(r.map == doctest::Approx(*r.per_class[0].ap));
}

TEST_CASE("evaluate frames: AP matches the quadratic PR oracle on random cases") {
  Rng rng(81);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = rng.rangeInt(5, 60);
    Vecd scores(n);
    Veci labels(n);
    for (int i = 0; i < n; ++i) {
      scores(i) = rng.below(3) ? rng.uniform() : std::round(rng.uniform() * 4.0) / 4.0;
      labels(i) = rng.below(2) ? 1 : 0;
    }
    const auto got = averagePrecision(scores, labels);
    const double want = bruteForceAveragePrecision(scores, labels);
    if (want < 0.0) {
      CHECK_FALSE(got.has_value());
    } else {
      REQUIRE(got.has_value());
      CHECK(std::abs(*got - want) <= 1e-9);
    }
  }
}

TEST_CASE("evaluate frames: 20x3 random case against the oracle") {
  Rng rng(91);
  Matd scores(20, 3);
  Mati labels(20, 3);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    scores(i) = rng.uniform();
    labels(i) = rng.below(2) ? 1 : 0;
  }
  const MetricsReport r = evaluateFrames(scores, labels, "test");
  double map_sum = 0.0;
  int map_n = 0;
  for (int c = 0; c < 3; ++c) {
    const double want = bruteForceAveragePrecision(scores.col(c), labels.col(c));
    if (want >= 0.0) {
      map_sum += want;
      ++map_n;
      CHECK(std::abs(*r.per_class[c].ap - want) <= 1e-9);
    }
  }
  CHECK(r.map == doctest::Approx(map_sum / map_n).epsilon(1e-12));
}

TEST_CASE("bag evaluation produces a report over sequences") {
  const Corpus& corpus = microCorpus();
  const BaseTrainResult base = trainBase(corpus, microModel(), microTrain(5, 71));
  const MetricsReport r = evaluateBags(*base.model, corpus);
  CHECK(r.task == "bags");
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
}

TEST_CASE("ablation matrix: 5 rows, 2 task columns, reproducible") {
  const Corpus& corpus = microCorpus();
  ModelConfig base_cfg = microModel();
  DownstreamConfig ds_cfg;
  ds_cfg.base = base_cfg;
  ds_cfg.head_hidden1 = 12;
  ds_cfg.head_hidden2 = 8;

  TrainConfig tc = microTrain(2, 0);
  const AblationTable table =
      runAblationMatrix(corpus, base_cfg, ds_cfg, tc, tc, {1, 2, 3});
  REQUIRE(table.rows.size() == 5);
  CHECK(table.rows[0].variant.name == "Proposed");
  CHECK((table.rows[4].variant.latent_mode == LatentMode::single));
  CHECK((table.rows[4].variant.ptb_op == PtbOp::mean));
  CHECK(table.rows[1].variant.use_sl == false);

  const std::string csv = table.toCsv();
  CHECK(csv.find("Algo.,SL,PD,PTB opera.,Latent Space,Action Det.,Action Recog.") == 0);
  // 5 data rows + header
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 6);

  const AblationTable again =
      runAblationMatrix(corpus, base_cfg, ds_cfg, tc, tc, {1, 2, 3});
  CHECK(again.toCsv() == csv);
}

TEST_CASE("median helper") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median({5.0}) == 5.0);
}
