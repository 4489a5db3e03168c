#include "mvw/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mvw/adam.hpp"
#include "mvw/losses.hpp"
#include "mvw/mvt.hpp"
#include "mvw/rng.hpp"

namespace mvw {

using nlohmann::json;

void TrainHistory::writeJsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const EpochRecord& e : epochs) {
    json j;
    j["epoch"] = e.epoch;
    j["total"] = e.total;
    j["bce"] = e.bce;
    j["latent_per_view"] = e.latent_per_view;
    out << j.dump() << "\n";
  }
}

Matd downstreamTargets(const Mati& frame_labels, Task task) {
  if (frame_labels.size() == 0) throw DataError("downstreamTargets: sequence has no frame labels");
  if (task == Task::recognition) return frame_labels.cast<double>();
  Matd t(frame_labels.rows(), 1);
  for (Eigen::Index r = 0; r < frame_labels.rows(); ++r)
    t(r, 0) = frame_labels.row(r).maxCoeff() > 0 ? 1.0 : 0.0;
  return t;
}

BaseLossParts baseTotalLoss(const std::vector<BaseOutputs<double>>& outputs, const Mati& bags,
                            const TripletParams& triplet, double lambda_latent) {
  if (outputs.empty()) throw DataError("baseTotalLoss: empty batch");
  const int k = static_cast<int>(outputs.size());
  if (bags.rows() != k) throw DataError("baseTotalLoss: bags rows must equal batch size");

  Matd pred(k, outputs[0].bag_pred.cols());
  for (int i = 0; i < k; ++i) pred.row(i) = outputs[i].bag_pred.row(0);
  BaseLossParts parts;
  parts.bce = bceLoss(pred, Matd(bags.cast<double>()));
  parts.total = parts.bce;

  const std::size_t latent_heads = outputs[0].rho.size();
  for (std::size_t s = 0; s < latent_heads; ++s) {
    double term = 0.0;
    if (lambda_latent != 0.0) {
      std::vector<Matd> batch;
      batch.reserve(k);
      for (int i = 0; i < k; ++i) batch.push_back(outputs[i].rho[s]);
      term = lambda_latent * weakLabelLatentLoss(batch, bags, triplet);
    }
    parts.latent_per_view.push_back(term);
    parts.total += term;
  }
  return parts;
}

namespace {

// Seed-fixed epoch order; a trailing chunk smaller than 2 is folded into the
// previous batch so every step satisfies K >= 2.
std::vector<std::vector<int>> makeBatches(int n, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0xB000 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int i = 0; i < n; i += batch_size) {
    const int end = std::min(n, i + batch_size);
    batches.push_back(std::vector<int>(order.begin() + i, order.begin() + end));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].insert(batches[batches.size() - 2].end(), batches.back().begin(),
                                       batches.back().end());
    batches.pop_back();
  }
  return batches;
}

Mati stackBags(const Corpus& corpus, const std::vector<int>& batch) {
  Mati bags(batch.size(), corpus.num_classes);
  for (std::size_t i = 0; i < batch.size(); ++i) bags.row(i) = corpus.train[batch[i]].bag.transpose();
  return bags;
}

}  // namespace

BaseTrainResult trainBase(const Corpus& corpus, const ModelConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  if (corpus.train.size() < 2) throw DataError("trainBase: need at least 2 training sequences");
  if (cfg.use_sl && corpus.sl_width != cfg.sl_width)
    throw ConfigError("trainBase: corpus SL width " + std::to_string(corpus.sl_width) +
                      " does not match model N = " + std::to_string(cfg.sl_width));

  BaseTrainResult result;
  result.model = std::make_unique<BaseModel<double>>(cfg, tc.seed);
  BaseModel<double>& model = *result.model;
  Adam<double> adam(tc.lr, tc.beta1, tc.beta2);
  TripletParams triplet;

  const int latent_heads = cfg.latent_mode == LatentMode::per_view ? cfg.num_views : 1;
  const int n = static_cast<int>(corpus.train.size());

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.latent_per_view.assign(latent_heads, 0.0);
    const auto batches = makeBatches(n, tc.batch_size, tc.seed, epoch);

    for (std::size_t step = 0; step < batches.size(); ++step) {
      const std::vector<int>& batch = batches[step];
      const Mati bags = stackBags(corpus, batch);

      Graph<double> g;
      std::vector<Graph<double>::Index> bag_preds;
      std::vector<std::vector<Graph<double>::Index>> rho_nodes(latent_heads);
      for (int idx : batch) {
        const BaseForwardNodes<double> nodes = model.forward(g, corpus.train[idx].input);
        bag_preds.push_back(nodes.bag_pred);
        for (int s = 0; s < latent_heads; ++s) rho_nodes[s].push_back(nodes.rho[s]);
      }
      Graph<double>::Index pred = g.concatRows(bag_preds);
      Graph<double>::Index total = bceLossOp(g, pred, Matd(bags.cast<double>()));
      const double bce_value = g.val(total)(0, 0);

      std::vector<double> latent_values(latent_heads, 0.0);
      if (tc.lambda_latent != 0.0) {
        for (int s = 0; s < latent_heads; ++s) {
          Graph<double>::Index lat = weakLabelLatentLossOp(g, rho_nodes[s], bags, triplet);
          latent_values[s] = tc.lambda_latent * g.val(lat)(0, 0);
          total = g.add(total, g.scale(lat, tc.lambda_latent));
        }
      }

      const double total_value = g.val(total)(0, 0);
      if (!std::isfinite(total_value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));

      model.params().zeroGrads();
      g.backward(total);
      adam.step(model.params());

      rec.total += total_value;
      rec.bce += bce_value;
      for (int s = 0; s < latent_heads; ++s) rec.latent_per_view[s] += latent_values[s];
    }

    const double inv_steps = 1.0 / static_cast<double>(batches.size());
    rec.total *= inv_steps;
    rec.bce *= inv_steps;
    for (double& v : rec.latent_per_view) v *= inv_steps;
    result.history.epochs.push_back(std::move(rec));
  }
  return result;
}

namespace {

json modelConfigToJson(const ModelConfig& cfg) {
  json j;
  j["num_views"] = cfg.num_views;
  j["num_frames"] = cfg.num_frames;
  j["image_size"] = cfg.image_size;
  j["sl_width"] = cfg.sl_width;
  j["bag_classes"] = cfg.bag_classes;
  j["d"] = cfg.d;
  j["heads"] = cfg.heads;
  j["conv_filters"] = cfg.conv_filters;
  j["ffn_hidden"] = cfg.ffn_hidden;
  j["bag_hidden"] = cfg.bag_hidden;
  j["ptb_op"] = toString(cfg.ptb_op);
  j["use_sl"] = cfg.use_sl;
  j["use_pd"] = cfg.use_pd;
  j["latent_mode"] = toString(cfg.latent_mode);
  j["layer_norm"] = cfg.layer_norm;
  return j;
}

ModelConfig modelConfigFromJson(const json& j) {
  ModelConfig cfg;
  cfg.num_views = j.at("num_views").get<int>();
  cfg.num_frames = j.at("num_frames").get<int>();
  cfg.image_size = j.at("image_size").get<int>();
  cfg.sl_width = j.at("sl_width").get<int>();
  cfg.bag_classes = j.at("bag_classes").get<int>();
  cfg.d = j.at("d").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.conv_filters = j.at("conv_filters").get<std::vector<int>>();
  cfg.ffn_hidden = j.at("ffn_hidden").get<int>();
  cfg.bag_hidden = j.at("bag_hidden").get<int>();
  cfg.ptb_op = ptbOpFromString(j.at("ptb_op").get<std::string>());
  cfg.use_sl = j.at("use_sl").get<bool>();
  cfg.use_pd = j.at("use_pd").get<bool>();
  cfg.latent_mode = latentModeFromString(j.at("latent_mode").get<std::string>());
  cfg.layer_norm = j.at("layer_norm").get<bool>();
  return cfg;
}

}  // namespace

void saveBaseCheckpoint(const std::filesystem::path& dir, const BaseModel<double>& model) {
  json meta;
  meta["kind"] = "base";
  meta["model"] = modelConfigToJson(model.config());
  model.params().saveCheckpoint(dir, meta);
}

std::unique_ptr<BaseModel<double>> loadBaseCheckpoint(const std::filesystem::path& dir) {
  // peek the manifest for the config, then rebuild and load values
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  in >> manifest;
  const json& meta = manifest.at("meta");
  if (meta.value("kind", "") != "base")
    throw ConfigError("checkpoint at " + dir.string() + " is not a base model");
  auto model = std::make_unique<BaseModel<double>>(modelConfigFromJson(meta.at("model")), 0);
  model->params().loadCheckpoint(dir);
  return model;
}

void extractEmbeddings(const BaseModel<double>& model, const Corpus& corpus,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const ModelConfig& cfg = model.config();
  if (corpus.num_frames != cfg.num_frames || corpus.image_size != cfg.image_size ||
      corpus.num_views != cfg.num_views)
    throw ConfigError("extractEmbeddings: corpus geometry does not match the checkpoint");

  json manifest;
  manifest["d"] = cfg.d;
  manifest["latent_views"] = cfg.latent_mode == LatentMode::per_view ? cfg.num_views : 1;
  manifest["sequences"] = json::array();

  auto emit = [&](const LoadedSequence& seq) {
    const BaseOutputs<double> out = model.forwardValues(seq.input);
    const int views = static_cast<int>(out.rho.size());
    TensorData t({static_cast<std::uint32_t>(views), static_cast<std::uint32_t>(cfg.num_frames),
                  static_cast<std::uint32_t>(cfg.d)});
    for (int s = 0; s < views; ++s)
      for (int fr = 0; fr < cfg.num_frames; ++fr)
        for (int c = 0; c < cfg.d; ++c)
          t.at({static_cast<std::size_t>(s), static_cast<std::size_t>(fr),
                static_cast<std::size_t>(c)}) = static_cast<float>(out.rho[s](fr, c));
    const std::string file = seq.id + ".mvt";
    writeTensor(out_dir / file, t);
    manifest["sequences"].push_back({{"sequence_id", seq.id}, {"file", file}});
  };
  for (const LoadedSequence& seq : corpus.train) emit(seq);
  for (const LoadedSequence& seq : corpus.test) emit(seq);

  std::ofstream out(out_dir / "embeddings.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (out_dir / "embeddings.json").string());
  out << manifest.dump(2) << "\n";
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "embeddings.json");
  if (!in) throw DataError("cannot open " + (dir / "embeddings.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError((dir / "embeddings.json").string() + ": " + e.what());
  }
  EmbeddingStore store;
  store.d = manifest.at("d").get<int>();
  store.latent_views = manifest.at("latent_views").get<int>();
  for (const auto& e : manifest.at("sequences")) {
    const std::string id = e.at("sequence_id").get<std::string>();
    const TensorData t = readTensor(dir / e.at("file").get<std::string>());
    if (t.rank() != 3 || static_cast<int>(t.dims[0]) != store.latent_views ||
        static_cast<int>(t.dims[2]) != store.d)
      throw DataError("embedding tensor shape mismatch for sequence '" + id + "'");
    std::vector<Matd> views;
    for (std::uint32_t s = 0; s < t.dims[0]; ++s) {
      Matd m(t.dims[1], t.dims[2]);
      for (std::uint32_t fr = 0; fr < t.dims[1]; ++fr)
        for (std::uint32_t c = 0; c < t.dims[2]; ++c)
          m(fr, c) = t.at({s, fr, c});
      views.push_back(std::move(m));
    }
    store.by_sequence[id] = std::move(views);
  }
  return store;
}

const std::vector<Matd>& EmbeddingStore::at(const std::string& id) const {
  auto it = by_sequence.find(id);
  if (it == by_sequence.end())
    throw DataError("embedding store has no entry for sequence '" + id + "'");
  return it->second;
}

DownstreamTrainResult trainDownstream(const Corpus& corpus, const EmbeddingStore* store,
                                      const DownstreamConfig& cfg, const TrainConfig& tc,
                                      Task task, const BaseModel<double>* transfer_from) {
  cfg.validate();
  tc.validate();
  if (cfg.use_latents && !store)
    throw DataError("trainDownstream: use_latents is set but no embedding store was given");
  if (corpus.train.empty()) throw DataError("trainDownstream: empty training split");
  for (const LoadedSequence& seq : corpus.train)
    if (seq.frame_labels.size() == 0)
      throw DataError("trainDownstream: sequence '" + seq.id + "' lacks frame labels");

  DownstreamTrainResult result;
  result.model = std::make_unique<DownstreamModel<double>>(cfg, tc.seed);
  if (cfg.init_from_base) {
    if (!transfer_from) throw ConfigError("trainDownstream: init_from_base needs a base model");
    result.model->params().copyMatchingFrom(transfer_from->params());
  }
  DownstreamModel<double>& model = *result.model;
  Adam<double> adam(tc.lr, tc.beta1, tc.beta2);

  const int n = static_cast<int>(corpus.train.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = makeBatches(n, tc.batch_size, tc.seed, epoch);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      Graph<double> g;
      std::vector<Graph<double>::Index> scores;
      std::vector<Matd> targets;
      for (int idx : batches[step]) {
        const LoadedSequence& seq = corpus.train[idx];
        const std::vector<Matd>* rho = cfg.use_latents ? &store->at(seq.id) : nullptr;
        scores.push_back(model.forward(g, seq.input, rho));
        targets.push_back(downstreamTargets(seq.frame_labels, task));
      }
      Matd target(targets.size() * corpus.num_frames, targets[0].cols());
      for (std::size_t i = 0; i < targets.size(); ++i)
        target.middleRows(i * corpus.num_frames, corpus.num_frames) = targets[i];
      Graph<double>::Index loss = bceLossOp(g, g.concatRows(scores), target);

      const double loss_value = g.val(loss)(0, 0);
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      model.params().zeroGrads();
      g.backward(loss);
      adam.step(model.params());
      rec.total += loss_value;
      rec.bce += loss_value;
    }
    rec.total /= static_cast<double>(batches.size());
    rec.bce /= static_cast<double>(batches.size());
    result.history.epochs.push_back(std::move(rec));
  }
  return result;
}

void saveDownstreamCheckpoint(const std::filesystem::path& dir,
                              const DownstreamModel<double>& model, Task task) {
  json meta;
  meta["kind"] = "downstream";
  meta["task"] = toString(task);
  meta["model"] = modelConfigToJson(model.config().base);
  meta["head_hidden1"] = model.config().head_hidden1;
  meta["head_hidden2"] = model.config().head_hidden2;
  meta["c_task"] = model.config().c_task;
  meta["use_latents"] = model.config().use_latents;
  model.params().saveCheckpoint(dir, meta);
}

std::pair<std::unique_ptr<DownstreamModel<double>>, Task> loadDownstreamCheckpoint(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  in >> manifest;
  const json& meta = manifest.at("meta");
  if (meta.value("kind", "") != "downstream")
    throw ConfigError("checkpoint at " + dir.string() + " is not a downstream model");
  DownstreamConfig cfg;
  cfg.base = modelConfigFromJson(meta.at("model"));
  cfg.head_hidden1 = meta.at("head_hidden1").get<int>();
  cfg.head_hidden2 = meta.at("head_hidden2").get<int>();
  cfg.c_task = meta.at("c_task").get<int>();
  cfg.use_latents = meta.at("use_latents").get<bool>();
  auto model = std::make_unique<DownstreamModel<double>>(cfg, 0);
  model->params().loadCheckpoint(dir);
  return {std::move(model), taskFromString(meta.at("task").get<std::string>())};
}

MetricsReport evaluateDownstream(const DownstreamModel<double>& model, const Corpus& corpus,
                                 const EmbeddingStore* store, Task task, bool on_test) {
  const auto& split = on_test ? corpus.test : corpus.train;
  if (split.empty()) throw DataError("evaluateDownstream: empty split");
  if (model.config().use_latents && !store)
    throw DataError("evaluateDownstream: latents required but no store given");
  const int c_task = model.config().c_task;
  Matd scores(split.size() * corpus.num_frames, c_task);
  Mati labels(split.size() * corpus.num_frames, c_task);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const LoadedSequence& seq = split[i];
    const std::vector<Matd>* rho = model.config().use_latents ? &store->at(seq.id) : nullptr;
    scores.middleRows(i * corpus.num_frames, corpus.num_frames) =
        model.forwardValues(seq.input, rho);
    labels.middleRows(i * corpus.num_frames, corpus.num_frames) =
        downstreamTargets(seq.frame_labels, task).cast<int>();
  }
  return evaluateFrames(scores, labels, toString(task));
}

MetricsReport evaluateBags(const BaseModel<double>& model, const Corpus& corpus, bool on_test) {
  const auto& split = on_test ? corpus.test : corpus.train;
  if (split.empty()) throw DataError("evaluateBags: empty split");
  Matd scores(split.size(), corpus.num_classes);
  Mati labels(split.size(), corpus.num_classes);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const BaseOutputs<double> out = model.forwardValues(split[i].input);
    scores.row(i) = out.bag_pred.row(0);
    labels.row(i) = split[i].bag.transpose();
  }
  return evaluateFrames(scores, labels, "bags");
}

}  // namespace mvw
