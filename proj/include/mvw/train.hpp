#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvw/base_model.hpp"
#include "mvw/corpus.hpp"
#include "mvw/downstream.hpp"
#include "mvw/metrics.hpp"
#include "mvw/triplet.hpp"

namespace mvw {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.99;
  int epochs = 100;
  int batch_size = 8;  // K, whole sequences per step
  double lambda_latent = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train: lr must be positive");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
      throw ConfigError("train: beta1/beta2 must lie in (0,1)");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  }
};

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double bce = 0.0;
  std::vector<double> latent_per_view;  // lambda-weighted contributions
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  void writeJsonl(const std::filesystem::path& path) const;
};

enum class Task { detection, recognition };

inline std::string toString(Task t) { return t == Task::detection ? "detection" : "recognition"; }
inline Task taskFromString(const std::string& s) {
  if (s == "detection") return Task::detection;
  if (s == "recognition") return Task::recognition;
  throw ConfigError("unknown task '" + s + "' (expected detection or recognition)");
}

/// Frame-level training targets: detection collapses the label matrix to a
/// per-frame any-action column; recognition uses it as is.
Matd downstreamTargets(const Mati& frame_labels, Task task);

struct BaseLossParts {
  double total = 0.0;
  double bce = 0.0;
  std::vector<double> latent_per_view;  // lambda-weighted
};

/// Value-level loss recomposition for a batch of base outputs.
BaseLossParts baseTotalLoss(const std::vector<BaseOutputs<double>>& outputs, const Mati& bags,
                            const TripletParams& triplet, double lambda_latent);

struct BaseTrainResult {
  std::unique_ptr<BaseModel<double>> model;
  TrainHistory history;
};

BaseTrainResult trainBase(const Corpus& corpus, const ModelConfig& cfg, const TrainConfig& tc);

void saveBaseCheckpoint(const std::filesystem::path& dir, const BaseModel<double>& model);
std::unique_ptr<BaseModel<double>> loadBaseCheckpoint(const std::filesystem::path& dir);

/// Writes one S x T x d latent tensor per sequence plus embeddings.json.
void extractEmbeddings(const BaseModel<double>& model, const Corpus& corpus,
                       const std::filesystem::path& out_dir);

struct EmbeddingStore {
  int latent_views = 0;
  int d = 0;
  std::map<std::string, std::vector<Matd>> by_sequence;  // per view T x d

  static EmbeddingStore load(const std::filesystem::path& dir);
  const std::vector<Matd>& at(const std::string& id) const;
};

struct DownstreamTrainResult {
  std::unique_ptr<DownstreamModel<double>> model;
  TrainHistory history;
};

/// store may be null only when cfg.use_latents is false.
DownstreamTrainResult trainDownstream(const Corpus& corpus, const EmbeddingStore* store,
                                      const DownstreamConfig& cfg, const TrainConfig& tc,
                                      Task task,
                                      const BaseModel<double>* transfer_from = nullptr);

void saveDownstreamCheckpoint(const std::filesystem::path& dir,
                              const DownstreamModel<double>& model, Task task);
std::pair<std::unique_ptr<DownstreamModel<double>>, Task> loadDownstreamCheckpoint(
    const std::filesystem::path& dir);

/// Stacked frame scores over a split (rows = sequences x frames).
MetricsReport evaluateDownstream(const DownstreamModel<double>& model, const Corpus& corpus,
                                 const EmbeddingStore* store, Task task, bool on_test = true);

/// Bag-level evaluation of the base model (rows = sequences).
MetricsReport evaluateBags(const BaseModel<double>& model, const Corpus& corpus,
                           bool on_test = true);

}  // namespace mvw
