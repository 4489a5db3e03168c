#include "mvw/ablate.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace mvw {

const std::array<AblationVariant, 5>& ablationVariants() {
  static const std::array<AblationVariant, 5> kVariants = {{
      {"Proposed", true, true, PtbOp::max, LatentMode::per_view},
      {"Ablation-A", false, false, PtbOp::max, LatentMode::per_view},
      {"Ablation-B", true, true, PtbOp::sum, LatentMode::per_view},
      {"Ablation-C", true, true, PtbOp::mean, LatentMode::per_view},
      {"Ablation-D", true, true, PtbOp::mean, LatentMode::single},
  }};
  return kVariants;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string AblationTable::toCsv() const {
  std::ostringstream os;
  os << "Algo.,SL,PD,PTB opera.,Latent Space,Action Det.,Action Recog.\n";
  char buf[32];
  for (const AblationRow& r : rows) {
    os << r.variant.name << ',' << (r.variant.use_sl ? "yes" : "no") << ','
       << (r.variant.use_pd ? "yes" : "no") << ',' << toString(r.variant.ptb_op) << ','
       << (r.variant.latent_mode == LatentMode::per_view ? "multiple" : "single") << ',';
    std::snprintf(buf, sizeof(buf), "%.4f,", r.detection);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%.4f", r.recognition);
    os << buf << '\n';
  }
  return os.str();
}

AblationTable runAblationMatrix(const Corpus& corpus, const ModelConfig& base_cfg,
                                const DownstreamConfig& ds_cfg, const TrainConfig& base_tc,
                                const TrainConfig& ds_tc,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("runAblationMatrix: need at least one seed");
  const auto tmp = std::filesystem::temp_directory_path() / "mvweak_ablate_embeddings";

  AblationTable table;
  for (const AblationVariant& variant : ablationVariants()) {
    ModelConfig b = base_cfg;
    b.use_sl = variant.use_sl;
    b.use_pd = variant.use_pd;
    b.ptb_op = variant.ptb_op;
    b.latent_mode = variant.latent_mode;

    std::vector<double> det_acc, rec_acc;
    for (std::uint64_t seed : seeds) {
      TrainConfig btc = base_tc;
      btc.seed = seed;
      const BaseTrainResult base = trainBase(corpus, b, btc);

      std::filesystem::remove_all(tmp);
      extractEmbeddings(*base.model, corpus, tmp);
      const EmbeddingStore store = EmbeddingStore::load(tmp);

      for (Task task : {Task::detection, Task::recognition}) {
        DownstreamConfig d = ds_cfg;
        d.base = b;
        d.base.bag_classes = base_cfg.bag_classes;
        d.c_task = task == Task::detection ? 1 : corpus.num_classes;
        d.use_latents = true;
        TrainConfig dtc = ds_tc;
        dtc.seed = seed;
        const DownstreamTrainResult ds = trainDownstream(corpus, &store, d, dtc, task);
        const MetricsReport report = evaluateDownstream(*ds.model, corpus, &store, task);
        (task == Task::detection ? det_acc : rec_acc).push_back(report.accuracy);
      }
    }
    AblationRow row;
    row.variant = variant;
    row.detection = median(det_acc);
    row.recognition = median(rec_acc);
    table.rows.push_back(row);
  }
  std::filesystem::remove_all(tmp);
  return table;
}

}  // namespace mvw
