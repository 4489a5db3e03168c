#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvw/train.hpp"

namespace mvw {

/// One row of the ablation matrix: switches applied on top of the proposed
/// configuration, for both the base and downstream models.
struct AblationVariant {
  std::string name;
  bool use_sl = true;
  bool use_pd = true;
  PtbOp ptb_op = PtbOp::max;
  LatentMode latent_mode = LatentMode::per_view;
};

const std::array<AblationVariant, 5>& ablationVariants();

struct AblationRow {
  AblationVariant variant;
  double detection = 0.0;    // median frame accuracy across seeds
  double recognition = 0.0;  // median frame accuracy across seeds
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string toCsv() const;
};

/// Trains base + downstream per variant and seed, evaluates frame accuracy on
/// the test split for both tasks and reports the per-variant medians.
AblationTable runAblationMatrix(const Corpus& corpus, const ModelConfig& base_cfg,
                                const DownstreamConfig& ds_cfg, const TrainConfig& base_tc,
                                const TrainConfig& ds_tc, const std::vector<std::uint64_t>& seeds);

double median(std::vector<double> values);

}  // namespace mvw
