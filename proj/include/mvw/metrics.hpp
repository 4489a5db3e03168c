#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvw/tensor.hpp"

namespace mvw {

struct ClassMetrics {
  int class_index = 0;
  std::optional<double> ap;  // undefined when the class has no positives
  double f1 = 0.0;
  int support = 0;
};

struct MetricsReport {
  std::string task;
  double accuracy = 0.0;
  double map = 0.0;       // mean over classes with defined AP
  double macro_f1 = 0.0;  // mean over classes with any positives
  std::vector<ClassMetrics> per_class;
  std::vector<int> undefined_ap_classes;

  nlohmann::json toJson() const;
  void write(const std::filesystem::path& path) const;
};

/// Average precision by all-points interpolation of the PR curve. Ties in
/// scores are handled as one threshold group. Undefined (nullopt) when the
/// class has no positive labels.
std::optional<double> averagePrecision(const Vecd& scores, const Veci& labels);

/// Frame-level metrics at threshold 0.5: element accuracy, per-class AP and
/// mAP, macro-F1. Classes absent from the labels are excluded from the mAP
/// mean and flagged in the report.
MetricsReport evaluateFrames(const Matd& scores, const Mati& labels, const std::string& task_tag);

/// Precision-recall points of one class (for plots).
struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
};
PrCurve prCurve(const Vecd& scores, const Veci& labels);

/// Minimal SVG rendering of a PR curve; deterministic bytes.
void writePrPlotSvg(const std::filesystem::path& path, const PrCurve& curve,
                    const std::string& title);

}  // namespace mvw
