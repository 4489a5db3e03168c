#include "mvw/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mvw/error.hpp"

namespace mvw {

using nlohmann::json;

namespace {

struct PrPoint {
  double recall;
  double precision;
};

// Walks score-descending threshold groups and reports (recall, precision)
// after each group.
std::vector<PrPoint> prPoints(const Vecd& scores, const Veci& labels, int positives) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });

  std::vector<PrPoint> pts;
  int tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores(order[i]);
    while (i < order.size() && scores(order[i]) == s) {
      if (labels(order[i]) == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(tp) / positives,
                   static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return pts;
}

}  // namespace

std::optional<double> averagePrecision(const Vecd& scores, const Veci& labels) {
  if (scores.size() != labels.size()) throw DataError("averagePrecision: size mismatch");
  const int positives = static_cast<int>((labels.array() == 1).count());
  if (positives == 0) return std::nullopt;

  std::vector<PrPoint> pts = prPoints(scores, labels, positives);
  // all-points interpolation: precision envelope from high recall backwards
  double running_max = 0.0;
  std::vector<double> interp(pts.size());
  for (std::size_t i = pts.size(); i-- > 0;) {
    running_max = std::max(running_max, pts[i].precision);
    interp[i] = running_max;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].recall - prev_recall) * interp[i];
    prev_recall = pts[i].recall;
  }
  return ap;
}

PrCurve prCurve(const Vecd& scores, const Veci& labels) {
  const int positives = static_cast<int>((labels.array() == 1).count());
  PrCurve c;
  if (positives == 0) return c;
  for (const PrPoint& p : prPoints(scores, labels, positives)) {
    c.recall.push_back(p.recall);
    c.precision.push_back(p.precision);
  }
  return c;
}

MetricsReport evaluateFrames(const Matd& scores, const Mati& labels,
                             const std::string& task_tag) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw DataError("evaluateFrames: scores/labels shape mismatch");
  if (scores.size() == 0) throw DataError("evaluateFrames: empty inputs");

  MetricsReport report;
  report.task = task_tag;

  long correct = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r)
    for (Eigen::Index c = 0; c < scores.cols(); ++c)
      if ((scores(r, c) >= 0.5 ? 1 : 0) == labels(r, c)) ++correct;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());

  double ap_sum = 0.0;
  int ap_count = 0;
  double f1_sum = 0.0;
  int f1_count = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    ClassMetrics cm;
    cm.class_index = static_cast<int>(c);
    const Vecd s = scores.col(c);
    const Veci l = labels.col(c);
    cm.support = static_cast<int>((l.array() == 1).count());
    cm.ap = averagePrecision(s, l);
    if (cm.ap) {
      ap_sum += *cm.ap;
      ++ap_count;
    } else {
      report.undefined_ap_classes.push_back(cm.class_index);
    }
    int tp = 0, fp = 0, fn = 0;
    for (Eigen::Index r = 0; r < s.size(); ++r) {
      const int pred = s(r) >= 0.5 ? 1 : 0;
      if (pred == 1 && l(r) == 1) ++tp;
      if (pred == 1 && l(r) == 0) ++fp;
      if (pred == 0 && l(r) == 1) ++fn;
    }
    if (cm.support > 0) {
      cm.f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
      f1_sum += cm.f1;
      ++f1_count;
    }
    report.per_class.push_back(cm);
  }
  report.map = ap_count > 0 ? ap_sum / ap_count : 0.0;
  report.macro_f1 = f1_count > 0 ? f1_sum / f1_count : 0.0;
  return report;
}

json MetricsReport::toJson() const {
  json j;
  j["task"] = task;
  j["accuracy"] = accuracy;
  j["map"] = map;
  j["macro_f1"] = macro_f1;
  j["undefined_ap_classes"] = undefined_ap_classes;
  j["per_class"] = json::array();
  for (const ClassMetrics& cm : per_class) {
    json e;
    e["class_index"] = cm.class_index;
    if (cm.ap)
      e["ap"] = *cm.ap;
    else
      e["ap"] = nullptr;
    e["f1"] = cm.f1;
    e["support"] = cm.support;
    j["per_class"].push_back(e);
  }
  return j;
}

void MetricsReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << toJson().dump(2) << "\n";
}

void writePrPlotSvg(const std::filesystem::path& path, const PrCurve& curve,
                    const std::string& title) {
  const int w = 320, h = 320, m = 40;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << m << "\" y2=\"" << m
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"12\">" << title
      << "</text>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"10\">recall</text>\n";
  if (!curve.recall.empty()) {
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    char buf[64];
    for (std::size_t i = 0; i < curve.recall.size(); ++i) {
      const double x = m + curve.recall[i] * (w - 2 * m);
      const double y = h - m - curve.precision[i] * (h - 2 * m);
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
      out << buf;
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace mvw
