#include "pvudf/metrics/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "pvudf/config/fields.hpp"

namespace pvudf {
namespace {

void require_points(const PointCloud& predicted, const PointCloud& reference, const char* op) {
  if (predicted.empty() || reference.empty()) {
    throw std::invalid_argument(std::string(op) + ": both clouds must be non-empty (got " +
                                std::to_string(predicted.size()) + " and " +
                                std::to_string(reference.size()) + " points)");
  }
}

double fraction_below(const std::vector<double>& squared, double d) {
  std::size_t hits = 0;
  for (double s : squared) {
    if (std::sqrt(s) < d) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(squared.size());
}

}  // namespace

std::vector<double> nearest_squared(const PointCloud& from, const KdTree& to) {
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = to.nearest(from[i]).distance_squared;
  return out;
}

double ChamferParts::mean() const {
  return accuracy_sum / static_cast<double>(predicted) +
         completeness_sum / static_cast<double>(reference);
}

ChamferParts chamfer_parts(const PointCloud& predicted, const PointCloud& reference) {
  require_points(predicted, reference, "chamfer_l2");
  ChamferParts parts;
  parts.predicted = predicted.size();
  parts.reference = reference.size();
  for (double s : nearest_squared(predicted, KdTree(reference))) parts.accuracy_sum += s;
  for (double s : nearest_squared(reference, KdTree(predicted))) parts.completeness_sum += s;
  return parts;
}

double chamfer_l2(const PointCloud& predicted, const PointCloud& reference) {
  return chamfer_parts(predicted, reference).mean();
}

PrecisionRecall precision_recall(const PointCloud& predicted, const PointCloud& reference,
                                 std::span<const double> thresholds) {
  require_points(predicted, reference, "precision_recall");
  for (double d : thresholds) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw std::invalid_argument("precision_recall: thresholds must be positive and finite");
    }
  }
  const std::vector<double> to_ref = nearest_squared(predicted, KdTree(reference));
  const std::vector<double> to_pred = nearest_squared(reference, KdTree(predicted));
  PrecisionRecall out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double d : thresholds) {
    out.precision.push_back(fraction_below(to_ref, d));
    out.recall.push_back(fraction_below(to_pred, d));
  }
  return out;
}

double f_score(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::string format_score(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  return buf;
}

EvalReport evaluate(const PointCloud& predicted, const PointCloud& reference,
                    std::span<const double> threshold_percent, double diagonal) {
  require_points(predicted, reference, "evaluate");
  if (!(diagonal > 0.0) || !std::isfinite(diagonal)) {
    throw std::invalid_argument("evaluate: bounding-box diagonal must be positive");
  }
  const auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.diagonal = diagonal;
  report.threshold_percent.assign(threshold_percent.begin(), threshold_percent.end());

  const std::vector<double> to_ref = nearest_squared(predicted, KdTree(reference));
  const std::vector<double> to_pred = nearest_squared(reference, KdTree(predicted));
  report.chamfer.predicted = predicted.size();
  report.chamfer.reference = reference.size();
  for (double s : to_ref) report.chamfer.accuracy_sum += s;
  for (double s : to_pred) report.chamfer.completeness_sum += s;

  for (double pct : threshold_percent) {
    const double d = pct / 100.0 * diagonal;
    if (!(d > 0.0) || !std::isfinite(d)) throw std::invalid_argument("evaluate: thresholds must be positive");
    report.rates.thresholds.push_back(d);
    report.rates.precision.push_back(fraction_below(to_ref, d));
    report.rates.recall.push_back(fraction_below(to_pred, d));
    report.f_scores.push_back(f_score(report.rates.precision.back(), report.rates.recall.back()));
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_report_csv(std::ostream& out, const std::string& shape, const EvalReport& report,
                      bool header) {
  if (header) out << "shape,metric,threshold_percent,value\n";
  auto row = [&](const std::string& metric, const std::string& threshold, const std::string& value) {
    out << shape << "," << metric << "," << threshold << "," << value << "\n";
  };
  const ChamferParts& c = report.chamfer;
  row("chamfer_l2_mean", "", fields::format(c.mean()));
  row("chamfer_l2_x1e-4", "", fields::format(c.mean() * 1e4));
  row("chamfer_accuracy_sum", "", fields::format(c.accuracy_sum));
  row("chamfer_completeness_sum", "", fields::format(c.completeness_sum));
  row("predicted_points", "", std::to_string(c.predicted));
  row("reference_points", "", std::to_string(c.reference));
  row("diagonal", "", fields::format(report.diagonal));
  for (std::size_t i = 0; i < report.threshold_percent.size(); ++i) {
    const std::string t = fields::format(report.threshold_percent[i]);
    row("precision", t, format_score(report.rates.precision[i]));
    row("recall", t, format_score(report.rates.recall[i]));
    row("f_score", t, format_score(report.f_scores[i]));
  }
  row("runtime_seconds", "", fields::format(report.runtime_seconds));
}

}  // namespace pvudf
