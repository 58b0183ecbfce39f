#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pvudf/geometry/kdtree.hpp"

namespace pvudf {

/// Squared distance from each point of `from` to its nearest neighbor in `to`.
std::vector<double> nearest_squared(const PointCloud& from, const KdTree& to);

struct ChamferParts {
  double accuracy_sum = 0.0;      // sum over Y of squared nearest distance to Y_gt
  double completeness_sum = 0.0;  // sum over Y_gt of squared nearest distance to Y
  std::size_t predicted = 0;
  std::size_t reference = 0;
  /// accuracy_sum / |Y| + completeness_sum / |Y_gt|
  double mean() const;
};

ChamferParts chamfer_parts(const PointCloud& predicted, const PointCloud& reference);
/// Mean-normalized symmetric chamfer-L2.
double chamfer_l2(const PointCloud& predicted, const PointCloud& reference);

struct PrecisionRecall {
  std::vector<double> thresholds;
  std::vector<double> precision;  // fraction of Y within d of Y_gt
  std::vector<double> recall;     // fraction of Y_gt within d of Y
};

/// Distances strictly below d count as matched. Thresholds must be positive.
PrecisionRecall precision_recall(const PointCloud& predicted, const PointCloud& reference,
                                 std::span<const double> thresholds);

/// Harmonic mean of precision and recall, 0 when both are 0.
double f_score(double precision, double recall);

/// Scores as printed in reports: three decimals.
std::string format_score(double value);

struct EvalReport {
  ChamferParts chamfer;
  std::vector<double> threshold_percent;  // d as a percentage of the diagonal
  double diagonal = 0.0;
  PrecisionRecall rates;
  std::vector<double> f_scores;
  double runtime_seconds = 0.0;
};

/// Thresholds are given as percentages of `diagonal` (1.0 means d = 1% of it).
EvalReport evaluate(const PointCloud& predicted, const PointCloud& reference,
                    std::span<const double> threshold_percent, double diagonal);

/// CSV with columns shape,metric,threshold_percent,value; one row per
/// (metric, threshold), plus chamfer rows in raw, mean, and x1e-4 form.
void write_report_csv(std::ostream& out, const std::string& shape, const EvalReport& report,
                      bool header = true);

}  // namespace pvudf
