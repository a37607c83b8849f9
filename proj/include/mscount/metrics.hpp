#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mscount/confmap.hpp"

namespace mscount {

struct CountMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  /// 1 - SS_res / SS_tot around the ground-truth mean; empty when all
  /// ground-truth counts are equal.
  std::optional<double> r2;
};

/// Throws std::invalid_argument on an empty list.
CountMetrics count_metrics(const std::vector<std::pair<double, double>>& gt_pred);

struct ImageResult {
  std::string image_id;
  int gt_count = 0;
  int pred_count = 0;
  int matches = 0;
  int false_positives = 0;
  int false_negatives = 0;
};

/// One-to-one matching of predictions to annotations within `radius`.
///
/// Pairs within the radius are accepted greedily by ascending distance
/// (nearest first, ties by gt index then pred index); the greedy matching is
/// then extended along augmenting paths so the number of matches is maximal.
/// Throws std::invalid_argument when the frames differ.
ImageResult match_points(const PointSet& gt, const PointSet& pred, double radius);

/// Nearest-first greedy matching only, without augmentation.
int greedy_match_count(const PointSet& gt, const PointSet& pred, double radius);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

/// Micro-averaged over summed matches / FP / FN. Precision is 0 when there
/// are no predictions, recall is 0 when there is no ground truth, and F is 0
/// when P + R = 0.
PrecisionRecall prf(const std::vector<ImageResult>& results);

struct DensityBoundaries {
  int low_max = 52;     // gt <= low_max is "low"
  int medium_max = 78;  // low_max < gt <= medium_max is "medium"
};

/// Count boundaries splitting the sorted counts into thirds: low_max is the
/// (n/3)-th smallest count, medium_max the (2n/3)-th.
DensityBoundaries tercile_boundaries(std::vector<int> gt_counts);

enum class Density { Low, Medium, High };
Density classify_density(int gt_count, const DensityBoundaries& b);
const char* density_name(Density d);

struct GroupReport {
  std::size_t images = 0;
  CountMetrics counts;
  PrecisionRecall pr;
};

struct CountingReport {
  GroupReport overall;
  DensityBoundaries boundaries;
  std::array<GroupReport, 3> by_density;  // low, medium, high; empty groups have images == 0
};

/// Full report with density split. Throws std::invalid_argument when
/// results is empty.
CountingReport make_report(const std::vector<ImageResult>& results,
                           const DensityBoundaries& boundaries);

/// Three sub-lists partitioned by gt_count.
std::array<std::vector<ImageResult>, 3> density_split(const std::vector<ImageResult>& results,
                                                      const DensityBoundaries& boundaries);

// Report rendering. Columns follow the order MAE, RMSE, R2, Precision,
// Recall, F-Measure. `header` lines are emitted first, as "# key=value" in
// CSV and "key: value" in the table.
using ReportHeader = std::vector<std::pair<std::string, std::string>>;
std::string report_to_csv(const CountingReport& report, const ReportHeader& header);
std::string report_to_table(const CountingReport& report, const ReportHeader& header);

}  // namespace mscount
