#include "mscount/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <tuple>

namespace mscount {

CountMetrics count_metrics(const std::vector<std::pair<double, double>>& gt_pred) {
  if (gt_pred.empty()) throw std::invalid_argument("count_metrics: empty input");
  const double n = static_cast<double>(gt_pred.size());
  double abs_sum = 0.0, sq_sum = 0.0, gt_sum = 0.0;
  for (const auto& [g, p] : gt_pred) {
    abs_sum += std::abs(g - p);
    sq_sum += (g - p) * (g - p);
    gt_sum += g;
  }
  const double mean = gt_sum / n;
  double ss_tot = 0.0;
  for (const auto& [g, p] : gt_pred) ss_tot += (g - mean) * (g - mean);
  CountMetrics m;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (ss_tot > 0.0) m.r2 = 1.0 - sq_sum / ss_tot;
  return m;
}

namespace {

struct Edge {
  double dist;
  int gt;
  int pred;
};

std::vector<Edge> candidate_edges(const PointSet& gt, const PointSet& pred, double radius) {
  if (gt.frame() != pred.frame()) {
    throw std::invalid_argument("match_points: ground truth and predictions use different frames");
  }
  std::vector<Edge> edges;
  const auto& g = gt.points();
  const auto& p = pred.points();
  for (int i = 0; i < static_cast<int>(g.size()); ++i) {
    for (int j = 0; j < static_cast<int>(p.size()); ++j) {
      const double d = std::hypot(g[i].x - p[j].x, g[i].y - p[j].y);
      if (d <= radius) edges.push_back({d, i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.dist, a.gt, a.pred) < std::tie(b.dist, b.gt, b.pred);
  });
  return edges;
}

int greedy(const std::vector<Edge>& edges, std::vector<int>& gt_to_pred,
           std::vector<int>& pred_to_gt) {
  int matches = 0;
  for (const auto& e : edges) {
    if (gt_to_pred[e.gt] < 0 && pred_to_gt[e.pred] < 0) {
      gt_to_pred[e.gt] = e.pred;
      pred_to_gt[e.pred] = e.gt;
      ++matches;
    }
  }
  return matches;
}

}  // namespace

int greedy_match_count(const PointSet& gt, const PointSet& pred, double radius) {
  const auto edges = candidate_edges(gt, pred, radius);
  std::vector<int> g2p(gt.size(), -1), p2g(pred.size(), -1);
  return greedy(edges, g2p, p2g);
}

ImageResult match_points(const PointSet& gt, const PointSet& pred, double radius) {
  const auto edges = candidate_edges(gt, pred, radius);
  std::vector<int> g2p(gt.size(), -1), p2g(pred.size(), -1);
  int matches = greedy(edges, g2p, p2g);

  // Adjacency in ascending distance order, for deterministic augmentation.
  std::vector<std::vector<int>> adj(gt.size());
  for (const auto& e : edges) adj[e.gt].push_back(e.pred);

  std::vector<char> visited;
  std::function<bool(int)> augment = [&](int g) -> bool {
    for (int p : adj[g]) {
      if (visited[p]) continue;
      visited[p] = 1;
      if (p2g[p] < 0 || augment(p2g[p])) {
        g2p[g] = p;
        p2g[p] = g;
        return true;
      }
    }
    return false;
  };
  for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
    if (g2p[g] >= 0 || adj[g].empty()) continue;
    visited.assign(pred.size(), 0);
    if (augment(g)) ++matches;
  }

  ImageResult r;
  r.gt_count = static_cast<int>(gt.size());
  r.pred_count = static_cast<int>(pred.size());
  r.matches = matches;
  r.false_positives = r.pred_count - matches;
  r.false_negatives = r.gt_count - matches;
  return r;
}

PrecisionRecall prf(const std::vector<ImageResult>& results) {
  long tp = 0, fp = 0, fn = 0;
  for (const auto& r : results) {
    tp += r.matches;
    fp += r.false_positives;
    fn += r.false_negatives;
  }
  PrecisionRecall out;
  out.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double s = out.precision + out.recall;
  out.f_measure = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

DensityBoundaries tercile_boundaries(std::vector<int> gt_counts) {
  if (gt_counts.empty()) throw std::invalid_argument("tercile_boundaries: empty input");
  std::sort(gt_counts.begin(), gt_counts.end());
  const std::size_t n = gt_counts.size();
  DensityBoundaries b;
  b.low_max = n / 3 > 0 ? gt_counts[n / 3 - 1] : gt_counts.front() - 1;
  b.medium_max = 2 * n / 3 > 0 ? gt_counts[2 * n / 3 - 1] : b.low_max;
  return b;
}

Density classify_density(int gt_count, const DensityBoundaries& b) {
  if (gt_count <= b.low_max) return Density::Low;
  if (gt_count <= b.medium_max) return Density::Medium;
  return Density::High;
}

const char* density_name(Density d) {
  switch (d) {
    case Density::Low: return "low";
    case Density::Medium: return "medium";
    case Density::High: return "high";
  }
  return "?";
}

std::array<std::vector<ImageResult>, 3> density_split(const std::vector<ImageResult>& results,
                                                      const DensityBoundaries& boundaries) {
  if (boundaries.low_max > boundaries.medium_max) {
    throw std::invalid_argument("density boundaries must be ascending");
  }
  std::array<std::vector<ImageResult>, 3> groups;
  for (const auto& r : results) {
    groups[static_cast<int>(classify_density(r.gt_count, boundaries))].push_back(r);
  }
  return groups;
}

namespace {

GroupReport group_report(const std::vector<ImageResult>& results) {
  GroupReport g;
  g.images = results.size();
  if (results.empty()) return g;
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : results) pairs.emplace_back(r.gt_count, r.pred_count);
  g.counts = count_metrics(pairs);
  g.pr = prf(results);
  return g;
}

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::vector<std::string> row_cells(const char* name, const GroupReport& g) {
  if (g.images == 0) return {name, "0", "-", "-", "-", "-", "-", "-"};
  return {name,
          std::to_string(g.images),
          fmt(g.counts.mae, 4),
          fmt(g.counts.rmse, 4),
          g.counts.r2 ? fmt(*g.counts.r2, 4) : "undefined",
          fmt(g.pr.precision, 4),
          fmt(g.pr.recall, 4),
          fmt(g.pr.f_measure, 4)};
}

std::vector<std::vector<std::string>> report_rows(const CountingReport& report) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"group", "images", "MAE", "RMSE", "R2", "Precision", "Recall", "F-Measure"});
  rows.push_back(row_cells("all", report.overall));
  for (int i = 0; i < 3; ++i) {
    rows.push_back(row_cells(density_name(static_cast<Density>(i)), report.by_density[i]));
  }
  return rows;
}

}  // namespace

CountingReport make_report(const std::vector<ImageResult>& results,
                           const DensityBoundaries& boundaries) {
  if (results.empty()) throw std::invalid_argument("make_report: no images");
  CountingReport report;
  report.boundaries = boundaries;
  report.overall = group_report(results);
  const auto groups = density_split(results, boundaries);
  for (int i = 0; i < 3; ++i) report.by_density[i] = group_report(groups[i]);
  return report;
}

std::string report_to_csv(const CountingReport& report, const ReportHeader& header) {
  std::string out;
  for (const auto& [k, v] : header) out += "# " + k + "=" + v + "\n";
  out += "# density_low_max=" + std::to_string(report.boundaries.low_max) + "\n";
  out += "# density_medium_max=" + std::to_string(report.boundaries.medium_max) + "\n";
  for (const auto& row : report_rows(report)) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

std::string report_to_table(const CountingReport& report, const ReportHeader& header) {
  std::string out;
  for (const auto& [k, v] : header) out += k + ": " + v + "\n";
  out += "density groups: low <= " + std::to_string(report.boundaries.low_max) +
         " < medium <= " + std::to_string(report.boundaries.medium_max) + " < high\n";
  const auto rows = report_rows(report);
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += "  ";
      out += std::string(width[i] - row[i].size(), ' ') + row[i];
    }
    out += "\n";
  }
  return out;
}

}  // namespace mscount
