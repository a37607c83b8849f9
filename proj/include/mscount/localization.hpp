#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mscount/confmap.hpp"

namespace mscount {

struct PeakParams {
  double tau = 0.35;   // confidence threshold, in (0, 1)
  double delta = 1.0;  // minimum peak separation, map pixels

  /// Throws std::invalid_argument if tau is outside (0, 1) or delta < 0.
  void validate() const;
};

struct Detection {
  Point position;        // map space
  double confidence = 0.0;
  Point image_position;  // image space, filled by to_image_space
};

/// Peaks of a confidence map.
///
/// A pixel is a candidate when it is strictly greater than every in-bounds
/// 4-neighbor and strictly greater than tau. Candidates are visited by
/// descending confidence (row-major order on ties) and kept when their
/// Euclidean distance to every kept peak exceeds delta. Flat plateaus yield
/// no peak. Output is in visiting order.
std::vector<Detection> find_peaks(const ConfidenceMap& map, const PeakParams& params);

/// Map pixel p -> image (p + 0.5) * stride - 0.5 on each axis.
std::vector<Detection> to_image_space(std::vector<Detection> dets, int stride);

struct ImageDetections {
  std::string image_id;
  std::vector<Detection> detections;
};

/// CSV with header "image_id,x_image,y_image,confidence", values to 6 decimals.
std::string detections_to_csv(const std::vector<ImageDetections>& images);
void save_detections_csv(const std::filesystem::path& path,
                         const std::vector<ImageDetections>& images);
/// Parses the CSV above; map-space positions are left at zero.
std::vector<ImageDetections> load_detections_csv(const std::filesystem::path& path);

}  // namespace mscount
