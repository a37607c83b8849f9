#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mscount/tensor.hpp"

namespace mscount {

/// Per-stage Gaussian spreads in map-space pixels, stage 1 first.
class SigmaSchedule {
 public:
  /// Linear spacing from sigma_max (stage 1) to sigma_min (stage T), both
  /// inclusive. T == 1 yields [sigma_min].
  /// Throws std::invalid_argument if T < 1, sigma_min <= 0 or sigma_max < sigma_min.
  static SigmaSchedule make(int stages, double sigma_max, double sigma_min);

  int stages() const { return static_cast<int>(sigmas_.size()); }
  double operator[](int t) const { return sigmas_.at(static_cast<std::size_t>(t)); }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

enum class Frame { Image, Map };

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Object centers in an explicit coordinate frame of size width x height.
class PointSet {
 public:
  PointSet() = default;
  /// Throws std::invalid_argument if any point lies outside [0,w) x [0,h).
  PointSet(std::vector<Point> points, Frame frame, double width, double height);

  const std::vector<Point>& points() const { return points_; }
  Frame frame() const { return frame_; }
  double width() const { return width_; }
  double height() const { return height_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Point> points_;
  Frame frame_ = Frame::Image;
  double width_ = 0.0;
  double height_ = 0.0;
};

/// Image coordinates divided by the stride, kept continuous.
PointSet to_map_space(const PointSet& image_points, int stride);

/// Single-channel grid of object-center likelihoods in [0, 1].
struct ConfidenceMap {
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }

  Tensor to_tensor() const;
  /// Copies channel 0 of batch item `index`.
  static ConfidenceMap from_tensor(const Tensor& t, int index, int stride);
};

/// Ground truth for one stage: pixel q gets max over centers c of
/// exp(-|q - c|^2 / (2 sigma^2)), evaluated within 4 sigma of each center.
/// Pixel centers sit at integer map coordinates.
ConfidenceMap render_gt_map(const PointSet& map_points, double sigma, int out_h, int out_w);

/// Stacks per-image ground-truth maps into an (n, 1, h, w) tensor.
Tensor stack_maps(const std::vector<ConfidenceMap>& maps);

/// Sum over stages of the per-stage squared error, divided by the batch size.
/// preds[t] and gts[t] are (n, 1, h, w). Throws std::invalid_argument on
/// length or shape mismatch.
Tensor multi_stage_loss(Tape& tape, const std::vector<Tensor>& preds,
                        const std::vector<Tensor>& gts);

/// One record of an annotation document.
struct AnnotationRecord {
  std::string image_path;
  int width = 0;
  int height = 0;
  std::vector<Point> points;

  PointSet point_set() const;
};

// Annotation document: a JSON array of
//   {"image_path": str, "width": int > 0, "height": int > 0,
//    "points": [[x, y], ...]}
// with image-space pixel coordinates inside [0,width) x [0,height).
std::vector<AnnotationRecord> parse_annotations(const std::string& json_text);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
std::string annotations_to_json(const std::vector<AnnotationRecord>& records);
void save_annotations(const std::filesystem::path& path,
                      const std::vector<AnnotationRecord>& records);

}  // namespace mscount
