#include "mscount/confmap.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>
#include <stdexcept>

#include "mscount/io_util.hpp"
#include "mscount/ops.hpp"

namespace mscount {

SigmaSchedule SigmaSchedule::make(int stages, double sigma_max, double sigma_min) {
  if (stages < 1) throw std::invalid_argument("sigma schedule needs at least one stage");
  if (!(sigma_min > 0.0)) throw std::invalid_argument("sigma_min must be positive");
  if (!(sigma_max >= sigma_min)) {
    throw std::invalid_argument("sigma_max must be at least sigma_min");
  }
  SigmaSchedule s;
  if (stages == 1) {
    s.sigmas_ = {sigma_min};
    return s;
  }
  s.sigmas_.resize(stages);
  // Weighted form rounds once, so endpoints and exact thirds come out exact.
  const int span = stages - 1;
  for (int t = 0; t < stages; ++t) {
    s.sigmas_[t] = (sigma_max * (span - t) + sigma_min * t) / span;
  }
  return s;
}

PointSet::PointSet(std::vector<Point> points, Frame frame, double width, double height)
    : points_(std::move(points)), frame_(frame), width_(width), height_(height) {
  if (!(width > 0.0 && height > 0.0)) {
    throw std::invalid_argument("point set frame must have positive size");
  }
  for (const auto& p : points_) {
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      throw std::invalid_argument("point (" + std::to_string(p.x) + ", " +
                                  std::to_string(p.y) + ") outside frame " +
                                  std::to_string(width) + "x" + std::to_string(height));
    }
  }
}

PointSet to_map_space(const PointSet& image_points, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be positive");
  std::vector<Point> pts;
  pts.reserve(image_points.size());
  for (const auto& p : image_points.points()) pts.push_back({p.x / stride, p.y / stride});
  return PointSet(std::move(pts), Frame::Map, image_points.width() / stride,
                  image_points.height() / stride);
}

Tensor ConfidenceMap::to_tensor() const {
  return Tensor(Shape{1, 1, height, width}, values);
}

ConfidenceMap ConfidenceMap::from_tensor(const Tensor& t, int index, int stride) {
  const Shape& s = t.shape();
  if (index < 0 || index >= s.n) throw std::out_of_range("confidence map batch index");
  ConfidenceMap m;
  m.height = s.h;
  m.width = s.w;
  m.stride = stride;
  const auto src = t.data().subspan(static_cast<std::size_t>(index) * s.c * s.plane(), s.plane());
  m.values.assign(src.begin(), src.end());
  return m;
}

ConfidenceMap render_gt_map(const PointSet& map_points, double sigma, int out_h, int out_w) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  ConfidenceMap m;
  m.height = out_h;
  m.width = out_w;
  m.values.assign(static_cast<std::size_t>(out_h) * out_w, 0.0);
  const double radius = 4.0 * sigma;
  const double r2 = radius * radius;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& c : map_points.points()) {
    const int y0 = std::max(0, static_cast<int>(std::ceil(c.y - radius)));
    const int y1 = std::min(out_h - 1, static_cast<int>(std::floor(c.y + radius)));
    const int x0 = std::max(0, static_cast<int>(std::ceil(c.x - radius)));
    const int x1 = std::min(out_w - 1, static_cast<int>(std::floor(c.x + radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
        if (d2 > r2) continue;
        double& v = m.at(y, x);
        v = std::max(v, std::exp(-d2 * inv));
      }
    }
  }
  return m;
}

Tensor stack_maps(const std::vector<ConfidenceMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("stack_maps: no maps");
  const int h = maps.front().height;
  const int w = maps.front().width;
  std::vector<double> values;
  values.reserve(maps.size() * h * w);
  for (const auto& m : maps) {
    if (m.height != h || m.width != w) throw std::invalid_argument("stack_maps: size mismatch");
    values.insert(values.end(), m.values.begin(), m.values.end());
  }
  return Tensor(Shape{static_cast<int>(maps.size()), 1, h, w}, std::move(values));
}

Tensor multi_stage_loss(Tape& tape, const std::vector<Tensor>& preds,
                        const std::vector<Tensor>& gts) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw std::invalid_argument("multi_stage_loss: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(gts.size()) +
                                " ground-truth maps");
  }
  Tensor total = ops::sum_squared_error(tape, preds[0], gts[0]);
  for (std::size_t t = 1; t < preds.size(); ++t) {
    total = ops::add(tape, total, ops::sum_squared_error(tape, preds[t], gts[t]));
  }
  const int batch = preds[0].shape().n;
  return batch > 1 ? ops::scale(tape, total, 1.0 / batch) : total;
}

PointSet AnnotationRecord::point_set() const {
  return PointSet(points, Frame::Image, width, height);
}

std::vector<AnnotationRecord> parse_annotations(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("annotation JSON: ") + e.what());
  }
  if (!doc.is_array()) throw std::runtime_error("annotation document must be a JSON array");
  std::vector<AnnotationRecord> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::string where = "annotation record " + std::to_string(i);
    if (!rec.is_object()) throw std::runtime_error(where + " is not an object");
    for (const char* key : {"image_path", "width", "height", "points"}) {
      if (!rec.contains(key)) throw std::runtime_error(where + " lacks \"" + key + "\"");
    }
    AnnotationRecord r;
    if (!rec["image_path"].is_string() || !rec["width"].is_number_integer() ||
        !rec["height"].is_number_integer() || !rec["points"].is_array()) {
      throw std::runtime_error(where + " has a field of the wrong type");
    }
    r.image_path = rec["image_path"].get<std::string>();
    r.width = rec["width"].get<int>();
    r.height = rec["height"].get<int>();
    if (r.width <= 0 || r.height <= 0) throw std::runtime_error(where + " has non-positive size");
    for (const auto& p : rec["points"]) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw std::runtime_error(where + " has a point that is not [x, y]");
      }
      r.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    try {
      (void)r.point_set();
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_text_file(path));
}

std::string annotations_to_json(const std::vector<AnnotationRecord>& records) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points) pts.push_back({p.x, p.y});
    doc.push_back({{"image_path", r.image_path},
                   {"width", r.width},
                   {"height", r.height},
                   {"points", std::move(pts)}});
  }
  return doc.dump(1);
}

void save_annotations(const std::filesystem::path& path,
                      const std::vector<AnnotationRecord>& records) {
  const std::string text = annotations_to_json(records);
  write_atomically(path, [&](std::ostream& out) { out << text << '\n'; });
}

}  // namespace mscount
