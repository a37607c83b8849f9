#include "mscount/localization.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mscount/io_util.hpp"

namespace mscount {

void PeakParams::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0, 1)");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be non-negative");
}

std::vector<Detection> find_peaks(const ConfidenceMap& map, const PeakParams& params) {
  params.validate();
  struct Candidate {
    int y, x;
    double v;
  };
  std::vector<Candidate> cands;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      if (!(v > params.tau)) continue;
      if (x > 0 && !(v > map.at(y, x - 1))) continue;
      if (x + 1 < map.width && !(v > map.at(y, x + 1))) continue;
      if (y > 0 && !(v > map.at(y - 1, x))) continue;
      if (y + 1 < map.height && !(v > map.at(y + 1, x))) continue;
      cands.push_back({y, x, v});
    }
  }
  // Candidates were gathered in row-major order, so a stable sort keeps that
  // order among equal confidences.
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.v > b.v; });

  const double d2min = params.delta * params.delta;
  std::vector<Detection> kept;
  for (const auto& c : cands) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const Detection& d) {
      const double dx = d.position.x - c.x;
      const double dy = d.position.y - c.y;
      return dx * dx + dy * dy > d2min;
    });
    if (clear) {
      Detection d;
      d.position = {static_cast<double>(c.x), static_cast<double>(c.y)};
      d.confidence = c.v;
      kept.push_back(d);
    }
  }
  return kept;
}

std::vector<Detection> to_image_space(std::vector<Detection> dets, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be positive");
  for (auto& d : dets) {
    d.image_position = {(d.position.x + 0.5) * stride - 0.5, (d.position.y + 0.5) * stride - 0.5};
  }
  return dets;
}

std::string detections_to_csv(const std::vector<ImageDetections>& images) {
  std::string out = "image_id,x_image,y_image,confidence\n";
  char buf[128];
  for (const auto& img : images) {
    for (const auto& d : img.detections) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", d.image_position.x,
                    d.image_position.y, d.confidence);
      out += img.image_id;
      out += buf;
    }
  }
  return out;
}

void save_detections_csv(const std::filesystem::path& path,
                         const std::vector<ImageDetections>& images) {
  const std::string text = detections_to_csv(images);
  write_atomically(path, [&](std::ostream& out) { out << text; });
}

std::vector<ImageDetections> load_detections_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("image_id,x_image,y_image,confidence", 0) != 0) {
    throw std::runtime_error(path.string() + ": missing detections CSV header");
  }
  std::vector<ImageDetections> out;
  std::map<std::string, std::size_t> index;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, xs, ys, cs;
    if (!std::getline(row, id, ',') || !std::getline(row, xs, ',') ||
        !std::getline(row, ys, ',') || !std::getline(row, cs)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    Detection d;
    try {
      d.image_position = {std::stod(xs), std::stod(ys)};
      d.confidence = std::stod(cs);
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    auto [it, inserted] = index.emplace(id, out.size());
    if (inserted) out.push_back({id, {}});
    out[it->second].detections.push_back(d);
  }
  return out;
}

}  // namespace mscount
