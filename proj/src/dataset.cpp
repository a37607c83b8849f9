#include "mscount/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mscount/io_util.hpp"
#include "mscount/rng.hpp"

namespace mscount {

Raster::Raster(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
  if (w < 0 || h < 0) throw std::invalid_argument("negative raster size");
}

Raster Raster::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || x0 + w > width || y0 + h > height) {
    throw std::out_of_range("crop window outside raster");
  }
  Raster out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto* src = &pixels[(static_cast<std::size_t>(y0 + y) * width + x0) * 3];
    std::copy_n(src, static_cast<std::size_t>(w) * 3, &out.pixels[static_cast<std::size_t>(y) * w * 3]);
  }
  return out;
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (ppm_token(in) != "P6") throw std::runtime_error(path.string() + ": not a binary P6 pixmap");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed P6 header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error(path.string() + ": unsupported P6 geometry or maxval");
  }
  Raster r(w, h);
  if (!in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return r;
}

void write_ppm(const std::filesystem::path& path, const Raster& raster) {
  write_atomically(path, [&](std::ostream& out) {
    out << "P6\n" << raster.width << " " << raster.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raster.pixels.data()),
              static_cast<std::streamsize>(raster.pixels.size()));
  });
}

Tensor raster_to_tensor(const Raster& raster) { return rasters_to_batch({&raster}); }

Tensor rasters_to_batch(const std::vector<const Raster*>& rasters) {
  if (rasters.empty()) throw std::invalid_argument("rasters_to_batch: no rasters");
  const int w = rasters.front()->width;
  const int h = rasters.front()->height;
  Tensor t(Shape{static_cast<int>(rasters.size()), 3, h, w});
  for (std::size_t n = 0; n < rasters.size(); ++n) {
    const Raster& r = *rasters[n];
    if (r.width != w || r.height != h) throw std::invalid_argument("rasters_to_batch: size mismatch");
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = r.at(x, y, c) / 255.0;
      }
    }
  }
  return t;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  for (Split v : {Split::Train, Split::Val, Split::Test, Split::Unassigned}) {
    if (s == split_name(v)) return v;
  }
  throw std::runtime_error("unknown split '" + s + "'");
}

const char* density_tag_name(DensityTag d) {
  switch (d) {
    case DensityTag::Low: return "low";
    case DensityTag::Medium: return "medium";
    case DensityTag::High: return "high";
    case DensityTag::Unassigned: return "unassigned";
  }
  return "?";
}

DensityTag parse_density_tag(const std::string& s) {
  for (DensityTag v : {DensityTag::Low, DensityTag::Medium, DensityTag::High, DensityTag::Unassigned}) {
    if (s == density_tag_name(v)) return v;
  }
  throw std::runtime_error("unknown density tag '" + s + "'");
}

std::vector<Sample> tile(const Raster& raster, const PointSet& points, int patch,
                         const std::string& id_prefix) {
  if (patch < 1) throw std::invalid_argument("patch size must be positive");
  if (raster.width < patch || raster.height < patch) {
    throw std::invalid_argument("raster " + std::to_string(raster.width) + "x" +
                                std::to_string(raster.height) + " smaller than one " +
                                std::to_string(patch) + " px patch");
  }
  const int cols = raster.width / patch;
  const int rows = raster.height / patch;
  std::vector<std::vector<Point>> buckets(static_cast<std::size_t>(rows) * cols);
  for (const auto& p : points.points()) {
    const int c = static_cast<int>(std::floor(p.x / patch));
    const int r = static_cast<int>(std::floor(p.y / patch));
    if (c < 0 || r < 0 || c >= cols || r >= rows) continue;  // discarded margin
    buckets[static_cast<std::size_t>(r) * cols + c].push_back({p.x - c * patch, p.y - r * patch});
  }
  std::vector<Sample> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Sample s;
      s.id = id_prefix + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      s.image = raster.crop(c * patch, r * patch, patch, patch);
      s.points = PointSet(std::move(buckets[static_cast<std::size_t>(r) * cols + c]), Frame::Image,
                          patch, patch);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void split(std::vector<Sample>& samples, const std::array<double, 3>& fractions,
           std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions sum to " + std::to_string(total) + ", not 1");
  }
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = splitmix64(seed ^ fnv1a(samples[i].id));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : samples[a].id < samples[b].id;
  });
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  for (std::size_t rank = 0; rank < n; ++rank) {
    Sample& s = samples[order[rank]];
    if (rank < n_train) {
      s.split = Split::Train;
    } else if (rank < n_train + n_val) {
      s.split = Split::Val;
    } else {
      s.split = Split::Test;
    }
  }
}

void assign_density_terciles(std::vector<Sample>& samples) {
  if (samples.empty()) return;
  std::vector<int> counts;
  for (const auto& s : samples) counts.push_back(static_cast<int>(s.points.size()));
  const DensityBoundaries b = tercile_boundaries(counts);
  for (auto& s : samples) {
    switch (classify_density(static_cast<int>(s.points.size()), b)) {
      case Density::Low: s.density = DensityTag::Low; break;
      case Density::Medium: s.density = DensityTag::Medium; break;
      case Density::High: s.density = DensityTag::High; break;
    }
  }
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synth spec: " + what); };
  if (image_size < 8) fail("image_size must be at least 8");
  if (samples < 0) fail("samples must be non-negative");
  if (count_min < 0 || count_max < count_min) fail("count range must satisfy 0 <= min <= max");
  if (!(radius_min > 0.0) || radius_max < radius_min) fail("radius range must satisfy 0 < min <= max");
  if (min_separation < 0.0) fail("min_separation must be non-negative");
  if (background[0] < 0 || background[1] > 255 || background[0] > background[1] ||
      foreground[0] < 0 || foreground[1] > 255 || foreground[0] > foreground[1]) {
    fail("intensity ranges must be ascending within [0, 255]");
  }
  if (placement == Placement::JitteredGrid) {
    if (grid_cell < 1 || grid_cell > image_size) fail("grid_cell must lie in [1, image_size]");
    if (jitter < 0.0 || 2.0 * jitter >= grid_cell) fail("jitter must be below half a grid cell");
    const int cells = (image_size / grid_cell) * (image_size / grid_cell);
    if (count_max > cells) {
      fail("count_max " + std::to_string(count_max) + " exceeds the " + std::to_string(cells) +
           " grid cells");
    }
  } else {
    // Disks of diameter min_separation around each center must fit in the free area.
    const double side = image_size - 2.0 * radius_max;
    if (side <= 0.0) fail("radius_max too large for the image");
    const double packing = 0.9069;  // hexagonal packing density
    const double need = count_max * M_PI * min_separation * min_separation / 4.0;
    const double have = packing * (side + min_separation) * (side + min_separation);
    if (need > have) fail("count_max cannot fit at this min_separation");
  }
}

namespace {

constexpr int kPlacementAttempts = 200;
constexpr int kRestarts = 50;

bool separated(const std::vector<Point>& pts, const Point& p, double min_sep) {
  return std::all_of(pts.begin(), pts.end(), [&](const Point& q) {
    return std::hypot(p.x - q.x, p.y - q.y) >= min_sep;
  });
}

bool place_grid(const SynthSpec& spec, int count, Rng& rng, std::vector<Point>& pts) {
  const int per_side = spec.image_size / spec.grid_cell;
  std::vector<int> cells(static_cast<std::size_t>(per_side) * per_side);
  std::iota(cells.begin(), cells.end(), 0);
  for (int i = 0; i < count; ++i) {  // partial Fisher-Yates
    const auto j = rng.uniform_int(i, static_cast<std::int64_t>(cells.size()) - 1);
    std::swap(cells[i], cells[static_cast<std::size_t>(j)]);
  }
  pts.clear();
  for (int i = 0; i < count; ++i) {
    const double cx = (cells[i] % per_side + 0.5) * spec.grid_cell;
    const double cy = (cells[i] / per_side + 0.5) * spec.grid_cell;
    bool ok = false;
    for (int a = 0; a < kPlacementAttempts && !ok; ++a) {
      const Point p{cx + rng.uniform(-spec.jitter, spec.jitter),
                    cy + rng.uniform(-spec.jitter, spec.jitter)};
      if (separated(pts, p, spec.min_separation)) {
        pts.push_back(p);
        ok = true;
      }
    }
    if (!ok) return false;
  }
  return true;
}

bool place_uniform(const SynthSpec& spec, int count, Rng& rng, std::vector<Point>& pts) {
  const double lo = spec.radius_max;
  const double hi = spec.image_size - spec.radius_max;
  pts.clear();
  for (int i = 0; i < count; ++i) {
    bool ok = false;
    for (int a = 0; a < kPlacementAttempts && !ok; ++a) {
      const Point p{rng.uniform(lo, hi), rng.uniform(lo, hi)};
      if (separated(pts, p, spec.min_separation)) {
        pts.push_back(p);
        ok = true;
      }
    }
    if (!ok) return false;
  }
  return true;
}

void render_background(const SynthSpec& spec, Rng& rng, Raster& img) {
  const int size = spec.image_size;
  constexpr int kCoarse = 5;
  std::array<double, 3> base{};
  for (double& b : base) b = rng.uniform(spec.background[0], spec.background[1]);
  std::vector<double> coarse(kCoarse * kCoarse);
  for (double& v : coarse) v = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) * (kCoarse - 1) / (size - 1);
    const int y0 = std::min(static_cast<int>(gy), kCoarse - 2);
    const double fy = gy - y0;
    for (int x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) * (kCoarse - 1) / (size - 1);
      const int x0 = std::min(static_cast<int>(gx), kCoarse - 2);
      const double fx = gx - x0;
      const double texture =
          (1 - fy) * ((1 - fx) * coarse[y0 * kCoarse + x0] + fx * coarse[y0 * kCoarse + x0 + 1]) +
          fy * ((1 - fx) * coarse[(y0 + 1) * kCoarse + x0] + fx * coarse[(y0 + 1) * kCoarse + x0 + 1]);
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + 20.0 * texture + rng.uniform(-10.0, 10.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

void render_disk(const Point& center, double radius, const std::array<double, 3>& color,
                 Raster& img) {
  constexpr int kSub = 4;
  const int x0 = std::max(0, static_cast<int>(std::floor(center.x - radius - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(center.x + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center.y - radius - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(center.y + radius + 1)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x - 0.5 + (sx + 0.5) / kSub;
          const double py = y - 0.5 + (sy + 0.5) / kSub;
          if ((px - center.x) * (px - center.x) + (py - center.y) * (py - center.y) <= r2) ++inside;
        }
      }
      if (inside == 0) continue;
      const double a = static_cast<double>(inside) / (kSub * kSub);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - a) * img.at(x, y, c) + a * color[c];
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

}  // namespace

std::vector<Sample> synthesize(const SynthSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.samples));
  for (int i = 0; i < spec.samples; ++i) {
    Rng rng(splitmix64(spec.seed + static_cast<std::uint64_t>(i)));
    const int count = static_cast<int>(rng.uniform_int(spec.count_min, spec.count_max));
    std::vector<Point> pts;
    bool placed = false;
    for (int attempt = 0; attempt < kRestarts && !placed; ++attempt) {
      placed = spec.placement == Placement::JitteredGrid ? place_grid(spec, count, rng, pts)
                                                         : place_uniform(spec, count, rng, pts);
    }
    if (!placed) {
      throw std::runtime_error("synthesize: could not place " + std::to_string(count) +
                               " objects at min separation " + std::to_string(spec.min_separation) +
                               " in a " + std::to_string(spec.image_size) + " px image");
    }
    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", i);
    s.id = id;
    s.image = Raster(spec.image_size, spec.image_size);
    render_background(spec, rng, s.image);
    for (const auto& p : pts) {
      const double radius = rng.uniform(spec.radius_min, spec.radius_max);
      std::array<double, 3> color{};
      for (double& c : color) c = rng.uniform(spec.foreground[0], spec.foreground[1]);
      render_disk(p, radius, color, s.image);
    }
    s.points = PointSet(std::move(pts), Frame::Image, spec.image_size, spec.image_size);
    out.push_back(std::move(s));
  }
  assign_density_terciles(out);
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::vector<AnnotationRecord> records;
  std::string manifest = "# mscount dataset v1\n";
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".ppm";
    write_ppm(dir / rel, s.image);
    records.push_back({rel, s.image.width, s.image.height, s.points.points()});
    manifest += s.id + "\t" + rel + "\t" + split_name(s.split) + "\t" +
                density_tag_name(s.density) + "\t" + std::to_string(s.points.size()) + "\n";
  }
  save_annotations(dir / "annotations.json", records);
  write_atomically(dir / "manifest.tsv", [&](std::ostream& out) { out << manifest; });
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const auto records = load_annotations(dir / "annotations.json");
  std::map<std::string, const AnnotationRecord*> by_path;
  for (const auto& r : records) by_path[r.image_path] = &r;

  std::istringstream in(read_text_file(dir / "manifest.tsv"));
  std::string line;
  std::vector<Sample> out;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, '\t')) f.push_back(cell);
    const std::string where = (dir / "manifest.tsv").string() + ":" + std::to_string(lineno);
    if (f.size() != 5) throw std::runtime_error(where + ": expected 5 tab-separated fields");
    auto it = by_path.find(f[1]);
    if (it == by_path.end()) throw std::runtime_error(where + ": no annotation for " + f[1]);
    Sample s;
    s.id = f[0];
    s.image = read_ppm(dir / f[1]);
    const AnnotationRecord& rec = *it->second;
    if (rec.width != s.image.width || rec.height != s.image.height) {
      throw std::runtime_error(where + ": annotation size disagrees with image " + f[1]);
    }
    s.points = rec.point_set();
    s.split = parse_split(f[2]);
    s.density = parse_density_tag(f[3]);
    if (std::to_string(s.points.size()) != f[4]) {
      throw std::runtime_error(where + ": manifest count " + f[4] + " disagrees with annotations");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const Sample*> select_split(const std::vector<Sample>& samples, Split s) {
  std::vector<const Sample*> out;
  for (const auto& x : samples) {
    if (x.split == s) out.push_back(&x);
  }
  return out;
}

}  // namespace mscount
