#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mscount/confmap.hpp"
#include "mscount/metrics.hpp"
#include "mscount/tensor.hpp"

namespace mscount {

/// 8-bit RGB raster, interleaved row-major.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Raster() = default;
  Raster(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int ch) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  std::uint8_t at(int x, int y, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }
  Raster crop(int x0, int y0, int w, int h) const;

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Binary portable pixmap (P6, maxval 255).
Raster read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Raster& raster);

/// (1, 3, h, w) tensor with channel values scaled to [0, 1].
Tensor raster_to_tensor(const Raster& raster);
/// Stacks equally sized rasters into an (n, 3, h, w) tensor.
Tensor rasters_to_batch(const std::vector<const Raster*>& rasters);

enum class Split { Train, Val, Test, Unassigned };
const char* split_name(Split s);
Split parse_split(const std::string& s);

enum class DensityTag { Low, Medium, High, Unassigned };
const char* density_tag_name(DensityTag d);
DensityTag parse_density_tag(const std::string& s);

struct Sample {
  std::string id;
  Raster image;
  PointSet points;  // image space, frame = raster size
  Split split = Split::Unassigned;
  DensityTag density = DensityTag::Unassigned;
};

/// Cuts a raster into non-overlapping patch x patch tiles in row-major tile
/// order; right and bottom remainders narrower than a patch are dropped.
/// Points go to the tile whose half-open extent contains them, rebased to
/// tile coordinates. Tile ids are "<prefix>_r<row>_c<col>".
/// Throws std::invalid_argument if the raster is smaller than one patch.
std::vector<Sample> tile(const Raster& raster, const PointSet& points, int patch = 512,
                         const std::string& id_prefix = "tile");

/// Assigns train/val/test tags. Samples are ordered by a hash of
/// (seed, sample id) and the first round(f0 * n) become train, the next
/// round(f1 * n) val, the rest test. Inserting a sample can move at most the
/// samples sitting at the two partition boundaries besides itself.
/// Throws std::invalid_argument unless fractions are non-negative and sum to 1 +- 1e-9.
void split(std::vector<Sample>& samples, const std::array<double, 3>& fractions,
           std::uint64_t seed);

/// Tags samples low/medium/high by count terciles of the whole set.
void assign_density_terciles(std::vector<Sample>& samples);

enum class Placement { JitteredGrid, Uniform };

struct SynthSpec {
  int image_size = 64;
  int samples = 20;
  int count_min = 5;
  int count_max = 15;
  double radius_min = 2.5;
  double radius_max = 4.0;
  Placement placement = Placement::JitteredGrid;
  /// Jittered grid: cell size in pixels and maximum center offset from the cell center.
  int grid_cell = 16;
  double jitter = 4.0;
  double min_separation = 8.0;
  std::array<int, 2> background = {50, 140};
  std::array<int, 2> foreground = {110, 190};
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument for inconsistent settings, including
  /// counts that cannot fit (more objects than grid cells, or a packing
  /// bound violated for uniform placement).
  void validate() const;
};

/// Anti-aliased disks on a textured noisy background; points are the disk
/// centers. Sample i draws from a generator seeded with splitmix64(seed + i).
/// Density tags come from count terciles. Throws std::runtime_error when
/// placement fails after bounded retries.
std::vector<Sample> synthesize(const SynthSpec& spec);

// Dataset directory layout:
//   manifest.tsv       "# mscount dataset v1" then one line per sample:
//                      id <TAB> image path <TAB> split <TAB> density <TAB> count
//   annotations.json   annotation document (see confmap.hpp)
//   images/<id>.ppm
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

std::vector<const Sample*> select_split(const std::vector<Sample>& samples, Split s);

}  // namespace mscount
