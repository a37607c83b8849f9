#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "mscount/dataset.hpp"
#include "test_util.hpp"

using namespace mscount;
using mscount::testing::TempDir;

namespace {

Raster noise_raster(int w, int h, std::uint64_t seed) {
  Raster r(w, h);
  Rng rng(seed);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return r;
}

std::vector<Sample> named_samples(int n) {
  std::vector<Sample> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i].id = "s" + std::to_string(i);
  return out;
}

std::map<std::string, Split> assignment(const std::vector<Sample>& samples) {
  std::map<std::string, Split> m;
  for (const auto& s : samples) m[s.id] = s.split;
  return m;
}

}  // namespace

TEST(Ppm, RoundTripAndRejects) {
  TempDir dir("ppm");
  Raster r = noise_raster(7, 5, 1);
  write_ppm(dir / "a.ppm", r);
  EXPECT_EQ(read_ppm(dir / "a.ppm"), r);
  {
    std::ofstream out(dir / "b.ppm", std::ios::binary);
    out << "P5\n2 2\n255\n0000";
  }
  EXPECT_THROW(read_ppm(dir / "b.ppm"), std::runtime_error);
  {
    std::ofstream out(dir / "c.ppm", std::ios::binary);
    out << "P6\n# comment\n2 2\n255\n123";
  }
  EXPECT_THROW(read_ppm(dir / "c.ppm"), std::runtime_error);
}

TEST(Ppm, ReadsCommentsInHeader) {
  TempDir dir("ppm_comment");
  {
    std::ofstream out(dir / "a.ppm", std::ios::binary);
    out << "P6\n# made by hand\n2 1\n255\n";
    out.write("\x01\x02\x03\x04\x05\x06", 6);
  }
  Raster r = read_ppm(dir / "a.ppm");
  EXPECT_EQ(r.width, 2);
  EXPECT_EQ(r.at(1, 0, 2), 6);
}

TEST(RasterToTensor, ScalesToUnitRange) {
  Raster r(2, 1);
  r.at(0, 0, 0) = 255;
  r.at(1, 0, 2) = 51;
  Tensor t = raster_to_tensor(r);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(t.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(t.at(0, 2, 0, 1), 0.2);
  EXPECT_EQ(t.at(0, 1, 0, 0), 0.0);
}

TEST(Tile, GridArithmetic) {
  Raster r = noise_raster(1024, 1024, 2);
  auto tiles = tile(r, PointSet({}, Frame::Image, 1024, 1024), 512);
  ASSERT_EQ(tiles.size(), 4u);
  EXPECT_EQ(tiles[1].id, "tile_r0_c1");
  EXPECT_EQ(tiles[1].image, r.crop(512, 0, 512, 512));

  Raster odd = noise_raster(1030, 1030, 3);
  EXPECT_EQ(tile(odd, PointSet({}, Frame::Image, 1030, 1030), 512).size(), 4u);

  Raster small = noise_raster(500, 600, 4);
  EXPECT_THROW(tile(small, PointSet({}, Frame::Image, 500, 600), 512), std::invalid_argument);
}

TEST(Tile, RebasesPointsHalfOpen) {
  Raster r(1024, 1024);
  PointSet pts({{513, 10}, {512, 512}, {511.9, 0}}, Frame::Image, 1024, 1024);
  auto tiles = tile(r, pts, 512, "ortho");
  EXPECT_EQ(tiles[1].id, "ortho_r0_c1");
  ASSERT_EQ(tiles[1].points.size(), 1u);
  EXPECT_EQ(tiles[1].points.points()[0], (Point{1, 10}));
  ASSERT_EQ(tiles[3].points.size(), 1u);
  EXPECT_EQ(tiles[3].points.points()[0], (Point{0, 0}));
  ASSERT_EQ(tiles[0].points.size(), 1u);
  EXPECT_EQ(tiles[0].points.points()[0], (Point{511.9, 0}));
}

TEST(Tile, UnionOfTilesRestoresPointsOutsideMargins) {
  Rng rng(5);
  const int w = 70, h = 50, patch = 16;
  std::vector<Point> pts;
  for (int i = 0; i < 300; ++i) pts.push_back({rng.uniform(0, w), rng.uniform(0, h)});
  auto tiles = tile(Raster(w, h), PointSet(pts, Frame::Image, w, h), patch);
  std::multiset<std::pair<double, double>> back, expect;
  for (const auto& t : tiles) {
    const int r = std::stoi(t.id.substr(t.id.find("_r") + 2));
    const int c = std::stoi(t.id.substr(t.id.find("_c") + 2));
    for (const auto& p : t.points.points()) back.insert({p.x + c * patch, p.y + r * patch});
  }
  for (const auto& p : pts) {
    if (p.x < (w / patch) * patch && p.y < (h / patch) * patch) expect.insert({p.x, p.y});
  }
  EXPECT_EQ(back, expect);
}

TEST(Split, ExactProportions) {
  auto s = named_samples(3370);
  split(s, {0.8516, 0.0742, 0.0742}, 1);
  int counts[3] = {0, 0, 0};
  for (const auto& x : s) ++counts[static_cast<int>(x.split)];
  EXPECT_EQ(counts[0], 2870);
  EXPECT_EQ(counts[1], 250);
  EXPECT_EQ(counts[2], 250);

  auto all = named_samples(17);
  split(all, {1, 0, 0}, 9);
  for (const auto& x : all) EXPECT_EQ(x.split, Split::Train);

  auto two = named_samples(200);
  split(two, {0.7, 0.1, 0.2}, 1);
  EXPECT_EQ(select_split(two, Split::Train).size(), 140u);
  EXPECT_EQ(select_split(two, Split::Val).size(), 20u);
  EXPECT_EQ(select_split(two, Split::Test).size(), 40u);
}

TEST(Split, DeterministicAndSeedDependent) {
  auto a = named_samples(100), b = named_samples(100), c = named_samples(100);
  split(a, {0.6, 0.2, 0.2}, 4);
  split(b, {0.6, 0.2, 0.2}, 4);
  split(c, {0.6, 0.2, 0.2}, 5);
  EXPECT_EQ(assignment(a), assignment(b));
  EXPECT_NE(assignment(a), assignment(c));
}

TEST(Split, RejectsBadFractions) {
  auto s = named_samples(4);
  EXPECT_THROW(split(s, {0.5, 0.5, 0.1}, 1), std::invalid_argument);
  EXPECT_THROW(split(s, {1.2, -0.2, 0}, 1), std::invalid_argument);
}

TEST(Split, InsertionMovesOnlyBoundarySamples) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(5, 60));
    auto before = named_samples(n);
    auto after = named_samples(n);
    Sample extra;
    extra.id = "extra" + std::to_string(trial);
    after.push_back(extra);
    const std::array<double, 3> f = {0.6, 0.25, 0.15};
    split(before, f, 3);
    split(after, f, 3);
    const auto a = assignment(before);
    const auto b = assignment(after);
    int moved = 0;
    for (const auto& [id, s] : a) moved += b.at(id) != s;
    EXPECT_LE(moved, 2) << "n=" << n;
  }
}

TEST(Synthesize, FixedCountAndDeterminism) {
  SynthSpec spec;
  spec.count_min = spec.count_max = 5;
  spec.samples = 6;
  auto a = synthesize(spec);
  auto b = synthesize(spec);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].points.size(), 5u);
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].points.points(), b[i].points.points());
    EXPECT_EQ(a[i].image.width, 64);
  }
  spec.seed = 2;
  EXPECT_NE(synthesize(spec)[0].image, a[0].image);
}

TEST(Synthesize, MinimumSeparationHolds) {
  SynthSpec spec;
  spec.placement = Placement::Uniform;
  spec.min_separation = 6;
  spec.samples = 20;
  for (const auto& s : synthesize(spec)) {
    const auto& p = s.points.points();
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        EXPECT_GE(std::hypot(p[i].x - p[j].x, p[i].y - p[j].y), 6.0);
      }
  }
}

TEST(Synthesize, RandomSpecsStayWithinBounds) {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    SynthSpec spec;
    spec.seed = rng.next();
    spec.samples = 4;
    spec.image_size = static_cast<int>(rng.uniform_int(4, 10)) * 8;
    spec.placement = rng.uniform() < 0.5 ? Placement::Uniform : Placement::JitteredGrid;
    spec.radius_min = rng.uniform(1.0, 3.0);
    spec.radius_max = spec.radius_min + rng.uniform(0.0, 2.0);
    spec.grid_cell = 16;
    spec.jitter = rng.uniform(0.0, 3.0);
    spec.min_separation = rng.uniform(0.0, 9.0);
    const int cells = (spec.image_size / 16) * (spec.image_size / 16);
    spec.count_min = static_cast<int>(rng.uniform_int(0, std::min(cells, 8)));
    spec.count_max = static_cast<int>(rng.uniform_int(spec.count_min, std::min(cells, 12)));
    spec.background = {20, 90};
    spec.foreground = {160, 240};
    try {
      spec.validate();
    } catch (const std::invalid_argument&) {
      continue;
    }
    for (const auto& s : synthesize(spec)) {
      EXPECT_EQ(s.image.width, spec.image_size);
      EXPECT_EQ(s.image.height, spec.image_size);
      const int n = static_cast<int>(s.points.size());
      EXPECT_GE(n, spec.count_min);
      EXPECT_LE(n, spec.count_max);
      const auto& p = s.points.points();
      for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_GE(p[i].x, 0.0);
        EXPECT_LT(p[i].x, spec.image_size);
        for (std::size_t j = 0; j < i; ++j) {
          EXPECT_GE(std::hypot(p[i].x - p[j].x, p[i].y - p[j].y), spec.min_separation);
        }
      }
    }
  }
}

TEST(Synthesize, DisksAreBrighterThanBackground) {
  SynthSpec spec;
  spec.samples = 3;
  spec.background = {20, 60};
  spec.foreground = {200, 240};
  for (const auto& s : synthesize(spec)) {
    for (const auto& p : s.points.points()) {
      const int x = static_cast<int>(p.x), y = static_cast<int>(p.y);
      EXPECT_GT(s.image.at(x, y, 0), 120) << s.id;
    }
  }
}

TEST(Synthesize, DensityTercilesAndRejections) {
  SynthSpec spec;
  spec.samples = 30;
  auto s = synthesize(spec);
  std::set<DensityTag> tags;
  for (const auto& x : s) tags.insert(x.density);
  EXPECT_EQ(tags.size(), 3u);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[i].points.size() < s[j].points.size()) {
        EXPECT_LE(static_cast<int>(s[i].density), static_cast<int>(s[j].density));
      }
    }

  SynthSpec crowded;
  crowded.count_max = 17;  // 16 grid cells in a 64 px image
  EXPECT_THROW(crowded.validate(), std::invalid_argument);
  SynthSpec packed;
  packed.placement = Placement::Uniform;
  packed.count_min = packed.count_max = 60;
  packed.min_separation = 12;
  EXPECT_THROW(synthesize(packed), std::invalid_argument);
}

TEST(DatasetDirectory, RoundTrip) {
  TempDir dir("dataset");
  SynthSpec spec;
  spec.samples = 5;
  auto s = synthesize(spec);
  split(s, {0.6, 0.2, 0.2}, 1);
  save_dataset(dir.path(), s);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "annotations.json"));
  auto back = load_dataset(dir.path());
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].id, s[i].id);
    EXPECT_EQ(back[i].image, s[i].image);
    EXPECT_EQ(back[i].points.points(), s[i].points.points());
    EXPECT_EQ(back[i].split, s[i].split);
    EXPECT_EQ(back[i].density, s[i].density);
  }
}

TEST(DatasetDirectory, MissingManifestIsRejected) {
  TempDir dir("dataset_empty");
  EXPECT_THROW(load_dataset(dir.path()), std::runtime_error);
}
