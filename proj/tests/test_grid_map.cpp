#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "arbor_slam/grid_map.hpp"
#include "oracles.hpp"

using namespace arbor_slam;

namespace {

GridMeta meta_of(double res, Eigen::Vector2d origin, int w, int h) {
  GridMeta m;
  m.resolution = res;
  m.origin = origin;
  m.width = w;
  m.height = h;
  return m;
}

FilteredScan2D scan_of(std::initializer_list<std::pair<double, double>> range_azimuth) {
  FilteredScan2D s;
  for (const auto& [r, a] : range_azimuth) s.bins.push_back({r, a, true});
  return s;
}

std::set<std::pair<int, int>> as_set(const std::vector<CellIndex>& cells) {
  std::set<std::pair<int, int>> out;
  for (const auto& c : cells) out.insert({c.i, c.j});
  return out;
}

// Cells crossed by a segment, found by dense sampling instead of a grid walk.
std::vector<CellIndex> sampled_cells(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const GridMeta& meta) {
  std::vector<CellIndex> out;
  const int n = 20000;
  for (int k = 0; k <= n; ++k) {
    const CellIndex c = cell_of(a + (b - a) * (double(k) / n), meta);
    if (out.empty() || !(out.back() == c)) out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(WorldToCell, FirstCellBoundaryAndOutside) {
  const GridMeta m = meta_of(0.1, {0, 0}, 10, 10);
  EXPECT_EQ(world_to_cell({0.05, 0.05}, m), (CellIndex{0, 0}));
  // An interior cell corner belongs to the cell above/right of it. Quarter-metre cells keep the corner exact.
  EXPECT_EQ(world_to_cell({0.75, 1.25}, meta_of(0.25, {0, 0}, 10, 10)), (CellIndex{3, 5}));
  EXPECT_FALSE(world_to_cell({-0.01, 0.0}, m).has_value());
  EXPECT_FALSE(world_to_cell({1.0, 0.5}, m).has_value());
}

TEST(LogOdds, ProbabilityStaysInOpenInterval) {
  for (double l : {-4.0, -1.0, 0.0, 0.85, 4.0}) {
    const double p = log_odds_to_probability(l);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_DOUBLE_EQ(log_odds_to_probability(0.0), 0.5);
}

TEST(LogOdds, ParamsValidation) {
  LogOddsParams p;
  p.occ_threshold = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.hit = -0.1;
  EXPECT_THROW(p.validate(), Error);
}

TEST(UpdateOccupancy, SingleBeamCorridor) {
  OccupancyGrid g(meta_of(0.1, {0, 0}, 20, 5), {});
  update_occupancy(g, {0.05, 0.25, 0.0}, scan_of({{1.0, 0.0}}));
  // Sensor cell (0,2) through cell (9,2) are free, endpoint (10,2) gets one hit.
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(g.log_odds({i, 2}), g.params().free) << i;
  EXPECT_DOUBLE_EQ(g.log_odds({10, 2}), g.params().hit);
  EXPECT_DOUBLE_EQ(g.log_odds({11, 2}), 0.0);
  EXPECT_DOUBLE_EQ(g.log_odds({5, 3}), 0.0);
}

TEST(UpdateOccupancy, RepeatedScanReplaysIncrementsUntilClamping) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> r(0.3, 2.0), a(-3.1, 3.1);
  const GridMeta meta = meta_of(0.05, {-2.5, -2.5}, 100, 100);
  for (int trial = 0; trial < 10; ++trial) {
    FilteredScan2D scan;
    for (int k = 0; k < 30; ++k) scan.bins.push_back({r(rng), a(rng), true});
    const Pose2D pose{0.013, -0.021, 0.3};
    const LogOddsParams params;

    // Oracle: per-cell increments from sampled traversal, frees first then hits, clamped per application.
    std::map<std::pair<int, int>, double> expected;
    for (int pass = 0; pass < 6; ++pass) {
      std::vector<CellIndex> hits;
      for (const auto& p : scan_to_world(scan, pose).points) {
        const CellIndex end = cell_of(p, meta);
        for (const auto& c : sampled_cells(pose.translation(), p, meta)) {
          if (c == end) break;
          auto& v = expected[{c.i, c.j}];
          v = std::clamp(v + params.free, params.min, params.max);
        }
        hits.push_back(end);
      }
      for (const auto& c : hits) {
        auto& v = expected[{c.i, c.j}];
        v = std::clamp(v + params.hit, params.min, params.max);
      }
    }
    OccupancyGrid g(meta, params);
    for (int pass = 0; pass < 6; ++pass) update_occupancy(g, pose, scan);
    for (int j = 0; j < meta.height; ++j) {
      for (int i = 0; i < meta.width; ++i) {
        const auto it = expected.find({i, j});
        EXPECT_NEAR(g.log_odds({i, j}), it == expected.end() ? 0.0 : it->second, 1e-12) << i << "," << j;
      }
    }
  }
}

TEST(UpdateOccupancy, EmptyScanLeavesGridUnchanged) {
  OccupancyGrid g(meta_of(0.1, {0, 0}, 10, 10), {});
  FilteredScan2D s;
  s.bins.resize(360);
  update_occupancy(g, {0.5, 0.5, 0.0}, s);
  for (double v : g.cells()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.revision(), 0u);
}

TEST(UpdateOccupancy, PoseOutsideGridIsAnError) {
  OccupancyGrid g(meta_of(0.1, {0, 0}, 10, 10), {});
  try {
    update_occupancy(g, {5.0, 0.5, 0.0}, scan_of({{1.0, 0.0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPoseOutOfGrid);
  }
}

TEST(UpdateOccupancy, ValuesStayClamped) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> r(0.1, 3.0), a(-3.1, 3.1);
  OccupancyGrid g(meta_of(0.05, {-2, -2}, 80, 80), {});
  for (int n = 0; n < 100; ++n) {
    FilteredScan2D s;
    for (int k = 0; k < 20; ++k) s.bins.push_back({r(rng), a(rng), true});
    update_occupancy(g, {0, 0, 0}, s);
  }
  for (double v : g.cells()) {
    EXPECT_GE(v, g.params().min);
    EXPECT_LE(v, g.params().max);
  }
}

TEST(UpdateOccupancy, DisjointBeamsNeverRemoveOccupiedCells) {
  // Beams far apart in angle cannot carve through each other's endpoints.
  OccupancyGrid g(meta_of(0.05, {-3, -3}, 120, 120), {});
  const Pose2D pose{0.0, 0.0, 0.0};
  const auto first = scan_of({{1.0, 0.0}, {1.5, 1.0}, {2.0, 2.5}});
  update_occupancy(g, pose, first);
  const auto before = as_set(oracle::occupied(g));
  update_occupancy(g, pose, scan_of({{1.2, -1.0}, {0.7, -2.5}}));
  const auto after = as_set(oracle::occupied(g));
  for (const auto& c : before) EXPECT_TRUE(after.count(c));
}

TEST(OccupiedCells, FreshGridIsEmpty) {
  LogOddsParams p;
  p.occ_threshold = 0.5;
  EXPECT_TRUE(occupied_cells(OccupancyGrid(meta_of(0.1, {0, 0}, 5, 5), p)).points.empty());
}

TEST(OccupiedCells, SingleSaturatedCell) {
  OccupancyGrid g(meta_of(0.1, {1, 2}, 5, 5), {});
  g.set_log_odds({3, 1}, 100.0);
  EXPECT_DOUBLE_EQ(g.log_odds({3, 1}), 4.0);
  const auto pts = occupied_cells(g);
  ASSERT_EQ(pts.points.size(), 1u);
  EXPECT_EQ(pts.frame, Frame::kWorld);
  EXPECT_NEAR(pts.points[0].x(), 1.35, 1e-12);
  EXPECT_NEAR(pts.points[0].y(), 2.15, 1e-12);
}

TEST(OccupiedCells, SingleScanEqualsRasterizedEndpoints) {
  OccupancyGrid g(meta_of(0.05, {-3, -3}, 120, 120), {});
  FilteredScan2D scan;
  for (int k = 0; k < 36; ++k) scan.bins.push_back({1.0 + 0.04 * k, -3.0 + k * (6.0 / 36), true});
  const Pose2D pose{0.1, -0.2, 0.4};
  update_occupancy(g, pose, scan);
  std::set<std::pair<int, int>> expected;
  for (const auto& p : scan_to_world(scan, pose).points) {
    const auto c = cell_of(p, g.meta());
    expected.insert({c.i, c.j});
  }
  EXPECT_EQ(as_set(oracle::occupied(g)), expected);
}

TEST(DistanceTransform, AxisDistanceAndZeroSet) {
  OccupancyGrid g(meta_of(0.05, {0, 0}, 20, 20), {});
  g.set_log_odds({5, 7}, 4.0);
  const auto f = distance_transform(g);
  EXPECT_DOUBLE_EQ(f.at({8, 7}), 3 * 0.05);
  EXPECT_DOUBLE_EQ(f.at({5, 7}), 0.0);
  EXPECT_NEAR(f.at({8, 11}), 5 * 0.05, 1e-15);
}

TEST(DistanceTransform, NoOccupiedCellsIsAnError) {
  try {
    (void)distance_transform(OccupancyGrid(meta_of(0.05, {0, 0}, 4, 4), {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoOccupiedCells);
  }
}

TEST(DistanceTransform, MatchesBruteForceOnRandomGrids) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 32);
  std::uniform_real_distribution<double> density(0.002, 0.3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = oracle::random_grid(rng, size(rng), size(rng), density(rng));
    const auto f = distance_transform(g);
    for (int j = 0; j < g.meta().height; ++j)
      for (int i = 0; i < g.meta().width; ++i) EXPECT_DOUBLE_EQ(f.at({i, j}), oracle::brute_cell_distance(g, {i, j}));
  }
}

TEST(DistanceTransform, LipschitzOnTheGridGraph) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = oracle::random_grid(rng, 24, 17, 0.02);
    const auto f = distance_transform(g);
    const double bound = g.meta().resolution * std::sqrt(2.0) + 1e-12;
    for (int j = 0; j + 1 < 17; ++j) {
      for (int i = 0; i + 1 < 24; ++i) {
        EXPECT_LE(std::abs(f.at({i, j}) - f.at({i + 1, j})), bound);
        EXPECT_LE(std::abs(f.at({i, j}) - f.at({i, j + 1})), bound);
        EXPECT_LE(std::abs(f.at({i, j}) - f.at({i + 1, j + 1})), bound);
      }
    }
  }
}

TEST(DistanceField, BilinearSampleAndBorderClamp) {
  OccupancyGrid g(meta_of(1.0, {0, 0}, 3, 1), {});
  g.set_log_odds({0, 0}, 4.0);
  const auto f = distance_transform(g);
  EXPECT_DOUBLE_EQ(f.sample({0.5, 0.5}), 0.0);
  EXPECT_DOUBLE_EQ(f.sample({1.0, 0.5}), 0.5);
  EXPECT_DOUBLE_EQ(f.sample({1.75, 0.2}), 1.25);
  EXPECT_DOUBLE_EQ(f.sample({10.0, 0.5}), 2.0);
  EXPECT_DOUBLE_EQ(f.sample({-4.0, -3.0}), 0.0);
}

TEST(EnsureCapacity, InsideBoxLeavesGridUnchanged) {
  OccupancyGrid g(meta_of(0.1, {0, 0}, 10, 10), {});
  g.set_log_odds({2, 3}, 1.0);
  const auto rev = g.revision();
  ensure_capacity(g, {{0.2, 0.2}, {0.8, 0.9}});
  EXPECT_EQ(g.meta().width, 10);
  EXPECT_EQ(g.meta().height, 10);
  EXPECT_EQ(g.revision(), rev);
  EXPECT_DOUBLE_EQ(g.log_odds({2, 3}), 1.0);
}

TEST(EnsureCapacity, GrowsPastPositiveEdgePreservingWorldValues) {
  OccupancyGrid g(meta_of(0.05, {-1, -1}, 40, 40), {});
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> v(-4, 4);
  for (int j = 0; j < 40; ++j)
    for (int i = 0; i < 40; ++i) g.set_log_odds({i, j}, v(rng));
  const OccupancyGrid before = g;
  ensure_capacity(g, {{-0.5, -0.5}, {2.0, 0.5}});  // 1 m past the +x edge
  EXPECT_EQ(g.meta().width, 40 + 20);
  EXPECT_EQ(g.meta().height, 40);
  for (int j = 0; j < 40; ++j) {
    for (int i = 0; i < 40; ++i) {
      const auto c = world_to_cell(before.meta().cell_center({i, j}), g.meta());
      ASSERT_TRUE(c);
      EXPECT_EQ(g.log_odds(*c), before.log_odds({i, j}));
    }
  }
}

TEST(EnsureCapacity, GrowsTowardsNegativeCornerTransparently) {
  OccupancyGrid g(meta_of(0.05, {0, 0}, 10, 10), {});
  g.set_log_odds({1, 2}, 4.0);
  g.set_log_odds({9, 9}, 4.0);
  const auto before = occupied_cells(g).points;
  ensure_capacity(g, {{-0.33, -0.71}, {0.1, 0.1}});
  EXPECT_LE(g.meta().origin.x(), -0.33);
  EXPECT_LE(g.meta().origin.y(), -0.71);
  const auto after = occupied_cells(g).points;
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_LT((after[k] - before[k]).norm(), 1e-12);
}

TEST(EnsureCapacity, EmptyGridIsSizedToTheBox) {
  auto g = OccupancyGrid::empty(0.1, {});
  ensure_capacity(g, {{-1, -2}, {1, 2}});
  EXPECT_EQ(g.meta().origin, Eigen::Vector2d(-1, -2));
  EXPECT_TRUE(world_to_cell({-1, -2}, g.meta()));
  EXPECT_TRUE(world_to_cell({1, 2}, g.meta()));
  EXPECT_LE(g.meta().width, 21);
  EXPECT_LE(g.meta().height, 41);
}

TEST(Pgm, RoundTripKeepsTernaryClasses) {
  OccupancyGrid g(meta_of(0.05, {-1.25, 0.5}, 7, 4), {});
  g.set_log_odds({0, 0}, 4.0);
  g.set_log_odds({6, 3}, 2.0);
  g.set_log_odds({3, 2}, -3.0);
  g.set_log_odds({4, 2}, 0.3);
  const auto path = (std::filesystem::temp_directory_path() / "arbor_pgm_roundtrip.pgm").string();
  write_pgm(g, path);
  const auto back = read_pgm(path);
  EXPECT_EQ(back.meta().width, 7);
  EXPECT_EQ(back.meta().height, 4);
  EXPECT_DOUBLE_EQ(back.meta().resolution, 0.05);
  EXPECT_EQ(back.meta().origin, g.meta().origin);
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 7; ++i) {
      EXPECT_EQ(back.occupied({i, j}), g.occupied({i, j}));
      EXPECT_EQ(back.free({i, j}), g.free({i, j}));
    }
  }
  std::ifstream raw(path, std::ios::binary);
  std::string header((std::istreambuf_iterator<char>(raw)), {});
  EXPECT_EQ(header.substr(0, 11), "P5\n7 4\n255\n");
  // Top image row is the highest y: cell (6,3) is the last pixel of the first row.
  EXPECT_EQ(static_cast<unsigned char>(header[11 + 6]), 0);
  EXPECT_EQ(static_cast<unsigned char>(header[11 + 3 * 7 + 0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(header[11 + 1 * 7 + 3]), 255);
  EXPECT_EQ(static_cast<unsigned char>(header[11 + 1 * 7 + 4]), 127);
}
