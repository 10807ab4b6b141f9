#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "arbor_slam/orchard_simulator.hpp"
#include "arbor_slam/scan_matcher.hpp"
#include "oracles.hpp"

using namespace arbor_slam;

namespace {

GridMeta square_meta(Eigen::Vector2d center, double half, double res = 0.05) {
  GridMeta m;
  m.resolution = res;
  m.origin = center - Eigen::Vector2d::Constant(half);
  m.width = m.height = static_cast<int>(std::round(2 * half / res));
  return m;
}

struct SelfMatchCase {
  Pose2D truth;
  FilteredScan2D scan;
  DistanceField field;
};

// Orchard scan rasterized into an empty grid at its own pose.
SelfMatchCase self_match_case(std::uint64_t seed) {
  OrchardLayout layout;
  layout.jitter = 0.1;
  layout.seed = seed;
  const WorldModel world = generate_world(layout);
  std::mt19937_64 rng(seed * 7 + 1);
  std::uniform_real_distribution<double> ux(0.5, 10.0), uy(0.5, 5.5), ut(-3.14, 3.14);
  Pose2D p{ux(rng), uy(rng), ut(rng)};
  const auto clear = [&](const Pose2D& q) {
    for (const auto& o : world.obstacles)
      if ((o.center - q.translation()).norm() < 0.5) return false;
    return true;
  };
  while (!clear(p)) p = {ux(rng), uy(rng), ut(rng)};
  SensorSpec spec;
  spec.seed = seed;
  spec.outlier_rate = 0.0;
  FilteredScan2D scan = filter_scan(simulate_scan(world, p, spec), SliceBand{}, 360);
  OccupancyGrid grid(square_meta(p.translation(), 25.0), {});
  update_occupancy(grid, p, scan);
  return {p, scan, distance_transform(grid)};
}

}  // namespace

TEST(DirectedMhd, ZeroOnOccupiedCellCenters) {
  OccupancyGrid g(square_meta({0, 0}, 1.0), {});
  PointSet2D pts;
  pts.frame = Frame::kWorld;
  for (CellIndex c : {CellIndex{3, 4}, CellIndex{10, 30}, CellIndex{22, 5}}) {
    g.set_log_odds(c, 4.0);
    pts.points.push_back(g.meta().cell_center(c));
  }
  EXPECT_NEAR(directed_mhd(pts, distance_transform(g), 0.8), 0.0, 1e-12);
}

TEST(DirectedMhd, PlainMeanWithFullFraction) {
  GridMeta m = square_meta({0, 0}, 5.0, 1.0);
  OccupancyGrid g(m, {});
  g.set_log_odds({0, 0}, 4.0);
  const auto f = distance_transform(g);
  PointSet2D pts;
  pts.frame = Frame::kWorld;
  pts.points = {m.cell_center({1, 0}), m.cell_center({3, 0})};
  EXPECT_DOUBLE_EQ(directed_mhd(pts, f, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(directed_mhd(pts, f, 0.5), 1.0);
}

TEST(DirectedMhd, EmptySetAndWrongFrameAreErrors) {
  OccupancyGrid g(square_meta({0, 0}, 1.0), {});
  g.set_log_odds({1, 1}, 4.0);
  const auto f = distance_transform(g);
  PointSet2D empty;
  empty.frame = Frame::kWorld;
  try {
    (void)directed_mhd(empty, f, 0.8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyScan);
  }
  PointSet2D sensor;
  sensor.points = {{0.0, 0.0}};
  EXPECT_THROW((void)directed_mhd(sensor, f, 0.8), Error);
}

TEST(DirectedMhd, MatchesBruteForceWithinHalfResolution) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_grid(rng, 32, 32, 0.05);
    const GridMeta& m = g.meta();
    std::uniform_real_distribution<double> ux(m.origin.x(), m.max_corner().x()), uy(m.origin.y(), m.max_corner().y());
    PointSet2D pts;
    pts.frame = Frame::kWorld;
    std::vector<double> exact;
    for (int k = 0; k < 20; ++k) {
      pts.points.emplace_back(ux(rng), uy(rng));
      exact.push_back(oracle::brute_point_distance(g, pts.points.back()));
    }
    EXPECT_NEAR(directed_mhd(pts, distance_transform(g), 0.8), oracle::trimmed_mean(exact, 0.8), m.resolution / 2);
  }
}

TEST(DirectedMhd, NonDecreasingInKeptFraction) {
  std::mt19937_64 rng(23);
  const auto g = oracle::random_grid(rng, 40, 40, 0.03);
  const auto f = distance_transform(g);
  std::uniform_real_distribution<double> u(-0.5, 2.5);
  PointSet2D pts;
  pts.frame = Frame::kWorld;
  for (int k = 0; k < 57; ++k) pts.points.emplace_back(u(rng), u(rng));
  double prev = 0.0;
  for (double k = 0.05; k <= 1.0 + 1e-12; k += 0.05) {
    const double v = directed_mhd(pts, f, std::min(k, 1.0));
    EXPECT_GE(v, prev - 1e-15);
    EXPECT_GE(v, 0.0);
    prev = v;
  }
}

TEST(TrimmedCount, CeilingOfFraction) {
  EXPECT_EQ(trimmed_count(10, 0.8), 8u);
  EXPECT_EQ(trimmed_count(11, 0.8), 9u);
  EXPECT_EQ(trimmed_count(3, 0.01), 1u);
  EXPECT_EQ(trimmed_count(7, 1.0), 7u);
}

TEST(MatchScan, SelfMatchFixedPoint) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto c = self_match_case(seed);
    const MatchParams params;
    const auto r = match_scan(c.truth, c.scan, c.field, params);
    EXPECT_LE(std::abs(r.pose.x - c.truth.x), params.finest_step_xy() + 1e-12);
    EXPECT_LE(std::abs(r.pose.y - c.truth.y), params.finest_step_xy() + 1e-12);
    EXPECT_LE(std::abs(wrap_angle(r.pose.theta - c.truth.theta)), params.finest_step_theta() + 1e-12);
    EXPECT_LE(r.score, c.field.meta().resolution);
    EXPECT_TRUE(r.converged);
  }
}

TEST(MatchScan, RecoversOffsetGuess) {
  // Guess offset (0.3, -0.2, 5 deg): on-lattice, so the truth is itself a candidate.
  const MatchParams params;
  int within_one_step = 0;
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto c = self_match_case(seed);
    const Pose2D guess{c.truth.x + 0.3, c.truth.y - 0.2, wrap_angle(c.truth.theta + deg2rad(5.0))};
    const auto r = match_scan(guess, c.scan, c.field, params);
    const double ex = std::abs(r.pose.x - c.truth.x), ey = std::abs(r.pose.y - c.truth.y);
    const double et = std::abs(wrap_angle(r.pose.theta - c.truth.theta));
    EXPECT_LE(std::max(ex, ey), c.field.meta().resolution / 2);
    EXPECT_LE(et, deg2rad(0.5));
    within_one_step += ex <= params.finest_step_xy() + 1e-9 && ey <= params.finest_step_xy() + 1e-9 &&
                       et <= params.finest_step_theta() + 1e-9;
  }
  EXPECT_GE(within_one_step, 8);
}

TEST(MatchScan, OutliersCostAtMostTwiceTheCleanError) {
  const MatchParams params;
  double clean = 0.0, dirty = 0.0;
  for (std::uint64_t seed = 30; seed < 50; ++seed) {
    const auto c = self_match_case(seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), r(0.3, 20.0), coin(0.0, 1.0);
    const Pose2D guess{c.truth.x + 0.3 * u(rng), c.truth.y + 0.3 * u(rng), c.truth.theta + deg2rad(5.0) * u(rng)};
    FilteredScan2D noisy = c.scan;
    for (auto& b : noisy.bins)
      if (b.valid && coin(rng) < 0.2) b.range = r(rng);
    clean += (match_scan(guess, c.scan, c.field, params).pose.translation() - c.truth.translation()).norm();
    dirty += (match_scan(guess, noisy, c.field, params).pose.translation() - c.truth.translation()).norm();
  }
  EXPECT_LE(dirty, 2.0 * clean);
}

TEST(MatchScan, NeverWorseThanTheSeed) {
  for (std::uint64_t seed = 60; seed < 65; ++seed) {
    const auto c = self_match_case(seed);
    const Pose2D guess{c.truth.x - 0.17, c.truth.y + 0.08, c.truth.theta - 0.05};
    const MatchParams params;
    const auto r = match_scan(guess, c.scan, c.field, params);
    EXPECT_LE(r.score, directed_mhd(scan_to_world(c.scan, guess), c.field, params.k_fraction));
    EXPECT_LE(std::abs(r.pose.x - guess.x), params.search_radius_xy + 1e-9);
    EXPECT_LE(std::abs(r.pose.y - guess.y), params.search_radius_xy + 1e-9);
    EXPECT_LE(std::abs(wrap_angle(r.pose.theta - guess.theta)), params.search_radius_theta + 1e-9);
  }
}

TEST(MatchScan, DeterministicBitForBit) {
  const auto c = self_match_case(5);
  const Pose2D guess{c.truth.x + 0.11, c.truth.y - 0.07, c.truth.theta + 0.03};
  const auto a = match_scan(guess, c.scan, c.field, MatchParams{});
  const auto b = match_scan(guess, c.scan, c.field, MatchParams{});
  EXPECT_EQ(a.pose, b.pose);
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.candidates_evaluated, b.candidates_evaluated);
}

TEST(MatchScan, ArgminFollowsAGlobalRigidMotion) {
  // Same world seen from a rigidly moved frame: build both maps, match, compare in a common frame.
  OrchardLayout layout;
  layout.jitter = 0.1;
  layout.seed = 77;
  const WorldModel world = generate_world(layout);
  const Pose2D T{0.8, -1.3, 0.4};
  WorldModel moved = world;
  for (auto& o : moved.obstacles) o.center = transform_point(T, o.center);
  const Pose2D p{4.2, 2.9, 0.3};
  const Pose2D q = compose(T, p);
  SensorSpec spec;
  spec.outlier_rate = 0.0;
  spec.range_sigma = 0.0;
  spec.angle_sigma = 0.0;
  const auto scan = filter_scan(simulate_scan(world, p, spec), SliceBand{}, 360);

  const auto field_for = [&](const WorldModel& w, const Pose2D& at) {
    OccupancyGrid g(square_meta(at.translation(), 20.0), {});
    update_occupancy(g, at, filter_scan(simulate_scan(w, at, spec), SliceBand{}, 360));
    return distance_transform(g);
  };
  const MatchParams params;
  const Pose2D offset{0.12, -0.09, 0.04};
  const auto a = match_scan(compose(p, offset), scan, field_for(world, p), params);
  const auto b = match_scan(compose(q, offset), scan, field_for(moved, q), params);
  const Pose2D a_moved = compose(T, a.pose);
  EXPECT_LE((a_moved.translation() - b.pose.translation()).norm(), 2 * params.finest_step_xy() + 0.05);
  EXPECT_LE(std::abs(wrap_angle(a_moved.theta - b.pose.theta)), 2 * params.finest_step_theta());
}

TEST(MatchScan, DegenerateScanAndEmptyMap) {
  const auto c = self_match_case(9);
  FilteredScan2D sparse = c.scan;
  std::size_t kept = 0;
  for (auto& b : sparse.bins) {
    if (b.valid && ++kept > 5) b.valid = false;
  }
  try {
    (void)match_scan(c.truth, sparse, c.field, MatchParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateScan);
  }
  DistanceField nothing(c.field.meta(), std::vector<double>(c.field.values().size(), 1.0));
  try {
    (void)match_scan(c.truth, c.scan, nothing, MatchParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoOccupiedCells);
  }
}

TEST(MatchParams, Validation) {
  MatchParams p;
  p.k_fraction = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.search_radius_xy = 0.05;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.refine_levels = -1;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  EXPECT_DOUBLE_EQ(p.finest_step_xy(), 0.0125);
  EXPECT_DOUBLE_EQ(p.finest_step_theta(), deg2rad(0.25));
}
