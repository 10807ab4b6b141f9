#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "arbor_slam/config.hpp"
#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"
#include "arbor_slam/grid_map.hpp"
#include "arbor_slam/pose.hpp"
#include "arbor_slam/scan_processing.hpp"
#include "arbor_slam/state_estimator.hpp"

namespace arbor_slam {

/// Vertical cylinder (trunk or cone) seen as a circle in every horizontal slice.
struct Circle {
  Eigen::Vector2d center;
  double radius = 0.1;
};

struct WorldModel {
  std::vector<Circle> obstacles;
  BoundingBox extent{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
};

struct TimedPose {
  double t = 0.0;
  Pose2D pose;
};

struct TimedControl {
  double t = 0.0;
  Control u;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, double v) { return splitmix64(h ^ std::bit_cast<std::uint64_t>(v)); }

inline BoundingBox circles_extent(const std::vector<Circle>& circles) {
  BoundingBox box{Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()),
                  Eigen::Vector2d::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& c : circles) {
    box.extend(c.center - Eigen::Vector2d::Constant(c.radius));
    box.extend(c.center + Eigen::Vector2d::Constant(c.radius));
  }
  return box;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------------------------
// Worlds

struct OrchardLayout {
  int rows = 3;
  int trees_per_row = 8;
  double row_spacing = 3.0;
  double tree_spacing = 1.5;
  double trunk_radius = 0.1;
  double jitter = 0.0;
  std::uint64_t seed = 1;
};

/// Trees on a row/tree lattice anchored at the origin, rows along +x and stacked along +y.
inline WorldModel generate_world(const OrchardLayout& layout) {
  require(layout.rows >= 1, "rows", "must be at least 1");
  require(layout.trees_per_row >= 1, "trees_per_row", "must be at least 1");
  require(layout.row_spacing > 0.0, "row_spacing", "must be positive");
  require(layout.tree_spacing > 0.0, "tree_spacing", "must be positive");
  require(layout.trunk_radius > 0.0, "trunk_radius", "must be positive");
  require(layout.jitter >= 0.0, "jitter", "must be non-negative");
  std::mt19937_64 rng(layout.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  WorldModel world;
  for (int r = 0; r < layout.rows; ++r) {
    for (int t = 0; t < layout.trees_per_row; ++t) {
      Eigen::Vector2d c(t * layout.tree_spacing, r * layout.row_spacing);
      if (layout.jitter > 0.0) {
        const double jx = noise(rng);
        const double jy = noise(rng);
        c += layout.jitter * Eigen::Vector2d(jx, jy);
      }
      world.obstacles.push_back({c, layout.trunk_radius});
    }
  }
  world.extent = detail::circles_extent(world.obstacles).padded(1.0);
  return world;
}

/// Evenly spaced points along the boundary of [lo, hi]; collapses to a segment or a point when degenerate.
inline std::vector<Eigen::Vector2d> points_along_rectangle(Eigen::Vector2d lo, Eigen::Vector2d hi, double spacing) {
  for (int a = 0; a < 2; ++a) {
    if (hi[a] < lo[a]) lo[a] = hi[a] = 0.5 * (lo[a] + hi[a]);
  }
  const Eigen::Vector2d size = hi - lo;
  std::vector<Eigen::Vector2d> out;
  const auto segment = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b, bool include_end) {
    const int n = std::max(1, static_cast<int>(std::lround((b - a).norm() / spacing)));
    for (int k = 0; k < n + (include_end ? 1 : 0); ++k) out.push_back(a + (b - a) * (double(k) / n));
  };
  constexpr double kTiny = 1e-9;
  if (size.x() < kTiny && size.y() < kTiny) {
    out.push_back(lo);
  } else if (size.y() < kTiny) {
    segment(lo, {hi.x(), lo.y()}, true);
  } else if (size.x() < kTiny) {
    segment(lo, {lo.x(), hi.y()}, true);
  } else {
    const Eigen::Vector2d c1 = lo, c2(hi.x(), lo.y()), c3 = hi, c4(lo.x(), hi.y());
    segment(c1, c2, false);
    segment(c2, c3, false);
    segment(c3, c4, false);
    segment(c4, c1, false);
  }
  return out;
}

struct ConeCourse {
  double offset = 1.0;   // clearance between the driven path and the cone lines
  double spacing = 1.0;  // cone spacing along each line
  double radius = 0.05;  // cone cross-section at lidar height
};

/// Cones on a rectangle `offset` outside the path's bounding box, plus a line `offset` inside it.
inline WorldModel cone_course(const BoundingBox& path_box, const ConeCourse& course) {
  require(course.offset > 0.0, "cone_offset", "must be positive");
  require(course.spacing > 0.0, "cone_spacing", "must be positive");
  require(course.radius > 0.0, "cone_radius", "must be positive");
  WorldModel world;
  const Eigen::Vector2d pad = Eigen::Vector2d::Constant(course.offset);
  for (const auto& c : points_along_rectangle(path_box.min - pad, path_box.max + pad, course.spacing)) {
    world.obstacles.push_back({c, course.radius});
  }
  for (const auto& c : points_along_rectangle(path_box.min + pad, path_box.max - pad, course.spacing)) {
    world.obstacles.push_back({c, course.radius});
  }
  world.extent = detail::circles_extent(world.obstacles).padded(1.0);
  return world;
}

// ---------------------------------------------------------------------------------------------------------------
// Trajectories

struct LoopParams {
  double width = 6.0;
  double height = 2.0;
  double speed = 0.5;
  double sample_dt = 0.1;
  int laps = 5;
  double corner_radius = 0.25;

  void validate() const {
    require(width > 0.0, "width", "must be positive");
    require(height > 0.0, "height", "must be positive");
    require(speed > 0.0, "speed", "must be positive");
    require(sample_dt > 0.0, "sample_dt", "must be positive");
    require(laps >= 1, "laps", "must be at least 1");
    require(corner_radius > 0.0, "corner_radius", "must be positive");
    require(2.0 * corner_radius < std::min(width, height), "corner_radius", "must be below half the shorter side");
  }
};

struct LoopTrajectory {
  std::vector<TimedPose> poses;        // one more than controls
  std::vector<TimedControl> controls;  // controls[i] drives poses[i] -> poses[i+1]
  double lap_length = 0.0;
  std::size_t steps_per_lap = 0;
};

/// Counter-clockwise constant-speed laps around a width x height rectangle starting at the origin heading +x.
/// Poses are generated by integrating the controls, so the two are consistent by construction.
inline LoopTrajectory rectangle_loop(const LoopParams& p) {
  p.validate();
  const double step = p.speed * p.sample_dt;
  const auto steps_for = [&](double length) { return std::max(1L, std::lround(length / step)); };
  const long n_long = steps_for(p.width - 2.0 * p.corner_radius);
  const long n_short = steps_for(p.height - 2.0 * p.corner_radius);
  const long n_corner = steps_for(0.5 * std::numbers::pi * p.corner_radius);
  const double omega = 0.5 * std::numbers::pi / (static_cast<double>(n_corner) * p.sample_dt);

  std::vector<double> lap_omegas;
  for (long side : {n_long, n_short, n_long, n_short}) {
    lap_omegas.insert(lap_omegas.end(), static_cast<std::size_t>(side), 0.0);
    lap_omegas.insert(lap_omegas.end(), static_cast<std::size_t>(n_corner), omega);
  }

  LoopTrajectory out;
  out.steps_per_lap = lap_omegas.size();
  out.lap_length = static_cast<double>(out.steps_per_lap) * step;
  Pose2D pose;
  std::size_t i = 0;
  out.poses.push_back({0.0, pose});
  for (int lap = 0; lap < p.laps; ++lap) {
    for (double w : lap_omegas) {
      const Control u{p.speed, w, p.sample_dt};
      out.controls.push_back({static_cast<double>(i) * p.sample_dt, u});
      pose = integrate_motion(pose, u);
      ++i;
      out.poses.push_back({static_cast<double>(i) * p.sample_dt, pose});
    }
  }
  return out;
}

inline BoundingBox path_extent(const std::vector<TimedPose>& poses) {
  BoundingBox box = BoundingBox::around(poses.front().pose.translation());
  for (const auto& tp : poses) box.extend(tp.pose.translation());
  return box;
}

// ---------------------------------------------------------------------------------------------------------------
// Sensor

struct SensorSpec {
  int beam_count = 360;
  double azimuth_span = 2.0 * std::numbers::pi;
  std::vector<double> elevations = default_elevations();
  double min_range = 0.3;
  double max_range = 20.0;
  double range_sigma = 0.03;
  double angle_sigma = 0.001;
  double outlier_rate = 0.05;
  double dropout_rate = 0.0;
  double sensor_height = 0.4;
  bool ground_returns = true;
  std::uint64_t seed = 1;

  /// 16 rings, 2 degrees apart, spanning +-15 degrees.
  static std::vector<double> default_elevations() { return ring_elevations(16, deg2rad(15.0)); }

  static std::vector<double> ring_elevations(int rings, double half_span) {
    std::vector<double> out;
    for (int k = 0; k < rings; ++k) {
      out.push_back(rings == 1 ? 0.0 : -half_span + 2.0 * half_span * k / (rings - 1));
    }
    return out;
  }

  void validate() const {
    require(beam_count >= 1, "beam_count", "must be at least 1");
    require(azimuth_span > 0.0 && azimuth_span <= 2.0 * std::numbers::pi, "azimuth_span", "must lie in (0, 2pi]");
    require(!elevations.empty(), "elevations", "need at least one ring");
    for (double e : elevations) {
      require(std::abs(e) < 0.5 * std::numbers::pi, "elevations", "must lie strictly within +-90 degrees");
    }
    require(max_range > 0.0, "max_range", "must be positive");
    require(min_range >= 0.0 && min_range < max_range, "min_range", "must lie in [0, max_range)");
    require(range_sigma >= 0.0, "range_sigma", "must be non-negative");
    require(angle_sigma >= 0.0, "angle_sigma", "must be non-negative");
    require(outlier_rate >= 0.0 && outlier_rate < 1.0, "outlier_rate", "must lie in [0, 1)");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate", "must lie in [0, 1)");
    require(sensor_height > 0.0, "sensor_height", "must be positive");
  }
};

/// Distance along a unit ray to the first circle boundary it meets, or +inf.
inline double ray_circle_distance(const Eigen::Vector2d& origin, const Eigen::Vector2d& dir, const Circle& circle) {
  const Eigen::Vector2d oc = circle.center - origin;
  const double along = oc.dot(dir);
  const double miss2 = oc.squaredNorm() - along * along;
  const double r2 = circle.radius * circle.radius;
  if (miss2 > r2) return std::numeric_limits<double>::infinity();
  const double half_chord = std::sqrt(r2 - miss2);
  if (along - half_chord > 0.0) return along - half_chord;
  if (along + half_chord > 0.0) return along + half_chord;
  return std::numeric_limits<double>::infinity();
}

inline double cast_planar_ray(const WorldModel& world, const Eigen::Vector2d& origin, double heading) {
  const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : world.obstacles) best = std::min(best, ray_circle_distance(origin, dir, c));
  return best;
}

inline double beam_azimuth(int index, const SensorSpec& spec) {
  return -0.5 * spec.azimuth_span + (index + 0.5) * spec.azimuth_span / spec.beam_count;
}

/// Simulates one sweep from `pose`. Beams are ordered azimuth-major, ring-minor. Noise is a deterministic
/// function of the seed, the pose, the timestamp, and the beam order.
inline PolarScan3D simulate_scan(const WorldModel& world, const Pose2D& pose, const SensorSpec& spec,
                                 double timestamp = 0.0) {
  spec.validate();
  std::uint64_t h = detail::splitmix64(spec.seed);
  for (double v : {pose.x, pose.y, pose.theta, timestamp}) h = detail::mix(h, v);
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  PolarScan3D scan;
  scan.timestamp = timestamp;
  scan.min_range = spec.min_range;
  scan.max_range = spec.max_range;
  scan.beams.reserve(static_cast<std::size_t>(spec.beam_count) * spec.elevations.size());
  const Eigen::Vector2d origin = pose.translation();
  for (int a = 0; a < spec.beam_count; ++a) {
    const double azimuth = beam_azimuth(a, spec);
    const double planar_hit = cast_planar_ray(world, origin, pose.theta + azimuth);
    for (double elevation : spec.elevations) {
      const double u_drop = unit(rng);
      const double u_outlier = unit(rng);
      const double u_outlier_range = unit(rng);
      const double n_range = gauss(rng);
      const double n_azimuth = gauss(rng);
      const double n_elevation = gauss(rng);

      double range = planar_hit / std::cos(elevation);
      if (spec.ground_returns && elevation < 0.0) {
        const double ground_planar = spec.sensor_height / std::tan(-elevation);
        if (ground_planar < planar_hit) range = spec.sensor_height / std::sin(-elevation);
      }
      Beam beam;
      beam.azimuth = wrap_angle(azimuth + spec.angle_sigma * n_azimuth);
      beam.elevation = elevation + spec.angle_sigma * n_elevation;
      // Outliers corrupt an existing return; a beam with nothing in range stays empty.
      if (u_drop < spec.dropout_rate || range > spec.max_range) {
        beam.returned = false;
      } else if (u_outlier < spec.outlier_rate) {
        beam.range = spec.min_range + u_outlier_range * (spec.max_range - spec.min_range);
      } else {
        beam.range = range + spec.range_sigma * n_range;
        beam.returned = beam.range >= spec.min_range && beam.range <= spec.max_range;
      }
      if (!beam.returned) beam.range = spec.max_range;
      scan.beams.push_back(beam);
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------------------------------------------
// Scenarios

enum class WorldKind { kCones, kOrchard };

/// Everything needed to regenerate a simulated dataset.
struct SimulationConfig {
  WorldKind world = WorldKind::kCones;
  ConeCourse cones;
  OrchardLayout orchard;
  LoopParams loop;
  SensorSpec sensor;
  std::uint64_t seed = 1;

  void read(KeyValueConfig& cfg) {
    std::string kind = world == WorldKind::kCones ? "cones" : "orchard";
    cfg.read("world", kind);
    if (kind == "cones") {
      world = WorldKind::kCones;
    } else if (kind == "orchard") {
      world = WorldKind::kOrchard;
    } else {
      throw Error(ErrorCode::kInvalidParameter, "world: expected 'cones' or 'orchard'");
    }
    cfg.read("cone_offset", cones.offset);
    cfg.read("cone_spacing", cones.spacing);
    cfg.read("cone_radius", cones.radius);
    cfg.read("orchard_rows", orchard.rows);
    cfg.read("orchard_trees_per_row", orchard.trees_per_row);
    cfg.read("orchard_row_spacing", orchard.row_spacing);
    cfg.read("orchard_tree_spacing", orchard.tree_spacing);
    cfg.read("orchard_trunk_radius", orchard.trunk_radius);
    cfg.read("orchard_jitter", orchard.jitter);
    cfg.read("loop_width", loop.width);
    cfg.read("loop_height", loop.height);
    cfg.read("loop_speed", loop.speed);
    cfg.read("loop_dt", loop.sample_dt);
    cfg.read("laps", loop.laps);
    cfg.read("loop_corner_radius", loop.corner_radius);
    cfg.read("sensor_beams", sensor.beam_count);
    int rings = static_cast<int>(sensor.elevations.size());
    double half_fov_deg = rings > 1 ? rad2deg(sensor.elevations.back()) : 0.0;
    const bool new_rings = cfg.read("sensor_rings", rings);
    const bool new_fov = cfg.read("sensor_half_fov_deg", half_fov_deg);
    if (new_rings || new_fov) {
      require(rings >= 1, "sensor_rings", "must be at least 1");
      sensor.elevations = SensorSpec::ring_elevations(rings, deg2rad(half_fov_deg));
    }
    cfg.read("sensor_min_range", sensor.min_range);
    cfg.read("sensor_max_range", sensor.max_range);
    cfg.read("range_sigma", sensor.range_sigma);
    cfg.read("angle_sigma", sensor.angle_sigma);
    cfg.read("outlier_rate", sensor.outlier_rate);
    cfg.read("dropout_rate", sensor.dropout_rate);
    cfg.read("sensor_height", sensor.sensor_height);
    cfg.read("ground_returns", sensor.ground_returns);
    cfg.read("seed", seed);
  }

  void validate() const {
    loop.validate();
    sensor.validate();
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream out;
    const auto put = [&](const char* key, double v) { out << key << " = " << csv::format(v) << "\n"; };
    out << "world = " << (world == WorldKind::kCones ? "cones" : "orchard") << "\n";
    put("cone_offset", cones.offset);
    put("cone_spacing", cones.spacing);
    put("cone_radius", cones.radius);
    out << "orchard_rows = " << orchard.rows << "\n";
    out << "orchard_trees_per_row = " << orchard.trees_per_row << "\n";
    put("orchard_row_spacing", orchard.row_spacing);
    put("orchard_tree_spacing", orchard.tree_spacing);
    put("orchard_trunk_radius", orchard.trunk_radius);
    put("orchard_jitter", orchard.jitter);
    put("loop_width", loop.width);
    put("loop_height", loop.height);
    put("loop_speed", loop.speed);
    put("loop_dt", loop.sample_dt);
    out << "laps = " << loop.laps << "\n";
    put("loop_corner_radius", loop.corner_radius);
    out << "sensor_beams = " << sensor.beam_count << "\n";
    out << "sensor_rings = " << sensor.elevations.size() << "\n";
    put("sensor_half_fov_deg", sensor.elevations.size() > 1 ? rad2deg(sensor.elevations.back()) : 0.0);
    put("sensor_min_range", sensor.min_range);
    put("sensor_max_range", sensor.max_range);
    put("range_sigma", sensor.range_sigma);
    put("angle_sigma", sensor.angle_sigma);
    put("outlier_rate", sensor.outlier_rate);
    put("dropout_rate", sensor.dropout_rate);
    put("sensor_height", sensor.sensor_height);
    out << "ground_returns = " << (sensor.ground_returns ? "true" : "false") << "\n";
    out << "seed = " << seed << "\n";
    return out.str();
  }
};

struct Scenario {
  WorldModel world;
  LoopTrajectory trajectory;
  SensorSpec sensor;
};

/// Builds the world, the driven loop and the seeded sensor. In an orchard the loop is placed in the first aisle,
/// half a tree spacing past the first trunk.
inline Scenario build_scenario(const SimulationConfig& config) {
  config.validate();
  Scenario s;
  s.trajectory = rectangle_loop(config.loop);
  if (config.world == WorldKind::kCones) {
    s.world = cone_course(path_extent(s.trajectory.poses), config.cones);
  } else {
    OrchardLayout layout = config.orchard;
    layout.seed = config.seed;
    s.world = generate_world(layout);
    const Eigen::Vector2d shift(-0.5 * layout.tree_spacing, -0.5 * (layout.row_spacing - config.loop.height));
    for (auto& c : s.world.obstacles) c.center += shift;
    s.world.extent = detail::circles_extent(s.world.obstacles).padded(1.0);
  }
  s.sensor = config.sensor;
  s.sensor.seed = config.seed;
  return s;
}

// ---------------------------------------------------------------------------------------------------------------
// Files

inline void write_world_csv(const WorldModel& world, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, path + ": cannot open for writing");
  out << "x,y,radius\n";
  for (const auto& c : world.obstacles) {
    out << csv::format(c.center.x()) << ',' << csv::format(c.center.y()) << ',' << csv::format(c.radius) << '\n';
  }
}

inline WorldModel read_world_csv(const std::string& path) {
  csv::NumericReader reader(path, {"x", "y", "radius"});
  WorldModel world;
  std::vector<double> row;
  while (reader.next(row)) {
    if (row[2] <= 0.0) throw ParseError(path, reader.line_number(), "radius must be positive");
    world.obstacles.push_back({{row[0], row[1]}, row[2]});
  }
  if (world.obstacles.empty()) throw Error(ErrorCode::kEmptyLog, path + ": no obstacles");
  world.extent = detail::circles_extent(world.obstacles).padded(1.0);
  return world;
}

inline void write_poses_csv(const std::vector<TimedPose>& poses, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, path + ": cannot open for writing");
  out << "t,x,y,theta\n";
  for (const auto& p : poses) {
    out << csv::format(p.t) << ',' << csv::format(p.pose.x) << ',' << csv::format(p.pose.y) << ','
        << csv::format(p.pose.theta) << '\n';
  }
}

inline void write_controls_csv(const std::vector<TimedControl>& controls, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, path + ": cannot open for writing");
  out << "t,v,omega\n";
  for (const auto& c : controls) {
    out << csv::format(c.t) << ',' << csv::format(c.u.v) << ',' << csv::format(c.u.omega) << '\n';
  }
}

/// Appends one sweep to a `t,r,theta,phi` log; no-returns are written with r = 0.
inline void append_scan_csv(std::ostream& out, const PolarScan3D& scan) {
  const std::string t = csv::format(scan.timestamp);
  for (const auto& b : scan.beams) {
    out << t << ',' << (b.returned ? csv::format_fixed(b.range, 5) : std::string("0")) << ','
        << csv::format_fixed(b.azimuth, 6) << ',' << csv::format_fixed(b.elevation, 6) << '\n';
  }
}

}  // namespace arbor_slam
