#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "arbor_slam/config.hpp"
#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"
#include "arbor_slam/grid_map.hpp"
#include "arbor_slam/orchard_simulator.hpp"
#include "arbor_slam/pose.hpp"
#include "arbor_slam/scan_matcher.hpp"
#include "arbor_slam/scan_processing.hpp"
#include "arbor_slam/state_estimator.hpp"

namespace arbor_slam {

enum class ControlSource { kExternal, kConstantVelocity };

struct PipelineConfig {
  SliceBand slice;
  std::size_t bin_count = 360;
  double grid_resolution = 0.05;
  double grid_initial_size = 10.0;  // side of the square grid centred on the start pose [m]
  double grid_margin = 2.0;         // padding added whenever the grid has to grow [m]
  LogOddsParams log_odds;
  MatchParams match;
  double q_sigma_v = 0.5;
  double q_sigma_omega = 0.5;
  double r_sigma_xy = 0.05;
  double r_sigma_theta = deg2rad(0.5);
  double prior_variance = 1e-4;
  std::optional<double> score_gate;  // defaults to 5 x grid_resolution
  // kExternal uses the control log when one is supplied; kConstantVelocity always ignores it.
  ControlSource control_source = ControlSource::kExternal;

  [[nodiscard]] double effective_score_gate() const { return score_gate.value_or(5.0 * grid_resolution); }
  [[nodiscard]] Eigen::Matrix2d Q() const {
    return Eigen::Vector2d(q_sigma_v * q_sigma_v, q_sigma_omega * q_sigma_omega).asDiagonal();
  }
  [[nodiscard]] Eigen::Matrix3d R() const {
    return Eigen::Vector3d(r_sigma_xy * r_sigma_xy, r_sigma_xy * r_sigma_xy, r_sigma_theta * r_sigma_theta)
        .asDiagonal();
  }

  void validate() const {
    require(slice.z_min < slice.z_max, "slice_z_min", "must be below slice_z_max");
    require(bin_count >= 1, "bin_count", "must be at least 1");
    require(grid_resolution > 0.0, "grid_resolution", "must be positive");
    require(grid_initial_size > 0.0, "grid_initial_size", "must be positive");
    require(grid_margin >= 0.0, "grid_margin", "must be non-negative");
    log_odds.validate();
    match.validate();
    require(q_sigma_v >= 0.0 && q_sigma_omega >= 0.0, "q_sigma", "must be non-negative");
    require(r_sigma_xy > 0.0 && r_sigma_theta > 0.0, "r_sigma", "must be positive");
    require(prior_variance >= 0.0, "prior_variance", "must be non-negative");
    require(effective_score_gate() > 0.0, "score_gate", "must be positive");
  }

  /// Consumes the pipeline keys of `cfg`; keys not present keep their defaults.
  void read(KeyValueConfig& cfg) {
    cfg.read("slice_z_min", slice.z_min);
    cfg.read("slice_z_max", slice.z_max);
    cfg.read("slice_height_offset", slice.height_offset);
    cfg.read("bin_count", bin_count);
    cfg.read("grid_resolution", grid_resolution);
    cfg.read("grid_initial_size", grid_initial_size);
    cfg.read("grid_margin", grid_margin);
    cfg.read("log_odds_hit", log_odds.hit);
    cfg.read("log_odds_free", log_odds.free);
    cfg.read("log_odds_min", log_odds.min);
    cfg.read("log_odds_max", log_odds.max);
    cfg.read("occ_threshold", log_odds.occ_threshold);
    cfg.read("match_k_fraction", match.k_fraction);
    cfg.read("match_radius_xy", match.search_radius_xy);
    double radius_theta_deg = rad2deg(match.search_radius_theta);
    cfg.read("match_radius_theta_deg", radius_theta_deg);
    match.search_radius_theta = deg2rad(radius_theta_deg);
    cfg.read("match_step_xy", match.coarse_step_xy);
    double step_theta_deg = rad2deg(match.coarse_step_theta);
    cfg.read("match_step_theta_deg", step_theta_deg);
    match.coarse_step_theta = deg2rad(step_theta_deg);
    cfg.read("match_refine_levels", match.refine_levels);
    cfg.read("match_min_points", match.min_points);
    cfg.read("q_sigma_v", q_sigma_v);
    cfg.read("q_sigma_omega", q_sigma_omega);
    cfg.read("r_sigma_xy", r_sigma_xy);
    double r_theta_deg = rad2deg(r_sigma_theta);
    cfg.read("r_sigma_theta_deg", r_theta_deg);
    r_sigma_theta = deg2rad(r_theta_deg);
    cfg.read("prior_variance", prior_variance);
    if (double gate = 0.0; cfg.read("score_gate", gate)) score_gate = gate;
    std::string source = control_source == ControlSource::kExternal ? "external" : "constant_velocity";
    cfg.read("control_source", source);
    if (source == "external") {
      control_source = ControlSource::kExternal;
    } else if (source == "constant_velocity") {
      control_source = ControlSource::kConstantVelocity;
    } else {
      throw Error(ErrorCode::kInvalidParameter, "control_source: expected 'external' or 'constant_velocity'");
    }
  }

  /// Full `key = value` listing that `read` accepts back.
  [[nodiscard]] std::string to_text() const {
    std::ostringstream out;
    const auto put = [&](const char* key, double v) { out << key << " = " << csv::format(v) << "\n"; };
    put("slice_z_min", slice.z_min);
    put("slice_z_max", slice.z_max);
    put("slice_height_offset", slice.height_offset);
    out << "bin_count = " << bin_count << "\n";
    put("grid_resolution", grid_resolution);
    put("grid_initial_size", grid_initial_size);
    put("grid_margin", grid_margin);
    put("log_odds_hit", log_odds.hit);
    put("log_odds_free", log_odds.free);
    put("log_odds_min", log_odds.min);
    put("log_odds_max", log_odds.max);
    put("occ_threshold", log_odds.occ_threshold);
    put("match_k_fraction", match.k_fraction);
    put("match_radius_xy", match.search_radius_xy);
    put("match_radius_theta_deg", rad2deg(match.search_radius_theta));
    put("match_step_xy", match.coarse_step_xy);
    put("match_step_theta_deg", rad2deg(match.coarse_step_theta));
    out << "match_refine_levels = " << match.refine_levels << "\n";
    out << "match_min_points = " << match.min_points << "\n";
    put("q_sigma_v", q_sigma_v);
    put("q_sigma_omega", q_sigma_omega);
    put("r_sigma_xy", r_sigma_xy);
    put("r_sigma_theta_deg", rad2deg(r_sigma_theta));
    put("prior_variance", prior_variance);
    if (score_gate) put("score_gate", *score_gate);
    out << "control_source = "
        << (control_source == ControlSource::kExternal ? "external" : "constant_velocity") << "\n";
    return out.str();
  }
};

inline PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source = "<config>") {
  KeyValueConfig cfg = KeyValueConfig::parse(text, source);
  PipelineConfig config;
  config.read(cfg);
  cfg.check_consumed();
  config.validate();
  return config;
}

struct FrameRecord {
  double t = 0.0;
  std::size_t raw_beams = 0;
  Pose2D predicted;
  std::optional<Pose2D> matched;
  double score = std::numeric_limits<double>::quiet_NaN();
  Pose2D corrected;
  double covariance_trace = 0.0;
  bool map_updated = false;
  bool fallback = false;
};

/// Online loop: filter -> predict -> match against the previous map -> EKF update -> map update.
class SlamPipeline {
 public:
  explicit SlamPipeline(PipelineConfig config) : config_(std::move(config)) { config_.validate(); }

  [[nodiscard]] bool initialized() const { return !records_.empty(); }
  [[nodiscard]] const std::vector<FrameRecord>& trajectory() const { return records_; }
  [[nodiscard]] const OccupancyGrid& map() const { return grid_; }
  [[nodiscard]] const BeliefState& belief() const { return belief_; }
  [[nodiscard]] const PipelineConfig& config() const { return config_; }

  /// Seeds the map with the first scan taken at the origin.
  const FrameRecord& initialize(const PolarScan3D& first_scan) {
    FilteredScan2D filtered;
    try {
      filtered = filter_scan(first_scan, config_.slice, config_.bin_count);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInitialization, std::string("cannot initialize: ") + e.what());
    }
    if (filtered.valid_count() < config_.match.min_points) {
      throw Error(ErrorCode::kInitialization, "cannot initialize: first scan has " +
                                                  std::to_string(filtered.valid_count()) + " valid bins, need " +
                                                  std::to_string(config_.match.min_points));
    }
    records_.clear();
    belief_ = BeliefState{};
    belief_.covariance = Eigen::Matrix3d::Identity() * config_.prior_variance;
    grid_ = OccupancyGrid::empty(config_.grid_resolution, config_.log_odds);
    const double half = 0.5 * config_.grid_initial_size;
    ensure_capacity(grid_, BoundingBox{Eigen::Vector2d::Constant(-half), Eigen::Vector2d::Constant(half)});
    integrate(belief_.mean, filtered);
    field_.reset();

    FrameRecord rec;
    rec.t = first_scan.timestamp;
    rec.raw_beams = first_scan.beams.size();
    rec.matched = belief_.mean;
    rec.score = 0.0;
    rec.corrected = belief_.mean;
    rec.covariance_trace = belief_.covariance.trace();
    rec.map_updated = true;
    records_.push_back(rec);
    return records_.back();
  }

  /// Processes one sweep. `controls` are the inputs applied since the previous sweep, in order; when empty the
  /// previous corrected motion is replayed as a constant-velocity pseudo-control.
  const FrameRecord& step(const PolarScan3D& scan, std::span<const Control> controls = {}) {
    if (!initialized()) throw Error(ErrorCode::kUninitialized, "step() called before initialize()");
    const FrameRecord& prev = records_.back();
    if (!(scan.timestamp > prev.t)) {
      throw Error(ErrorCode::kOutOfOrder, "scan timestamp " + csv::format(scan.timestamp) +
                                              " does not follow " + csv::format(prev.t));
    }
    const double dt = scan.timestamp - prev.t;

    FrameRecord rec;
    rec.t = scan.timestamp;
    rec.raw_beams = scan.beams.size();

    // (1) filter
    std::optional<FilteredScan2D> filtered;
    try {
      filtered = filter_scan(scan, config_.slice, config_.bin_count);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyScan) throw;
    }

    // (2) predict
    BeliefState predicted = belief_;
    const Eigen::Matrix2d Q = config_.Q();
    if (!controls.empty()) {
      for (const auto& u : controls) predicted = predict(predicted, u, Q);
    } else {
      predicted = predict(predicted, pseudo_control(dt), Q);
    }
    rec.predicted = predicted.mean;

    // (3) snapshot of the previous map, (4) match
    std::optional<MatchResult> match;
    if (filtered) {
      try {
        match = match_scan(predicted.mean, *filtered, distance_field(), config_.match);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateScan && e.code() != ErrorCode::kNoOccupiedCells) throw;
      }
    }

    // (5) correct, or fall back to the prediction
    if (match) {
      rec.matched = match->pose;
      rec.score = match->score;
    }
    if (match && match->score <= config_.effective_score_gate()) {
      const double inflation = std::max(1.0, match->score / config_.grid_resolution);
      belief_ = update(predicted, match->pose, config_.R() * inflation);
    } else {
      belief_ = predicted;
      rec.fallback = true;
    }
    rec.corrected = belief_.mean;
    rec.covariance_trace = belief_.covariance.trace();

    // (6) map update
    if (!rec.fallback) {
      integrate(belief_.mean, *filtered);
      rec.map_updated = true;
    }
    records_.push_back(rec);
    return records_.back();
  }

  const FrameRecord& step(const PolarScan3D& scan, const std::optional<Control>& u) {
    if (u) return step(scan, std::span<const Control>(&*u, 1));
    return step(scan, std::span<const Control>{});
  }

 private:
  Control pseudo_control(double dt) const {
    Control u{0.0, 0.0, dt};
    if (records_.size() < 2) return u;
    const FrameRecord& a = records_[records_.size() - 2];
    const FrameRecord& b = records_.back();
    const double span = b.t - a.t;
    const Eigen::Vector2d d = b.corrected.translation() - a.corrected.translation();
    u.v = d.dot(Eigen::Vector2d(std::cos(a.corrected.theta), std::sin(a.corrected.theta))) / span;
    u.omega = wrap_angle(b.corrected.theta - a.corrected.theta) / span;
    return u;
  }

  const DistanceField& distance_field() {
    if (!field_ || field_revision_ != grid_.revision()) {
      field_.emplace(distance_transform(grid_));
      field_revision_ = grid_.revision();
    }
    return *field_;
  }

  void integrate(const Pose2D& pose, const FilteredScan2D& scan) {
    BoundingBox box = BoundingBox::around(pose.translation());
    for (const auto& p : scan_to_world(scan, pose).points) box.extend(p);
    const GridMeta& meta = grid_.meta();
    const Eigen::Vector2d lo = meta.origin;
    const Eigen::Vector2d hi = meta.max_corner();
    if ((box.min.array() < lo.array()).any() || (box.max.array() >= hi.array()).any()) {
      ensure_capacity(grid_, box.padded(config_.grid_margin));
    }
    update_occupancy(grid_, pose, scan);
  }

  PipelineConfig config_;
  std::vector<FrameRecord> records_;
  BeliefState belief_;
  OccupancyGrid grid_;
  std::optional<DistanceField> field_;
  std::uint64_t field_revision_ = 0;
};

/// Zero-order-hold control log: each input holds from its timestamp until the next one.
class ControlSchedule {
 public:
  ControlSchedule() = default;
  explicit ControlSchedule(std::vector<TimedControl> controls) : controls_(std::move(controls)) {}

  [[nodiscard]] bool empty() const { return controls_.empty(); }

  /// Inputs covering [t0, t1), clipped to the interval.
  [[nodiscard]] std::vector<Control> slice(double t0, double t1) const {
    std::vector<Control> out;
    constexpr double kMinDt = 1e-9;
    for (std::size_t k = 0; k < controls_.size(); ++k) {
      const double start = controls_[k].t;
      const double end = k + 1 < controls_.size() ? controls_[k + 1].t : std::numeric_limits<double>::infinity();
      if (start >= t1) break;
      const double lo = std::max(start, t0);
      const double hi = std::min(end, t1);
      if (hi - lo > kMinDt) out.push_back({controls_[k].u.v, controls_[k].u.omega, hi - lo});
    }
    return out;
  }

 private:
  std::vector<TimedControl> controls_;
};

inline std::vector<TimedControl> read_controls_csv(const std::string& path) {
  csv::NumericReader reader(path, {"t", "v", "omega"});
  std::vector<TimedControl> out;
  std::vector<double> row;
  while (reader.next(row)) {
    if (!out.empty() && row[0] <= out.back().t) {
      throw ParseError(path, reader.line_number(), "timestamps must be strictly increasing");
    }
    out.push_back({row[0], {row[1], row[2], 0.0}});
  }
  return out;
}

struct RunResult {
  std::vector<FrameRecord> trajectory;
  OccupancyGrid map;
  std::size_t skipped_scans = 0;  // unusable scans before initialization
};

/// Drives a pipeline from a scan source (`next()` yields std::optional<PolarScan3D>).
template <typename NextScan>
RunResult run(NextScan&& next, const ControlSchedule& controls, const PipelineConfig& config) {
  SlamPipeline pipeline(config);
  RunResult result;
  std::size_t scans = 0;
  while (auto scan = next()) {
    ++scans;
    if (!pipeline.initialized()) {
      try {
        pipeline.initialize(*scan);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kInitialization) throw;
        ++result.skipped_scans;
      }
      continue;
    }
    const double t0 = pipeline.trajectory().back().t;
    if (config.control_source == ControlSource::kExternal && !controls.empty()) {
      std::vector<Control> u = controls.slice(t0, scan->timestamp);
      if (u.empty()) u.push_back({0.0, 0.0, scan->timestamp - t0});
      pipeline.step(*scan, u);
    } else {
      pipeline.step(*scan);
    }
  }
  if (scans == 0) throw Error(ErrorCode::kEmptyLog, "scan log contains no scans");
  if (!pipeline.initialized()) throw Error(ErrorCode::kInitialization, "no usable scan to initialize the map");
  result.trajectory = pipeline.trajectory();
  result.map = pipeline.map();
  return result;
}

inline RunResult run(const std::string& scan_log, const std::optional<std::string>& control_log,
                     const PipelineConfig& config) {
  ScanLogReader reader(scan_log);
  ControlSchedule schedule;
  if (control_log) schedule = ControlSchedule(read_controls_csv(*control_log));
  return run([&] { return reader.next(); }, schedule, config);
}

inline void write_trajectory_csv(const std::vector<FrameRecord>& trajectory, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, path + ": cannot open for writing");
  out << "t,x,y,theta,score,fallback\n";
  for (const auto& r : trajectory) {
    out << csv::format(r.t) << ',' << csv::format(r.corrected.x) << ',' << csv::format(r.corrected.y) << ','
        << csv::format(r.corrected.theta) << ',' << (std::isnan(r.score) ? std::string("nan") : csv::format(r.score))
        << ',' << (r.fallback ? 1 : 0) << '\n';
  }
}

inline std::vector<TimedPose> corrected_poses(const std::vector<FrameRecord>& trajectory) {
  std::vector<TimedPose> out;
  out.reserve(trajectory.size());
  for (const auto& r : trajectory) out.push_back({r.t, r.corrected});
  return out;
}

}  // namespace arbor_slam
