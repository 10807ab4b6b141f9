#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"
#include "arbor_slam/grid_map.hpp"
#include "arbor_slam/orchard_simulator.hpp"
#include "arbor_slam/pose.hpp"

namespace arbor_slam {

struct PosePair {
  double t = 0.0;
  Pose2D estimate;
  Pose2D truth;
};

struct AlignedTrajectoryPair {
  std::vector<PosePair> pairs;
  double tolerance = 0.0;
  std::size_t unpaired = 0;
};

/// Pairs each estimate with the nearest-in-time ground truth within `tolerance`. Both inputs must be time-sorted.
inline AlignedTrajectoryPair associate(const std::vector<TimedPose>& estimate, const std::vector<TimedPose>& truth,
                                       double tolerance) {
  require(!estimate.empty() && !truth.empty(), "trajectories", "must be non-empty");
  require(tolerance >= 0.0, "tolerance", "must be non-negative");
  AlignedTrajectoryPair out;
  out.tolerance = tolerance;
  std::size_t g = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  for (const auto& e : estimate) {
    while (g + 1 < truth.size() && std::abs(truth[g + 1].t - e.t) <= std::abs(truth[g].t - e.t)) ++g;
    if (std::abs(truth[g].t - e.t) <= tolerance && e.t > last_t) {
      out.pairs.push_back({e.t, e.pose, truth[g].pose});
      last_t = e.t;
    } else {
      ++out.unpaired;
    }
  }
  if (out.pairs.empty()) {
    throw Error(ErrorCode::kNoPairs, "no estimate lies within " + csv::format(tolerance) + " s of a ground-truth pose (" +
                                         std::to_string(estimate.size()) + " estimates, " +
                                         std::to_string(truth.size()) + " ground-truth poses)");
  }
  return out;
}

struct PoseMetrics {
  double mean_pos_error = 0.0;  // m
  double mean_ang_error = 0.0;  // deg
  double rms_pos = 0.0;
  double rms_ang = 0.0;
  double mean_inc_pos = 0.0;
  double mean_inc_ang = 0.0;
  double rms_inc_pos = 0.0;
  double rms_inc_ang = 0.0;
  double pct_error = 0.0;
  double loop_error = 0.0;       // final estimate vs final ground truth
  double loop_drift = 0.0;  // start-to-end displacement, estimate vs ground truth

  /// Name/value pairs in reporting order.
  [[nodiscard]] std::vector<std::pair<std::string, double>> fields() const {
    return {{"mean_pos_error_m", mean_pos_error}, {"mean_ang_error_deg", mean_ang_error},
            {"rms_pos_error_m", rms_pos},         {"rms_ang_error_deg", rms_ang},
            {"mean_inc_pos_error_m", mean_inc_pos}, {"mean_inc_ang_error_deg", mean_inc_ang},
            {"rms_inc_pos_error_m", rms_inc_pos}, {"rms_inc_ang_error_deg", rms_inc_ang},
            {"pct_error", pct_error},             {"loop_error_m", loop_error},
            {"loop_drift_m", loop_drift}};
  }
};

inline double path_length(const std::vector<TimedPose>& poses) {
  double len = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i) {
    len += (poses[i].pose.translation() - poses[i - 1].pose.translation()).norm();
  }
  return len;
}

inline PoseMetrics pose_metrics(const AlignedTrajectoryPair& aligned, double path_length_m) {
  const auto& pairs = aligned.pairs;
  if (pairs.size() < 2) throw Error(ErrorCode::kTooFewPairs, "pose metrics need at least 2 associated poses");
  require(path_length_m > 0.0, "path_length", "must be positive");

  PoseMetrics m;
  double sq_pos = 0.0, sq_ang = 0.0;
  for (const auto& p : pairs) {
    const double e_pos = (p.estimate.translation() - p.truth.translation()).norm();
    const double e_ang = rad2deg(std::abs(wrap_angle(p.estimate.theta - p.truth.theta)));
    m.mean_pos_error += e_pos;
    m.mean_ang_error += e_ang;
    sq_pos += e_pos * e_pos;
    sq_ang += e_ang * e_ang;
  }
  const auto n = static_cast<double>(pairs.size());
  m.mean_pos_error /= n;
  m.mean_ang_error /= n;
  m.rms_pos = std::sqrt(sq_pos / n);
  m.rms_ang = std::sqrt(sq_ang / n);

  double sq_inc_pos = 0.0, sq_inc_ang = 0.0;
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    const Pose2D de = relative(pairs[i - 1].estimate, pairs[i].estimate);
    const Pose2D dg = relative(pairs[i - 1].truth, pairs[i].truth);
    const double e_pos = (de.translation() - dg.translation()).norm();
    const double e_ang = rad2deg(std::abs(wrap_angle(de.theta - dg.theta)));
    m.mean_inc_pos += e_pos;
    m.mean_inc_ang += e_ang;
    sq_inc_pos += e_pos * e_pos;
    sq_inc_ang += e_ang * e_ang;
  }
  const double n_inc = n - 1.0;
  m.mean_inc_pos /= n_inc;
  m.mean_inc_ang /= n_inc;
  m.rms_inc_pos = std::sqrt(sq_inc_pos / n_inc);
  m.rms_inc_ang = std::sqrt(sq_inc_ang / n_inc);

  m.pct_error = m.mean_pos_error / path_length_m;
  m.loop_error = (pairs.back().estimate.translation() - pairs.back().truth.translation()).norm();
  const Eigen::Vector2d de = pairs.back().estimate.translation() - pairs.front().estimate.translation();
  const Eigen::Vector2d dg = pairs.back().truth.translation() - pairs.front().truth.translation();
  m.loop_drift = (de - dg).norm();
  return m;
}

struct MapMetrics {
  double mean_map_error = 0.0;  // pixels
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  [[nodiscard]] std::vector<std::pair<std::string, double>> fields() const {
    return {{"mean_map_error_px", mean_map_error}, {"accuracy", accuracy},       {"f1", f1},
            {"precision", precision},              {"sensitivity", sensitivity}, {"specificity", specificity}};
  }
};

/// Cells touched by any obstacle disc are occupied, every other cell is free.
inline OccupancyGrid rasterize_world(const WorldModel& world, const GridMeta& meta, const LogOddsParams& params = {}) {
  OccupancyGrid grid(meta, params);
  for (int j = 0; j < meta.height; ++j) {
    for (int i = 0; i < meta.width; ++i) grid.set_log_odds({i, j}, params.min);
  }
  const double half = 0.5 * meta.resolution;
  for (const auto& c : world.obstacles) {
    const CellIndex lo = cell_of(c.center - Eigen::Vector2d::Constant(c.radius), meta);
    const CellIndex hi = cell_of(c.center + Eigen::Vector2d::Constant(c.radius), meta);
    for (int j = std::max(lo.j, 0); j <= std::min(hi.j, meta.height - 1); ++j) {
      for (int i = std::max(lo.i, 0); i <= std::min(hi.i, meta.width - 1); ++i) {
        const Eigen::Vector2d center = meta.cell_center({i, j});
        // Closest point of the cell square to the circle center.
        const Eigen::Vector2d h = Eigen::Vector2d::Constant(half);
        const Eigen::Vector2d nearest = c.center.cwiseMax(center - h).cwiseMin(center + h);
        if ((nearest - c.center).norm() <= c.radius) grid.set_log_odds({i, j}, params.max);
      }
    }
  }
  return grid;
}

/// Cell-by-cell comparison of an estimated map with a reference map over their common extent.
/// Unknown estimate cells count as not occupied.
inline MapMetrics map_metrics(const OccupancyGrid& estimate, const OccupancyGrid& reference) {
  const GridMeta& em = estimate.meta();
  const GridMeta& rm = reference.meta();
  if (std::abs(em.resolution - rm.resolution) > 1e-9 * rm.resolution) {
    throw Error(ErrorCode::kResolutionMismatch, "map resolutions differ (" + csv::format(em.resolution) + " vs " +
                                                    csv::format(rm.resolution) + ")");
  }
  bool any_ref = false;
  for (int j = 0; j < rm.height && !any_ref; ++j)
    for (int i = 0; i < rm.width && !any_ref; ++i) any_ref = reference.occupied({i, j});
  if (!any_ref) throw Error(ErrorCode::kEmptyReference, "reference map has no occupied cells");

  const DistanceField ref_field = distance_transform(reference);
  MapMetrics m;
  double map_error_sum = 0.0;
  for (int j = 0; j < rm.height; ++j) {
    for (int i = 0; i < rm.width; ++i) {
      const CellIndex rc{i, j};
      const auto ec = world_to_cell(rm.cell_center(rc), em);
      if (!ec) continue;
      const bool est_occ = estimate.occupied(*ec);
      const bool ref_occ = reference.occupied(rc);
      if (est_occ && ref_occ) ++m.tp;
      if (est_occ && !ref_occ) ++m.fp;
      if (!est_occ && ref_occ) ++m.fn;
      if (!est_occ && !ref_occ) ++m.tn;
      if (est_occ) map_error_sum += ref_field.at(rc) / rm.resolution;
    }
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
  const std::size_t total = m.tp + m.fp + m.tn + m.fn;
  m.accuracy = ratio(m.tp + m.tn, total);
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  m.f1 = (m.precision + m.sensitivity) > 0.0
             ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity)
             : 0.0;
  m.mean_map_error = m.tp + m.fp > 0 ? map_error_sum / double(m.tp + m.fp) : 0.0;
  return m;
}

/// Reads a `t,x,y,theta[,...]` trajectory; extra columns of the SLAM output are ignored.
inline std::vector<TimedPose> read_trajectory_csv(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw Error(ErrorCode::kIo, path + ": cannot open for reading");
  std::string header;
  std::getline(probe, header);
  probe.close();
  const bool slam_format = csv::trim(header) == "t,x,y,theta,score,fallback";
  std::vector<std::string> columns = {"t", "x", "y", "theta"};
  if (slam_format) {
    columns.emplace_back("score");
    columns.emplace_back("fallback");
  }
  csv::NumericReader reader(path, columns);
  std::vector<TimedPose> out;
  std::vector<double> row;
  while (reader.next(row)) {
    if (!out.empty() && row[0] <= out.back().t) {
      throw ParseError(path, reader.line_number(), "timestamps must be strictly increasing");
    }
    out.push_back({row[0], {row[1], row[2], wrap_angle(row[3])}});
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyLog, path + ": no poses");
  return out;
}

}  // namespace arbor_slam
