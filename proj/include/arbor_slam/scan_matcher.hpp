#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "arbor_slam/error.hpp"
#include "arbor_slam/grid_map.hpp"
#include "arbor_slam/pose.hpp"
#include "arbor_slam/scan_processing.hpp"

namespace arbor_slam {

struct MatchParams {
  double k_fraction = 0.8;
  double search_radius_xy = 0.5;
  double search_radius_theta = deg2rad(10.0);
  double coarse_step_xy = 0.1;
  double coarse_step_theta = deg2rad(2.0);
  int refine_levels = 3;
  std::size_t min_points = 10;

  [[nodiscard]] double finest_step_xy() const { return coarse_step_xy / std::ldexp(1.0, refine_levels); }
  [[nodiscard]] double finest_step_theta() const { return coarse_step_theta / std::ldexp(1.0, refine_levels); }

  void validate() const {
    require(k_fraction > 0.0 && k_fraction <= 1.0, "match_k_fraction", "must lie in (0, 1]");
    require(coarse_step_xy > 0.0, "match_step_xy", "must be positive");
    require(coarse_step_theta > 0.0, "match_step_theta", "must be positive");
    require(search_radius_xy >= coarse_step_xy, "match_radius_xy", "must be at least the coarse step");
    require(search_radius_theta >= coarse_step_theta, "match_radius_theta", "must be at least the coarse step");
    require(refine_levels >= 0, "match_refine_levels", "must be non-negative");
    require(min_points >= 1, "match_min_points", "must be at least 1");
  }
};

struct MatchResult {
  Pose2D pose;
  double score = 0.0;
  std::size_t candidates_evaluated = 0;
  bool converged = false;
};

/// Number of distances kept by the trimmed mean.
inline std::size_t trimmed_count(std::size_t n, double k_fraction) {
  const auto kept = static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(kept, 1, n);
}

/// Mean of the smallest ceil(k*n) values. Reorders `distances`.
inline double trimmed_mean(std::vector<double>& distances, double k_fraction) {
  const std::size_t kept = trimmed_count(distances.size(), k_fraction);
  if (kept < distances.size()) {
    std::nth_element(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(kept - 1), distances.end());
  }
  std::sort(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(kept));
  return std::accumulate(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(kept), 0.0) /
         static_cast<double>(kept);
}

/// Directed, k-trimmed modified Hausdorff distance from a world-frame point set to the map.
inline double directed_mhd(const PointSet2D& points, const DistanceField& field, double k_fraction) {
  if (points.points.empty()) throw Error(ErrorCode::kEmptyScan, "directed_mhd: empty point set");
  require(points.frame == Frame::kWorld, "points", "must be in the world frame");
  require(k_fraction > 0.0 && k_fraction <= 1.0, "k_fraction", "must lie in (0, 1]");
  std::vector<double> d;
  d.reserve(points.points.size());
  for (const auto& p : points.points) d.push_back(field.sample(p));
  return trimmed_mean(d, k_fraction);
}

namespace detail {

struct Candidate {
  double score;
  double dtheta;
  double dx;
  double dy;
};

// Lowest score, then lexicographic (theta, x, y) offset.
inline bool better(const Candidate& a, const Candidate& b) {
  return std::tie(a.score, a.dtheta, a.dx, a.dy) < std::tie(b.score, b.dtheta, b.dx, b.dy);
}

class CandidateScorer {
 public:
  CandidateScorer(const Pose2D& seed, const FilteredScan2D& scan, const DistanceField& field, double k_fraction)
      : seed_(seed), field_(field), k_fraction_(k_fraction) {
    for (const auto& b : scan.bins) {
      if (b.valid) polar_.emplace_back(b.range, b.azimuth);
    }
    rotated_.resize(polar_.size());
    distances_.reserve(polar_.size());
  }

  [[nodiscard]] std::size_t size() const { return polar_.size(); }
  [[nodiscard]] std::size_t evaluated() const { return evaluated_; }

  /// Rotates the scan for a heading offset; subsequent `score` calls reuse it.
  void set_heading(double dtheta) {
    const double heading = seed_.theta + dtheta;
    for (std::size_t n = 0; n < polar_.size(); ++n) {
      const double a = polar_[n].y() + heading;
      rotated_[n] = polar_[n].x() * Eigen::Vector2d(std::cos(a), std::sin(a));
    }
  }

  double score(double dx, double dy) {
    ++evaluated_;
    const Eigen::Vector2d t(seed_.x + dx, seed_.y + dy);
    distances_.clear();
    for (const auto& p : rotated_) distances_.push_back(field_.sample(t + p));
    return trimmed_mean(distances_, k_fraction_);
  }

 private:
  Pose2D seed_;
  const DistanceField& field_;
  double k_fraction_;
  std::vector<Eigen::Vector2d> polar_;  // (range, azimuth)
  std::vector<Eigen::Vector2d> rotated_;
  std::vector<double> distances_;
  std::size_t evaluated_ = 0;
};

inline std::vector<double> symmetric_offsets(double radius, double step) {
  const int n = static_cast<int>(std::floor(radius / step + 1e-9));
  std::vector<double> out;
  for (int k = -n; k <= n; ++k) out.push_back(k * step);
  return out;
}

}  // namespace detail

/// Coarse-to-fine exhaustive search for the pose minimizing the directed MHD of the scan against the map.
inline MatchResult match_scan(const Pose2D& initial_guess, const FilteredScan2D& scan, const DistanceField& field,
                              const MatchParams& params) {
  params.validate();
  if (scan.valid_count() < params.min_points) {
    throw Error(ErrorCode::kDegenerateScan, "scan has " + std::to_string(scan.valid_count()) +
                                                " valid bins, fewer than the " + std::to_string(params.min_points) +
                                                " required for matching");
  }
  const auto& dv = field.values();
  if (std::none_of(dv.begin(), dv.end(), [](double d) { return d == 0.0; })) {
    throw Error(ErrorCode::kNoOccupiedCells, "match_scan: the map has no occupied cells");
  }
  detail::CandidateScorer scorer(initial_guess, scan, field, params.k_fraction);

  detail::Candidate best{std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.0};
  const auto xy_offsets = detail::symmetric_offsets(params.search_radius_xy, params.coarse_step_xy);
  for (double dtheta : detail::symmetric_offsets(params.search_radius_theta, params.coarse_step_theta)) {
    scorer.set_heading(dtheta);
    for (double dx : xy_offsets) {
      for (double dy : xy_offsets) {
        const detail::Candidate c{scorer.score(dx, dy), dtheta, dx, dy};
        if (detail::better(c, best)) best = c;
      }
    }
  }

  constexpr double kSlack = 1e-9;
  const auto inside = [&](double dtheta, double dx, double dy) {
    return std::abs(dtheta) <= params.search_radius_theta + kSlack && std::abs(dx) <= params.search_radius_xy + kSlack &&
           std::abs(dy) <= params.search_radius_xy + kSlack;
  };
  double step_xy = params.coarse_step_xy;
  double step_theta = params.coarse_step_theta;
  for (int level = 0; level < params.refine_levels; ++level) {
    step_xy *= 0.5;
    step_theta *= 0.5;
    const detail::Candidate center = best;
    for (int a = -1; a <= 1; ++a) {
      const double dtheta = center.dtheta + a * step_theta;
      bool heading_set = false;
      for (int b = -1; b <= 1; ++b) {
        for (int c = -1; c <= 1; ++c) {
          if (a == 0 && b == 0 && c == 0) continue;
          const double dx = center.dx + b * step_xy;
          const double dy = center.dy + c * step_xy;
          if (!inside(dtheta, dx, dy)) continue;
          if (!heading_set) {
            scorer.set_heading(dtheta);
            heading_set = true;
          }
          const detail::Candidate cand{scorer.score(dx, dy), dtheta, dx, dy};
          if (detail::better(cand, best)) best = cand;
        }
      }
    }
  }

  MatchResult result;
  result.pose = {initial_guess.x + best.dx, initial_guess.y + best.dy, wrap_angle(initial_guess.theta + best.dtheta)};
  result.score = best.score;
  result.candidates_evaluated = scorer.evaluated();
  const double edge_xy = params.search_radius_xy - 0.5 * params.finest_step_xy();
  const double edge_theta = params.search_radius_theta - 0.5 * params.finest_step_theta();
  result.converged = std::abs(best.dx) < edge_xy && std::abs(best.dy) < edge_xy && std::abs(best.dtheta) < edge_theta;
  return result;
}

}  // namespace arbor_slam
