#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace arbor_slam {

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double angle) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double wrapped = angle - kTwoPi * std::floor((angle + std::numbers::pi) / kTwoPi);
  // floor() rounding can land exactly on +pi for inputs a hair below it.
  if (wrapped >= std::numbers::pi) {
    wrapped -= kTwoPi;
  }
  return wrapped;
}

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Planar robot pose in the world frame. `theta` is kept wrapped by the operations that produce poses.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  [[nodiscard]] Eigen::Vector2d translation() const { return {x, y}; }
  [[nodiscard]] Eigen::Vector3d vector() const { return {x, y, theta}; }
  [[nodiscard]] bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(theta); }

  static Pose2D from_vector(const Eigen::Vector3d& v) { return {v.x(), v.y(), wrap_angle(v.z())}; }

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

inline Eigen::Matrix2d rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

/// a ∘ b: applies b expressed in the frame of a.
inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
  const Eigen::Vector2d t = a.translation() + rotation(a.theta) * b.translation();
  return {t.x(), t.y(), wrap_angle(a.theta + b.theta)};
}

inline Pose2D inverse(const Pose2D& p) {
  const Eigen::Vector2d t = -(rotation(-p.theta) * p.translation());
  return {t.x(), t.y(), wrap_angle(-p.theta)};
}

/// Motion from `from` to `to`, expressed in the frame of `from`.
inline Pose2D relative(const Pose2D& from, const Pose2D& to) { return compose(inverse(from), to); }

inline Eigen::Vector2d transform_point(const Pose2D& p, const Eigen::Vector2d& point) {
  return p.translation() + rotation(p.theta) * point;
}

}  // namespace arbor_slam
