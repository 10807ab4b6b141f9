#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "arbor_slam/error.hpp"
#include "arbor_slam/pose.hpp"

namespace arbor_slam {

/// Differential-drive input held constant for `dt` seconds.
struct Control {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
  double dt = 0.0;     // s

  [[nodiscard]] bool valid() const {
    return std::isfinite(v) && std::isfinite(omega) && std::isfinite(dt) && dt > 0.0;
  }
};

struct BeliefState {
  Pose2D mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

/// One explicit Euler step of the unicycle model, with the heading taken before the step.
inline Pose2D integrate_motion(const Pose2D& pose, const Control& u) {
  require(u.valid(), "control", "v, omega must be finite and dt positive");
  return {pose.x + u.v * std::cos(pose.theta) * u.dt, pose.y + u.v * std::sin(pose.theta) * u.dt,
          wrap_angle(pose.theta + u.omega * u.dt)};
}

struct MotionJacobians {
  Eigen::Matrix3d A;               // d f / d state
  Eigen::Matrix<double, 3, 2> G;  // d f / d (v, omega)
};

inline MotionJacobians motion_jacobians(const Pose2D& pose, const Control& u) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  MotionJacobians j;
  j.A = Eigen::Matrix3d::Identity();
  j.A(0, 2) = -u.v * s * u.dt;
  j.A(1, 2) = u.v * c * u.dt;
  j.G << c * u.dt, 0.0,  //
      s * u.dt, 0.0,     //
      0.0, u.dt;
  return j;
}

template <int N>
bool is_symmetric_psd(const Eigen::Matrix<double, N, N>& m, double tol = 1e-12) {
  if (!m.allFinite()) return false;
  if (((m - m.transpose()).cwiseAbs().maxCoeff()) > tol) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> eig(m);
  return eig.eigenvalues().minCoeff() >= -tol;
}

inline BeliefState predict(const BeliefState& belief, const Control& u, const Eigen::Matrix2d& Q) {
  if (!is_symmetric_psd<2>(Q)) throw Error(ErrorCode::kNonPsdNoise, "control noise Q must be symmetric PSD");
  const MotionJacobians j = motion_jacobians(belief.mean, u);
  BeliefState out;
  out.mean = integrate_motion(belief.mean, u);
  out.covariance = j.A * belief.covariance * j.A.transpose() + j.G * Q * j.G.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

/// Measurement residual z - mean with the heading difference wrapped.
inline Eigen::Vector3d pose_residual(const Pose2D& z, const Pose2D& mean) {
  return {z.x - mean.x, z.y - mean.y, wrap_angle(z.theta - mean.theta)};
}

/// EKF correction with a direct pose measurement (identity measurement model), Joseph-form covariance.
inline BeliefState update(const BeliefState& belief, const Pose2D& z, const Eigen::Matrix3d& R) {
  require(z.finite(), "measurement", "must be finite");
  if (!is_symmetric_psd<3>(R)) throw Error(ErrorCode::kNonPsdNoise, "measurement noise R must be symmetric PSD");
  const Eigen::Matrix3d& P = belief.covariance;
  const Eigen::Matrix3d S = P + R;
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(S);
  if (!lu.isInvertible()) throw Error(ErrorCode::kSingularInnovation, "innovation covariance is singular");
  const Eigen::Matrix3d K = P * lu.inverse();
  const Eigen::Vector3d e = pose_residual(z, belief.mean);
  BeliefState out;
  out.mean = Pose2D::from_vector(belief.mean.vector() + K * e);
  const Eigen::Matrix3d I_KC = Eigen::Matrix3d::Identity() - K;
  out.covariance = I_KC * P * I_KC.transpose() + K * R * K.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

}  // namespace arbor_slam
