#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"
#include "arbor_slam/pose.hpp"

namespace arbor_slam {

/// One lidar return in spherical sensor coordinates.
struct Beam {
  double range = 0.0;      // m
  double azimuth = 0.0;    // rad, [-pi, pi)
  double elevation = 0.0;  // rad, [-pi/2, pi/2]
  bool returned = true;    // false: no-return, range holds the max_range sentinel
};

struct PolarScan3D {
  std::vector<Beam> beams;
  double timestamp = 0.0;
  double min_range = 0.0;
  double max_range = std::numeric_limits<double>::infinity();

  [[nodiscard]] std::size_t returned_count() const {
    std::size_t n = 0;
    for (const auto& b : beams) n += b.returned ? 1 : 0;
    return n;
  }
};

struct PointCloud3D {
  std::vector<Eigen::Vector3d> points;
  double timestamp = 0.0;
};

struct PolarBin {
  double range = 0.0;
  double azimuth = 0.0;
  bool valid = false;
};

/// Minimum-range polar scan over a uniform partition of [-pi, pi).
struct FilteredScan2D {
  std::vector<PolarBin> bins;
  double timestamp = 0.0;

  [[nodiscard]] std::size_t bin_count() const { return bins.size(); }
  [[nodiscard]] std::size_t valid_count() const {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.valid ? 1 : 0;
    return n;
  }
};

enum class Frame { kSensor, kWorld };

struct PointSet2D {
  std::vector<Eigen::Vector2d> points;
  Frame frame = Frame::kSensor;
};

/// Height band kept by the horizontal slice. `height_offset` is added to sensor-frame z before the test,
/// so a non-zero offset makes the band relative to the ground instead of the sensor.
struct SliceBand {
  double z_min = 0.0;
  double z_max = 0.2;
  double height_offset = 0.0;
};

inline double bin_center(std::size_t index, std::size_t bin_count) {
  const double width = 2.0 * std::numbers::pi / static_cast<double>(bin_count);
  return -std::numbers::pi + (static_cast<double>(index) + 0.5) * width;
}

/// Bin for an azimuth under the half-open [lo, hi) convention.
inline std::size_t bin_index(double azimuth, std::size_t bin_count) {
  const double u = (azimuth + std::numbers::pi) / (2.0 * std::numbers::pi) * static_cast<double>(bin_count);
  auto idx = static_cast<long long>(std::floor(u));
  const auto n = static_cast<long long>(bin_count);
  // atan2 returns +pi on the negative x axis; that direction belongs to the first bin.
  idx = ((idx % n) + n) % n;
  return static_cast<std::size_t>(idx);
}

inline PointCloud3D spherical_to_cartesian(const PolarScan3D& scan) {
  PointCloud3D cloud;
  cloud.timestamp = scan.timestamp;
  cloud.points.reserve(scan.beams.size());
  for (const auto& b : scan.beams) {
    if (!b.returned) continue;
    const double planar = b.range * std::cos(b.elevation);
    cloud.points.emplace_back(planar * std::cos(b.azimuth), planar * std::sin(b.azimuth),
                              b.range * std::sin(b.elevation));
  }
  if (cloud.points.empty()) {
    throw Error(ErrorCode::kEmptyScan, "scan at t=" + csv::format(scan.timestamp) + " has no returns");
  }
  return cloud;
}

inline PointCloud3D slice_horizontal(const PointCloud3D& cloud, const SliceBand& band) {
  require(band.z_min < band.z_max, "slice band", "z_min must be below z_max");
  PointCloud3D out;
  out.timestamp = cloud.timestamp;
  for (const auto& p : cloud.points) {
    const double z = p.z() + band.height_offset;
    if (z >= band.z_min && z <= band.z_max) out.points.push_back(p);
  }
  return out;
}

inline PointCloud3D slice_horizontal(const PointCloud3D& cloud, double z_min, double z_max) {
  return slice_horizontal(cloud, SliceBand{z_min, z_max, 0.0});
}

inline FilteredScan2D flatten_to_polar(const PointCloud3D& cloud, std::size_t bin_count) {
  require(bin_count >= 1, "bin_count", "must be at least 1");
  FilteredScan2D scan;
  scan.timestamp = cloud.timestamp;
  scan.bins.resize(bin_count);
  for (std::size_t k = 0; k < bin_count; ++k) scan.bins[k].azimuth = bin_center(k, bin_count);
  for (const auto& p : cloud.points) {
    const double r = std::hypot(p.x(), p.y());
    auto& bin = scan.bins[bin_index(std::atan2(p.y(), p.x()), bin_count)];
    if (!bin.valid || r < bin.range) {
      bin.range = r;
      bin.valid = true;
    }
  }
  return scan;
}

inline PointSet2D scan_to_sensor(const FilteredScan2D& scan) {
  PointSet2D out;
  out.frame = Frame::kSensor;
  out.points.reserve(scan.bins.size());
  for (const auto& b : scan.bins) {
    if (b.valid) out.points.emplace_back(b.range * std::cos(b.azimuth), b.range * std::sin(b.azimuth));
  }
  return out;
}

inline PointSet2D scan_to_world(const FilteredScan2D& scan, const Pose2D& pose) {
  require(pose.finite(), "pose", "must be finite");
  PointSet2D out;
  out.frame = Frame::kWorld;
  out.points.reserve(scan.bins.size());
  for (const auto& b : scan.bins) {
    if (!b.valid) continue;
    const double a = b.azimuth + pose.theta;
    out.points.emplace_back(pose.x + b.range * std::cos(a), pose.y + b.range * std::sin(a));
  }
  return out;
}

/// Full raw-scan filter: cartesian conversion, slice, min-range binning.
inline FilteredScan2D filter_scan(const PolarScan3D& scan, const SliceBand& band, std::size_t bin_count) {
  return flatten_to_polar(slice_horizontal(spherical_to_cartesian(scan), band), bin_count);
}

/// Reads a `t,r,theta,phi` scan log one sweep at a time. A sweep ends where the timestamp changes.
class ScanLogReader {
 public:
  explicit ScanLogReader(const std::string& path, double min_range = 0.0,
                         double max_range = std::numeric_limits<double>::infinity())
      : reader_(path, {"t", "r", "theta", "phi"}), min_range_(min_range), max_range_(max_range) {
    have_pending_ = reader_.next(pending_);
  }

  std::optional<PolarScan3D> next() {
    if (!have_pending_) return std::nullopt;
    PolarScan3D scan;
    scan.timestamp = pending_[0];
    scan.min_range = min_range_;
    scan.max_range = max_range_;
    while (have_pending_ && pending_[0] == scan.timestamp) {
      append(scan, pending_);
      have_pending_ = reader_.next(pending_);
    }
    if (have_pending_ && pending_[0] < scan.timestamp) {
      throw ParseError(reader_.path(), reader_.line_number(), "timestamps must be non-decreasing");
    }
    return scan;
  }

 private:
  void append(PolarScan3D& scan, const std::vector<double>& row) {
    Beam b;
    b.azimuth = row[2];
    b.elevation = row[3];
    if (row[1] <= 0.0) {
      b.returned = false;
      b.range = max_range_;
    } else {
      b.range = row[1];
    }
    scan.beams.push_back(b);
  }

  csv::NumericReader reader_;
  std::vector<double> pending_;
  bool have_pending_ = false;
  double min_range_;
  double max_range_;
};

}  // namespace arbor_slam
