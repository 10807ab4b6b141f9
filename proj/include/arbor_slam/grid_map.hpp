#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"
#include "arbor_slam/pose.hpp"
#include "arbor_slam/scan_processing.hpp"

namespace arbor_slam {

struct CellIndex {
  int i = 0;  // column, along x
  int j = 0;  // row, along y
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Grid geometry. `origin` is the world position of the outer corner of cell (0, 0).
struct GridMeta {
  double resolution = 0.05;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  int width = 0;
  int height = 0;

  [[nodiscard]] bool empty() const { return width <= 0 || height <= 0; }
  [[nodiscard]] std::size_t size() const { return empty() ? 0 : static_cast<std::size_t>(width) * height; }
  [[nodiscard]] bool contains(const CellIndex& c) const { return c.i >= 0 && c.j >= 0 && c.i < width && c.j < height; }
  [[nodiscard]] std::size_t linear(const CellIndex& c) const { return static_cast<std::size_t>(c.j) * width + c.i; }
  [[nodiscard]] Eigen::Vector2d cell_center(const CellIndex& c) const {
    return origin + resolution * Eigen::Vector2d(c.i + 0.5, c.j + 0.5);
  }
  [[nodiscard]] Eigen::Vector2d max_corner() const { return origin + resolution * Eigen::Vector2d(width, height); }
};

struct BoundingBox {
  Eigen::Vector2d min;
  Eigen::Vector2d max;

  void extend(const Eigen::Vector2d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  [[nodiscard]] BoundingBox padded(double margin) const {
    return {min - Eigen::Vector2d::Constant(margin), max + Eigen::Vector2d::Constant(margin)};
  }
  static BoundingBox around(const Eigen::Vector2d& p) { return {p, p}; }
};

/// Unbounded cell coordinate of a world point (half-open cells).
inline CellIndex cell_of(const Eigen::Vector2d& p, const GridMeta& meta) {
  const Eigen::Vector2d u = (p - meta.origin) / meta.resolution;
  return {static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y()))};
}

inline std::optional<CellIndex> world_to_cell(const Eigen::Vector2d& p, const GridMeta& meta) {
  const Eigen::Vector2d u = (p - meta.origin) / meta.resolution;
  if (!(u.x() >= 0.0 && u.y() >= 0.0 && u.x() < meta.width && u.y() < meta.height)) return std::nullopt;
  const CellIndex c{static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y()))};
  if (!meta.contains(c)) return std::nullopt;
  return c;
}

struct LogOddsParams {
  double hit = 0.85;
  double free = -0.40;
  double min = -4.0;
  double max = 4.0;
  double occ_threshold = 0.65;

  [[nodiscard]] double occupied_log_odds() const { return std::log(occ_threshold / (1.0 - occ_threshold)); }

  void validate() const {
    require(hit > 0.0, "log_odds_hit", "must be positive");
    require(free < 0.0, "log_odds_free", "must be negative");
    require(min < 0.0 && max > 0.0, "log_odds_min/max", "clamp range must straddle zero");
    require(occ_threshold >= 0.5 && occ_threshold < 1.0, "occ_threshold", "must lie in [0.5, 1)");
  }
};

inline double log_odds_to_probability(double l) { return 1.0 / (1.0 + std::exp(-l)); }

/// Log-odds occupancy grid. Unknown cells hold the prior 0.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;

  OccupancyGrid(const GridMeta& meta, const LogOddsParams& params) : meta_(meta), params_(params) {
    require(meta.resolution > 0.0, "resolution", "must be positive");
    require(meta.width >= 1 && meta.height >= 1, "grid size", "must be at least 1x1");
    params_.validate();
    cells_.assign(meta_.size(), 0.0);
    occupied_cut_ = params_.occupied_log_odds();
  }

  /// A grid with no cells yet; `ensure_capacity` sizes it on first use.
  static OccupancyGrid empty(double resolution, const LogOddsParams& params) {
    require(resolution > 0.0, "resolution", "must be positive");
    params.validate();
    OccupancyGrid g;
    g.meta_.resolution = resolution;
    g.params_ = params;
    g.occupied_cut_ = params.occupied_log_odds();
    return g;
  }

  [[nodiscard]] const GridMeta& meta() const { return meta_; }
  [[nodiscard]] const LogOddsParams& params() const { return params_; }
  [[nodiscard]] bool empty() const { return meta_.empty(); }

  [[nodiscard]] double log_odds(const CellIndex& c) const { return cells_[meta_.linear(c)]; }
  [[nodiscard]] double probability(const CellIndex& c) const { return log_odds_to_probability(log_odds(c)); }
  [[nodiscard]] bool occupied(const CellIndex& c) const { return log_odds(c) > occupied_cut_; }
  [[nodiscard]] bool free(const CellIndex& c) const { return log_odds(c) < -occupied_cut_; }

  void set_log_odds(const CellIndex& c, double value) {
    double& cell = cells_[meta_.linear(c)];
    const bool was = cell > occupied_cut_;
    cell = std::clamp(value, params_.min, params_.max);
    if (was != (cell > occupied_cut_)) ++revision_;
  }

  void add_log_odds(const CellIndex& c, double delta) { set_log_odds(c, log_odds(c) + delta); }

  /// Bumped whenever a cell crosses the occupancy threshold.
  [[nodiscard]] std::uint64_t revision() const { return revision_; }

  [[nodiscard]] const std::vector<double>& cells() const { return cells_; }

 private:
  friend void ensure_capacity(OccupancyGrid& grid, const BoundingBox& box);

  GridMeta meta_;
  LogOddsParams params_;
  std::vector<double> cells_;
  double occupied_cut_ = 0.0;
  std::uint64_t revision_ = 0;
};

/// Grows the grid so `box` fits, keeping existing cells at the same world coordinates.
inline void ensure_capacity(OccupancyGrid& grid, const BoundingBox& box) {
  require(box.min.allFinite() && box.max.allFinite(), "bounding box", "must be finite");
  constexpr double kEps = 1e-9;
  GridMeta& meta = grid.meta_;
  const double res = meta.resolution;
  if (meta.empty()) {
    meta.origin = box.min;
    meta.width = std::max(1, static_cast<int>(std::ceil((box.max.x() - box.min.x()) / res - kEps)));
    meta.height = std::max(1, static_cast<int>(std::ceil((box.max.y() - box.min.y()) / res - kEps)));
    // The max corner itself must map into the grid under the half-open rule.
    if (box.min.x() + meta.width * res <= box.max.x()) ++meta.width;
    if (box.min.y() + meta.height * res <= box.max.y()) ++meta.height;
    grid.cells_.assign(meta.size(), 0.0);
    ++grid.revision_;
    return;
  }
  const Eigen::Vector2d lo = meta.origin;
  const Eigen::Vector2d hi = meta.max_corner();
  const int grow_left = box.min.x() < lo.x() ? static_cast<int>(std::ceil((lo.x() - box.min.x()) / res - kEps)) : 0;
  const int grow_down = box.min.y() < lo.y() ? static_cast<int>(std::ceil((lo.y() - box.min.y()) / res - kEps)) : 0;
  int grow_right = box.max.x() > hi.x() ? static_cast<int>(std::ceil((box.max.x() - hi.x()) / res - kEps)) : 0;
  int grow_up = box.max.y() > hi.y() ? static_cast<int>(std::ceil((box.max.y() - hi.y()) / res - kEps)) : 0;
  if (grow_left == 0 && grow_down == 0 && grow_right == 0 && grow_up == 0) return;

  GridMeta next = meta;
  next.origin = lo - res * Eigen::Vector2d(grow_left, grow_down);
  next.width = meta.width + grow_left + grow_right;
  next.height = meta.height + grow_down + grow_up;
  std::vector<double> cells(next.size(), 0.0);
  for (int j = 0; j < meta.height; ++j) {
    for (int i = 0; i < meta.width; ++i) {
      cells[next.linear({i + grow_left, j + grow_down})] = grid.cells_[meta.linear({i, j})];
    }
  }
  meta = next;
  grid.cells_ = std::move(cells);
  ++grid.revision_;
}

/// Visits every cell the segment a->b passes through, in order, ending with the cell of b.
/// Cells are unbounded indices; the visitor returns false to stop early.
template <typename Visitor>
void walk_cells(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const GridMeta& meta, Visitor&& visit) {
  const Eigen::Vector2d ua = (a - meta.origin) / meta.resolution;
  const Eigen::Vector2d ub = (b - meta.origin) / meta.resolution;
  CellIndex cell{static_cast<int>(std::floor(ua.x())), static_cast<int>(std::floor(ua.y()))};
  const CellIndex last{static_cast<int>(std::floor(ub.x())), static_cast<int>(std::floor(ub.y()))};
  const Eigen::Vector2d d = ub - ua;
  const int step_i = d.x() > 0 ? 1 : (d.x() < 0 ? -1 : 0);
  const int step_j = d.y() > 0 ? 1 : (d.y() < 0 ? -1 : 0);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double delta_i = step_i != 0 ? std::abs(1.0 / d.x()) : kInf;
  const double delta_j = step_j != 0 ? std::abs(1.0 / d.y()) : kInf;
  double t_max_i = step_i > 0 ? (cell.i + 1 - ua.x()) / d.x() : (step_i < 0 ? (ua.x() - cell.i) / -d.x() : kInf);
  double t_max_j = step_j > 0 ? (cell.j + 1 - ua.y()) / d.y() : (step_j < 0 ? (ua.y() - cell.j) / -d.y() : kInf);
  const int max_steps = std::abs(last.i - cell.i) + std::abs(last.j - cell.j);
  for (int n = 0; n < max_steps; ++n) {
    if (!visit(cell)) return;
    if (t_max_i < t_max_j) {
      cell.i += step_i;
      t_max_i += delta_i;
    } else {
      cell.j += step_j;
      t_max_j += delta_j;
    }
  }
  // Floating round-off may leave the walk one axis short; the endpoint cell is authoritative.
  visit(last);
}

/// Integrates one filtered scan taken from `pose`: free-space along each beam, a hit at each endpoint.
/// Free updates of all beams are applied before the hits.
inline void update_occupancy(OccupancyGrid& grid, const Pose2D& pose, const FilteredScan2D& scan) {
  require(pose.finite(), "pose", "must be finite");
  const GridMeta& meta = grid.meta();
  if (!world_to_cell(pose.translation(), meta)) {
    throw Error(ErrorCode::kPoseOutOfGrid, "sensor pose lies outside the occupancy grid");
  }
  const LogOddsParams& params = grid.params();
  const PointSet2D endpoints = scan_to_world(scan, pose);
  std::vector<CellIndex> hits;
  hits.reserve(endpoints.points.size());
  for (const auto& end : endpoints.points) {
    const CellIndex end_cell = cell_of(end, meta);
    walk_cells(pose.translation(), end, meta, [&](const CellIndex& c) {
      if (c == end_cell) return false;
      if (!meta.contains(c)) return false;
      grid.add_log_odds(c, params.free);
      return true;
    });
    if (meta.contains(end_cell)) hits.push_back(end_cell);
  }
  for (const auto& c : hits) grid.add_log_odds(c, params.hit);
}

inline PointSet2D occupied_cells(const OccupancyGrid& grid) {
  PointSet2D out;
  out.frame = Frame::kWorld;
  const GridMeta& meta = grid.meta();
  for (int j = 0; j < meta.height; ++j) {
    for (int i = 0; i < meta.width; ++i) {
      if (grid.occupied({i, j})) out.points.push_back(meta.cell_center({i, j}));
    }
  }
  return out;
}

/// Euclidean distance (m) from each cell center to the nearest occupied cell center.
class DistanceField {
 public:
  DistanceField(const GridMeta& meta, std::vector<double> values) : meta_(meta), values_(std::move(values)) {}

  [[nodiscard]] const GridMeta& meta() const { return meta_; }
  [[nodiscard]] double at(const CellIndex& c) const { return values_[meta_.linear(c)]; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

  /// Bilinear interpolation between the four surrounding cell centers; points beyond the outermost
  /// centers clamp to the border.
  [[nodiscard]] double sample(const Eigen::Vector2d& p) const {
    const double u = std::clamp((p.x() - meta_.origin.x()) / meta_.resolution - 0.5, 0.0, meta_.width - 1.0);
    const double v = std::clamp((p.y() - meta_.origin.y()) / meta_.resolution - 0.5, 0.0, meta_.height - 1.0);
    const int i0 = std::min(static_cast<int>(u), meta_.width - 1);
    const int j0 = std::min(static_cast<int>(v), meta_.height - 1);
    const int i1 = std::min(i0 + 1, meta_.width - 1);
    const int j1 = std::min(j0 + 1, meta_.height - 1);
    const double fu = u - i0;
    const double fv = v - j0;
    const double* row0 = values_.data() + static_cast<std::size_t>(j0) * meta_.width;
    const double* row1 = values_.data() + static_cast<std::size_t>(j1) * meta_.width;
    const double bottom = row0[i0] + fu * (row0[i1] - row0[i0]);
    const double top = row1[i0] + fu * (row1[i1] - row1[i0]);
    return bottom + fv * (top - bottom);
  }

 private:
  GridMeta meta_;
  std::vector<double> values_;
};

namespace detail {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher). Squared distances stay integral, so the
// result is exact in double precision.
inline double intersect(const double* f, int q, int p) {
  return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
}

inline void squared_distance_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = intersect(f, q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(f, q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    out[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Exact squared distance in cell units to the nearest cell for which `is_site` holds.
template <typename SitePredicate>
std::vector<double> squared_cell_distances(const GridMeta& meta, SitePredicate&& is_site) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int w = meta.width;
  const int h = meta.height;
  std::vector<double> grid(meta.size(), kInf);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i)
      if (is_site(CellIndex{i, j})) grid[meta.linear({i, j})] = 0.0;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> f(std::max(w, h));
  std::vector<double> out(std::max(w, h));
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < h; ++j) f[j] = grid[static_cast<std::size_t>(j) * w + i];
    detail::squared_distance_1d(f.data(), out.data(), h, v, z);
    for (int j = 0; j < h; ++j) grid[static_cast<std::size_t>(j) * w + i] = out[j];
  }
  for (int j = 0; j < h; ++j) {
    double* row = grid.data() + static_cast<std::size_t>(j) * w;
    std::copy(row, row + w, f.begin());
    detail::squared_distance_1d(f.data(), row, w, v, z);
  }
  return grid;
}

inline DistanceField distance_transform(const OccupancyGrid& grid) {
  const GridMeta& meta = grid.meta();
  bool any = false;
  std::vector<double> d2 = squared_cell_distances(meta, [&](const CellIndex& c) {
    const bool occ = grid.occupied(c);
    any = any || occ;
    return occ;
  });
  if (!any) {
    throw Error(ErrorCode::kNoOccupiedCells, "distance transform requested for a map with no occupied cells");
  }
  for (double& d : d2) d = std::sqrt(d) * meta.resolution;
  return DistanceField(meta, std::move(d2));
}

// ---------------------------------------------------------------------------------------------------------------
// PGM export / import

inline constexpr std::uint8_t kPgmOccupied = 0;
inline constexpr std::uint8_t kPgmFree = 255;
inline constexpr std::uint8_t kPgmUnknown = 127;

/// Writes `<stem>.pgm` (P5, top image row = highest y) and `<stem>.pgm.txt` with the geometry.
inline void write_pgm(const OccupancyGrid& grid, const std::string& pgm_path) {
  const GridMeta& meta = grid.meta();
  require(!meta.empty(), "map", "cannot export an empty grid");
  std::ofstream out(pgm_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, pgm_path + ": cannot open for writing");
  out << "P5\n" << meta.width << " " << meta.height << "\n255\n";
  std::vector<char> row(meta.width);
  for (int j = meta.height - 1; j >= 0; --j) {
    for (int i = 0; i < meta.width; ++i) {
      const CellIndex c{i, j};
      row[i] = static_cast<char>(grid.occupied(c) ? kPgmOccupied : (grid.free(c) ? kPgmFree : kPgmUnknown));
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  std::ofstream side(pgm_path + ".txt");
  if (!side) throw Error(ErrorCode::kIo, pgm_path + ".txt: cannot open for writing");
  side << "resolution = " << csv::format(meta.resolution) << "\n"
       << "origin_x = " << csv::format(meta.origin.x()) << "\n"
       << "origin_y = " << csv::format(meta.origin.y()) << "\n";
}

/// Reads a map written by `write_pgm`. Occupied pixels load as saturated hits, free pixels as saturated misses.
inline OccupancyGrid read_pgm(const std::string& pgm_path, const LogOddsParams& params = {}) {
  std::ifstream side(pgm_path + ".txt");
  if (!side) throw Error(ErrorCode::kIo, pgm_path + ".txt: cannot open sidecar");
  GridMeta meta;
  bool have_res = false, have_x = false, have_y = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(side, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(pgm_path + ".txt", line_no, "expected 'key = value'");
    const std::string key{csv::trim(std::string_view(line).substr(0, eq))};
    double value = 0.0;
    if (!csv::parse_double(std::string_view(line).substr(eq + 1), value)) {
      throw ParseError(pgm_path + ".txt", line_no, "non-numeric value for " + key);
    }
    if (key == "resolution") {
      meta.resolution = value;
      have_res = true;
    } else if (key == "origin_x") {
      meta.origin.x() = value;
      have_x = true;
    } else if (key == "origin_y") {
      meta.origin.y() = value;
      have_y = true;
    } else {
      throw ParseError(pgm_path + ".txt", line_no, "unknown key '" + key + "'");
    }
  }
  if (!(have_res && have_x && have_y)) throw ParseError(pgm_path + ".txt", 0, "missing resolution/origin_x/origin_y");

  std::ifstream in(pgm_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, pgm_path + ": cannot open for reading");
  std::string magic;
  int maxval = 0;
  in >> magic >> meta.width >> meta.height >> maxval;
  if (magic != "P5" || !in || meta.width < 1 || meta.height < 1 || maxval != 255) {
    throw ParseError(pgm_path, 0, "not an 8-bit binary PGM (P5)");
  }
  in.get();
  OccupancyGrid grid(meta, params);
  std::vector<char> row(meta.width);
  for (int j = meta.height - 1; j >= 0; --j) {
    if (!in.read(row.data(), meta.width)) throw ParseError(pgm_path, 0, "truncated pixel data");
    for (int i = 0; i < meta.width; ++i) {
      const auto px = static_cast<std::uint8_t>(row[i]);
      if (px == kPgmOccupied) {
        grid.set_log_odds({i, j}, params.max);
      } else if (px == kPgmFree) {
        grid.set_log_odds({i, j}, params.min);
      }
    }
  }
  return grid;
}

}  // namespace arbor_slam
