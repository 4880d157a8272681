#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "amtu/geometry.hpp"
#include "amtu/percepts.hpp"

namespace amtu::mapping {

struct PointCloud {
  std::vector<Vec3> points;
  double timestamp = 0.0;
};

enum class CellState : std::uint8_t { Unknown, Free, Occupied };

struct CellIndex {
  int x = 0;
  int y = 0;
  auto operator<=>(const CellIndex&) const = default;
};

/// Bird's-eye evidence grid. Each cell keeps saturating Free/Occupied counts;
/// its state is derived from them (Occupied at >= 2 hits, else Free at >= 2,
/// else Unknown), so the result does not depend on evidence order.
class OccupancyGrid {
 public:
  static constexpr std::uint8_t kStateThreshold = 2;

  OccupancyGrid() : OccupancyGrid(400, 400, 0.1, Vec2(-20.0, -20.0)) {}
  OccupancyGrid(int width, int height, double resolution, const Vec2& origin);
  /// Grid of the given size whose center is `center`, snapped to whole cells.
  static OccupancyGrid centered(const Vec2& center, int width = 400, int height = 400,
                                double resolution = 0.1);

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const Vec2& origin() const { return origin_; }

  bool contains(const CellIndex& c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }
  std::optional<CellIndex> cell_of(const Vec2& world) const;
  Vec2 cell_center(const CellIndex& c) const {
    return {origin_.x() + (c.x + 0.5) * resolution_, origin_.y() + (c.y + 0.5) * resolution_};
  }

  CellState state(const CellIndex& c) const { return state_of(index(c)); }
  std::uint8_t free_count(const CellIndex& c) const { return free_[index(c)]; }
  std::uint8_t occupied_count(const CellIndex& c) const { return occupied_[index(c)]; }

  void add_free(const CellIndex& c);
  void add_occupied(const CellIndex& c);
  /// Raises the occupied count to at least the state threshold.
  void force_occupied(const CellIndex& c);

  /// Scrolls the window by whole cells so `position` sits in the central cell.
  /// Evidence that leaves the window is discarded; new cells start Unknown.
  void recenter(const Vec2& position);

  std::vector<CellIndex> occupied_cells() const;
  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  std::size_t index(const CellIndex& c) const {
    return static_cast<std::size_t>(c.y) * width_ + c.x;
  }
  CellState state_of(std::size_t i) const {
    if (occupied_[i] >= kStateThreshold) return CellState::Occupied;
    if (free_[i] >= kStateThreshold) return CellState::Free;
    return CellState::Unknown;
  }

  int width_ = 0;
  int height_ = 0;
  double resolution_ = 0.1;
  Vec2 origin_ = Vec2::Zero();
  std::vector<std::uint8_t> free_;
  std::vector<std::uint8_t> occupied_;
};

struct BoundingBox3D {
  Vec3 center = Vec3::Zero();
  Vec3 extents = Vec3::Constant(0.5);  // half sizes
  double yaw = 0.0;
  int class_id = 0;
  int instance_id = 0;
};

struct WorldModel {
  OccupancyGrid grid;
  std::vector<BoundingBox3D> boxes;
  double timestamp = 0.0;

  /// Marks every box's ground footprint Occupied.
  void synchronize();
};

struct ProjectedPoint {
  std::size_t point_index = 0;
  int camera = 0;
  Vec2 pixel;
  double depth = 0.0;
};

/// Lidar points (sensor frame) into every rig camera; emitted where the
/// camera-frame depth exceeds 0.1 m and the pixel lies inside the image.
std::vector<ProjectedPoint> project_lidar_to_image(const PointCloud& cloud,
                                                   const Pose3& sensor_from_body,
                                                   const CameraRig& rig);

struct GroundProjectionParams {
  int stride = 4;
  double max_range = 20.0;
};

/// Free-space evidence from pixels of traversable classes reprojected onto the
/// ground plane. Each cell appears at most once; the grid is not modified.
std::vector<CellIndex> ground_cells_from_semantics(const percepts::SemanticMap& sem,
                                                   const std::set<int>& traversable_classes,
                                                   const CameraIntrinsics& intr,
                                                   const Pose3& world_from_camera,
                                                   const GroundPlane& plane,
                                                   const OccupancyGrid& grid,
                                                   const GroundProjectionParams& params = {});

struct BoxFitParams {
  double depth_gate = 1.5;
  std::size_t min_points = 5;
};

/// 3D boxes for the 2D instances of one camera. `projected` must contain the
/// projections for that camera; `cloud_world` holds the same points in world
/// coordinates, indexed by ProjectedPoint::point_index.
std::vector<BoundingBox3D> instance_to_3d_box(const percepts::InstanceMap& inst,
                                              std::span<const percepts::BoundingBox2D> boxes2d,
                                              std::span<const ProjectedPoint> projected,
                                              int camera, const PointCloud& cloud_world,
                                              const BoxFitParams& params = {});

struct HeightGate {
  double min_height = 0.1;
  double max_height = 2.5;
};

/// Applies free evidence and obstacle points (world frame) to the grid.
/// Evidence outside the grid is dropped.
void update_grid(OccupancyGrid& grid, std::span<const CellIndex> free_evidence,
                 std::span<const Vec3> obstacle_points, const GroundPlane& plane = {},
                 const HeightGate& gate = {});

/// Distance to the nearest Occupied cell center, capped at max_radius; 0 when
/// the position's own cell is Occupied. Unknown counts as free. Throws OutOfGrid.
double clearance_query(const OccupancyGrid& grid, const Vec2& position, double max_radius);

/// Bucketed copy of a grid's Occupied cells for repeated clearance queries
/// against one snapshot. Returns exactly what clearance_query returns.
class ClearanceIndex {
 public:
  ClearanceIndex(const OccupancyGrid& grid, double max_radius, int bucket_cells = 8);
  double query(const Vec2& position) const;
  double max_radius() const { return max_radius_; }

 private:
  const OccupancyGrid* grid_;
  double max_radius_;
  int bucket_cells_;
  int buckets_x_, buckets_y_;
  std::vector<std::vector<Vec2>> buckets_;
};

/// 8-bit PNG (0 Unknown, 128 Free, 255 Occupied; row 0 is the max-y edge) plus
/// a sidecar `<path>.txt` with origin and resolution.
void export_grid(const OccupancyGrid& grid, const std::string& png_path);

}  // namespace amtu::mapping
